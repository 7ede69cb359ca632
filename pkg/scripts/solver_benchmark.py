"""Time cold vs warm-started SMO solves on growing buffers of simulated data.

    python scripts/solver_benchmark.py [n_max]
"""

import sys
import time

import numpy as np

from auvsvr.auv_dynamics import default_dataset
from auvsvr.evaluation import calibrate_kernel
from auvsvr.kernel_density import kernel_matrix
from auvsvr.svr_core import Hyperparams, solve_dual


def main(n_max: int = 900) -> None:
    ds = default_dataset(seed=0, duration=max(n_max, 100))
    ds = ds.subset(ds.config == 1)
    kp = calibrate_kernel(ds, 1.0)
    hp = Hyperparams(epsilon=0.001, cost=10.0, gamma=1.0)
    print(f"{'n':>6s} {'cold s':>8s} {'cold it':>9s} {'warm s':>8s} {'warm it':>8s}")
    for n in (100, 200, 400, n_max):
        X, y = ds.X[:n], ds.Y[:n, 1]
        K = kernel_matrix(X, X, kp)
        t0 = time.perf_counter()
        prev = solve_dual((X[:-1], y[:-1]), hp, kp, gram=K, max_iter=10**7)
        t1 = time.perf_counter()
        warm = solve_dual((X, y), hp, kp, prev, gram=K, max_iter=10**7)
        t2 = time.perf_counter()
        print(f"{n:>6d} {t1 - t0:>8.3f} {prev.iterations:>9d} {t2 - t1:>8.4f} {warm.iterations:>8d}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 900)
