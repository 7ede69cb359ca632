"""Print per-segment statistics of one or more trace files.

    python scripts/summarize_traces.py runs/default/trace_kde.csv runs/default/trace_fifo.csv
"""

import sys

import numpy as np

from auvsvr.evaluation import read_trace


def summarize(path: str) -> None:
    arr = read_trace(path)
    steps, cfg, r2m = arr[:, 0], arr[:, 2].astype(int), arr[:, 6]
    print(path)
    print(f"  {'config':>6s} {'rows':>6s} {'first':>8s} {'min':>8s} {'final3 mean':>12s} {'final3 std':>11s}"
          f" {'last10%':>8s}")
    for lab in np.unique(cfg):
        sel = cfg == lab
        s, r = steps[sel], r2m[sel]
        lo, hi = s.min(), s.max()
        third = r[s >= lo + 2 / 3 * (hi - lo)]
        tail = r[s >= lo + 0.9 * (hi - lo)]
        print(f"  {lab:>6d} {sel.sum():>6d} {r[0]:>8.3f} {r.min():>8.3f} {third.mean():>12.4f} "
              f"{third.std():>11.4f} {tail.mean():>8.4f}")


if __name__ == "__main__":
    if len(sys.argv) < 2:
        sys.exit(__doc__)
    for p in sys.argv[1:]:
        summarize(p)
