"""Epsilon-insensitive SVR: SMO dual solver, prediction and weight pruning.

The dual is solved in the stacked form used by LIBSVM: ``z = [alpha; beta]``
with labels ``s = [+1; -1]``, ``Q_tu = s_t s_u K(t mod n, u mod n)`` and
linear term ``p = [eps - y; eps + y]``, subject to ``0 <= z <= C`` and
``s.z = 0``.  Working pairs are picked with second-order information.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from numba import njit

from .kernel_density import KernelParams, kernel_matrix, kernel_row

DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100_000
ZERO_WEIGHT = 1e-12
_TAU = 1e-12

# Callables ``f(solution, hp)`` run after every solve (instrumentation, e.g. invariant checks).
SOLVE_OBSERVERS: list = []


class Sample(NamedTuple):
    x: np.ndarray
    y: float
    t_s: float


@dataclass(frozen=True)
class Hyperparams:
    """Tuning record for one output dimension."""

    epsilon: float = 0.01
    cost: float = 10.0
    gamma: float = 20.0
    buffer_size: int = 900
    k: float = 10.0
    a: float = 0.99
    b: float = 1e-2
    xi: float = 0.99
    kde_scale: float = 0.5

    def __post_init__(self):
        checks = {
            "epsilon >= 0": self.epsilon >= 0,
            "cost > 0": self.cost > 0,
            "gamma > 0": self.gamma > 0,
            "buffer_size >= 1": self.buffer_size >= 1,
            "k >= 0": self.k >= 0,
            "0 < a < 1": 0 < self.a < 1,
            "b > 0": self.b > 0,
            "0 < xi < 1": 0 < self.xi < 1,
            "kde_scale > 0": self.kde_scale > 0,
        }
        bad = [name for name, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid hyperparameters: {', '.join(bad)}")
        object.__setattr__(self, "buffer_size", int(self.buffer_size))


# Values tuned on the real vehicle, kept as a reference point for grids.
TABLE1 = {
    "surge": Hyperparams(epsilon=0.1, cost=10, gamma=100, buffer_size=900, k=10, a=0.99, b=1e-2, xi=0.99),
    "sway": Hyperparams(epsilon=0.001, cost=10, gamma=40, buffer_size=900, k=10, a=0.99, b=1e-2, xi=0.99),
    "yaw": Hyperparams(epsilon=0.1, cost=10, gamma=20, buffer_size=900, k=1, a=0.99, b=1e-2, xi=0.99),
}


@dataclass
class SvrSolution:
    alphas: np.ndarray
    betas: np.ndarray
    bias: float
    objective: float
    iterations: int
    converged: bool = True
    max_violation: float = 0.0

    @property
    def weights(self) -> np.ndarray:
        return self.alphas - self.betas

    @classmethod
    def from_weights(cls, weights, bias: float = 0.0) -> "SvrSolution":
        w = np.asarray(weights, dtype=float)
        return cls(np.maximum(w, 0.0), np.maximum(-w, 0.0), float(bias), np.nan, 0)

    def check_feasible(self, cost: float) -> None:
        """Raise AssertionError if a dual feasibility invariant is broken."""
        a, b = self.alphas, self.betas
        assert np.all(a >= 0) and np.all(a <= cost), "alpha outside [0, C]"
        assert np.all(b >= 0) and np.all(b <= cost), "beta outside [0, C]"
        assert np.all(a * b <= 1e-10 * cost * cost), "alpha and beta both active"
        assert abs(np.sum(a - b)) <= cost * 1e-8, "sum(alpha - beta) != 0"


@dataclass
class SupportSet:
    """Buffer of samples with their dual weights; the model of one DOF."""

    X: np.ndarray
    y: np.ndarray
    t_s: np.ndarray
    weights: np.ndarray
    bias: float
    kernel: KernelParams
    capacity: int = 900
    gram: np.ndarray | None = field(default=None, repr=False, compare=False)

    @classmethod
    def empty(cls, kernel: KernelParams, capacity: int = 900, bias: float = 0.0) -> "SupportSet":
        d = kernel.dim
        return cls(np.empty((0, d)), np.empty(0), np.empty(0), np.empty(0), bias, kernel, capacity,
                   np.empty((0, 0)))

    def __len__(self) -> int:
        return self.y.shape[0]

    @property
    def samples(self) -> list[Sample]:
        return [Sample(self.X[i].copy(), float(self.y[i]), float(self.t_s[i])) for i in range(len(self))]

    def get_gram(self) -> np.ndarray:
        if self.gram is None or self.gram.shape[0] != len(self):
            self.gram = kernel_matrix(self.X, self.X, self.kernel)
        return self.gram

    def subset(self, keep) -> "SupportSet":
        """Copy restricted to rows ``keep`` (boolean mask or index array)."""
        keep = np.asarray(keep)
        if keep.dtype == bool:
            keep = np.flatnonzero(keep)
        gram = None if self.gram is None else self.gram[np.ix_(keep, keep)]
        return replace(self, X=self.X[keep], y=self.y[keep], t_s=self.t_s[keep],
                       weights=self.weights[keep], gram=gram)

    def append(self, x, y: float, t_s: float, krow: np.ndarray | None = None) -> "SupportSet":
        """Copy with one sample added at zero weight; ``krow`` extends the Gram cache."""
        x = np.asarray(x, dtype=float)
        n = len(self)
        gram = None
        if self.gram is not None and self.gram.shape[0] == n:
            if krow is None:
                krow = kernel_row(x, self.X, self.kernel)
            gram = np.empty((n + 1, n + 1))
            gram[:n, :n] = self.gram
            gram[n, :n] = krow
            gram[:n, n] = krow
            gram[n, n] = 1.0
        return replace(self, X=np.vstack([self.X, x[None, :]]), y=np.append(self.y, float(y)),
                       t_s=np.append(self.t_s, float(t_s)), weights=np.append(self.weights, 0.0),
                       gram=gram)


def _unpack(samples) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(samples, tuple) and len(samples) == 2 and not isinstance(samples[0], Sample):
        X, y = samples
        return np.atleast_2d(np.asarray(X, dtype=float)), np.asarray(y, dtype=float).ravel()
    X = np.array([s.x for s in samples], dtype=float)
    y = np.array([s.y for s in samples], dtype=float)
    return X, y


@njit(cache=True)
def _smo_loop(K, eps, C, a, b, Ga, Gb, tol, max_iter):
    # a, b: alpha/beta multipliers; Ga, Gb: their objective gradients.
    # Stacked index t < n is alpha_t (label +1), t >= n is beta_{t-n} (label -1).
    n = a.shape[0]
    it = 0
    gap = 0.0
    while True:
        gmax = -np.inf
        i = -1
        for q in range(n):
            if a[q] < C and -Ga[q] >= gmax:
                gmax = -Ga[q]
                i = q
            if b[q] > 0.0 and Gb[q] >= gmax:
                gmax = Gb[q]
                i = q + n
        gmax2 = -np.inf
        j = -1
        best = np.inf
        if i >= 0:
            si = 1.0 if i < n else -1.0
            ii = i if i < n else i - n
            for q in range(n):
                kiq = si * K[ii, q]
                if a[q] > 0.0:
                    if Ga[q] >= gmax2:
                        gmax2 = Ga[q]
                    diff = gmax + Ga[q]
                    if diff > 0.0:
                        quad = 2.0 - 2.0 * kiq
                        if quad <= 0.0:
                            quad = _TAU
                        obj = -(diff * diff) / quad
                        if obj <= best:
                            best = obj
                            j = q
                if b[q] < C:
                    if -Gb[q] >= gmax2:
                        gmax2 = -Gb[q]
                    diff = gmax - Gb[q]
                    if diff > 0.0:
                        quad = 2.0 + 2.0 * kiq
                        if quad <= 0.0:
                            quad = _TAU
                        obj = -(diff * diff) / quad
                        if obj <= best:
                            best = obj
                            j = q + n
        gap = gmax + gmax2
        if i < 0 or j < 0 or gap < tol:
            return it, True, max(gap, 0.0)
        if it >= max_iter:
            return it, False, gap
        it += 1

        si = 1.0 if i < n else -1.0
        sj = 1.0 if j < n else -1.0
        ii = i if i < n else i - n
        jj = j if j < n else j - n
        zi = a[ii] if i < n else b[ii]
        zj = a[jj] if j < n else b[jj]
        Gi = Ga[ii] if i < n else Gb[ii]
        Gj = Ga[jj] if j < n else Gb[jj]
        old_i = zi
        old_j = zj
        qij = si * sj * K[ii, jj]
        if si != sj:
            quad = 2.0 + 2.0 * qij
            if quad <= 0.0:
                quad = _TAU
            delta = (-Gi - Gj) / quad
            diff = zi - zj
            zi += delta
            zj += delta
            if diff > 0.0:
                if zj < 0.0:
                    zj = 0.0
                    zi = diff
            else:
                if zi < 0.0:
                    zi = 0.0
                    zj = -diff
            if diff > 0.0:
                if zi > C:
                    zi = C
                    zj = C - diff
            else:
                if zj > C:
                    zj = C
                    zi = C + diff
        else:
            quad = 2.0 - 2.0 * qij
            if quad <= 0.0:
                quad = _TAU
            delta = (Gi - Gj) / quad
            total = zi + zj
            zi -= delta
            zj += delta
            if total > C:
                if zi > C:
                    zi = C
                    zj = total - C
            else:
                if zj < 0.0:
                    zj = 0.0
                    zi = total
            if total > C:
                if zj > C:
                    zj = C
                    zi = total - C
            else:
                if zi < 0.0:
                    zi = 0.0
                    zj = total
        if i < n:
            a[ii] = zi
        else:
            b[ii] = zi
        if j < n:
            a[jj] = zj
        else:
            b[jj] = zj
        # change in w = a - b, pushed through the kernel
        dwi = si * (zi - old_i)
        dwj = sj * (zj - old_j)
        for q in range(n):
            d = K[ii, q] * dwi + K[jj, q] * dwj
            Ga[q] += d
            Gb[q] -= d


def dual_objective(K: np.ndarray, y: np.ndarray, eps: float, alphas, betas) -> float:
    w = alphas - betas
    return float(0.5 * w @ (K @ w) + eps * np.sum(alphas + betas) - y @ w)


def _repair_equality(w: np.ndarray, C: float, order: np.ndarray) -> np.ndarray:
    """Shift weights (in ``order`` of preference) until ``sum(w) == 0`` within the box."""
    w = np.clip(w, -C, C)
    excess = float(w.sum())
    for i in order:
        if abs(excess) <= 1e-14 * max(1.0, C):
            break
        if excess > 0:
            step = min(excess, w[i] + C)
        else:
            step = max(excess, w[i] - C)
        w[i] -= step
        excess -= step
    return w


def _bias_from_kkt(Kw: np.ndarray, y: np.ndarray, eps: float, C: float,
                   alphas: np.ndarray, betas: np.ndarray) -> float:
    tolb = 1e-12 * max(1.0, C)
    if np.all(alphas <= tolb) and np.all(betas <= tolb):
        ybar = float(np.mean(y))
        lo, hi = float(np.max(y) - eps), float(np.min(y) + eps)
        return float(np.clip(ybar, lo, hi)) if lo <= hi else ybar
    resid = y - Kw
    free_a = (alphas > tolb) & (alphas < C - tolb)
    free_b = (betas > tolb) & (betas < C - tolb)
    if free_a.any() or free_b.any():
        vals = np.concatenate([resid[free_a] - eps, resid[free_b] + eps])
        return float(np.mean(vals))
    # No free multiplier: midpoint of the feasible KKT interval.
    lower = np.concatenate([resid[alphas <= tolb] - eps, resid[betas >= C - tolb] + eps])
    upper = np.concatenate([resid[alphas >= C - tolb] - eps, resid[betas <= tolb] + eps])
    lo = float(lower.max()) if lower.size else -np.inf
    hi = float(upper.min()) if upper.size else np.inf
    if np.isfinite(lo) and np.isfinite(hi):
        return 0.5 * (lo + hi)
    return lo if np.isfinite(lo) else hi


def solve_dual(samples, hp: Hyperparams, kernel: KernelParams,
               warm_start: SvrSolution | None = None, *, gram: np.ndarray | None = None,
               tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER) -> SvrSolution:
    """Solve the epsilon-SVR dual by SMO.

    Parameters
    ----------
    samples : list of Sample, or ``(X, y)`` tuple
    hp : Hyperparams
        Only ``epsilon``, ``cost`` are read here; ``kernel`` carries ``gamma``.
    kernel : KernelParams
    warm_start : SvrSolution, optional
        Multipliers for a prefix of ``samples``; the remaining samples start
        at zero.  An infeasible start (``sum(alpha - beta) != 0`` after
        deletions) is repaired by shifting weight onto the newest samples
        first.
    gram : ndarray, optional
        Precomputed kernel matrix over ``samples``; a larger array is
        accepted and only its leading ``n x n`` block is read.
    tol, max_iter
        KKT gap tolerance and cap on pair updates.  Hitting the cap returns
        the current iterate with ``converged=False``.
    """
    X, y = _unpack(samples)
    n = y.shape[0]
    if n < 1:
        raise ValueError("solve_dual needs at least one sample")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    C, eps = float(hp.cost), float(hp.epsilon)
    K = kernel_matrix(X, X, kernel) if gram is None else np.asarray(gram, dtype=float)
    if K.ndim != 2 or K.shape[0] < n or K.shape[1] < n:
        raise ValueError(f"gram has shape {K.shape}, expected at least {(n, n)}")
    Kn = K[:n, :n]

    w0 = np.zeros(n)
    if warm_start is not None:
        prev = warm_start.weights
        if prev.shape[0] > n:
            raise ValueError("warm start is longer than the sample set")
        w0[:prev.shape[0]] = prev
        w0 = _repair_equality(w0, C, np.arange(n)[::-1])
    a = np.maximum(w0, 0.0)
    b = np.maximum(-w0, 0.0)
    Kw = Kn @ w0
    Ga = Kw + eps - y
    Gb = -Kw + eps + y

    iters, converged, gap = _smo_loop(K, eps, C, a, b, Ga, Gb, float(tol), int(max_iter))
    w = a - b
    # Cancel any simultaneous alpha/beta activity: same w, lower objective.
    alphas = np.clip(np.maximum(w, 0.0), 0.0, C)
    betas = np.clip(np.maximum(-w, 0.0), 0.0, C)
    Kw = Kn @ (alphas - betas)
    bias = _bias_from_kkt(Kw, y, eps, C, alphas, betas)
    obj = float(0.5 * (alphas - betas) @ Kw + eps * np.sum(alphas + betas) - y @ (alphas - betas))
    sol = SvrSolution(alphas, betas, bias, obj, int(iters), bool(converged), float(gap))
    for observer in SOLVE_OBSERVERS:
        observer(sol, hp)
    return sol


def predict(model: SupportSet, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.kernel.dim:
        raise ValueError(f"query has shape {x.shape}, expected ({model.kernel.dim},)")
    if len(model) == 0:
        return float(model.bias)
    return float(kernel_row(x, model.X, model.kernel) @ model.weights + model.bias)


def predict_many(model: SupportSet, Xq) -> np.ndarray:
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if len(model) == 0:
        return np.full(Xq.shape[0], float(model.bias))
    return kernel_matrix(Xq, model.X, model.kernel) @ model.weights + model.bias


def fitted_values(model: SupportSet) -> np.ndarray:
    """Predictions at the buffered inputs, using the cached Gram matrix."""
    if len(model) == 0:
        return np.empty(0)
    return model.get_gram() @ model.weights + model.bias


def prune_weights(model: SupportSet, hp: Hyperparams | None = None) -> SupportSet:
    """Drop samples whose weight is (numerically) zero; they are not support vectors."""
    return model.subset(np.abs(model.weights) > ZERO_WEIGHT)


def with_solution(model: SupportSet, sol: SvrSolution) -> SupportSet:
    return replace(model, weights=sol.weights.copy(), bias=sol.bias)


def fit_batch(X, y, hp: Hyperparams, kernel: KernelParams, *, tol: float = DEFAULT_TOL,
              max_iter: int = DEFAULT_MAX_ITER) -> tuple[SupportSet, SvrSolution]:
    """One cold solve over a whole block, returned as a pruned SupportSet."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    K = kernel_matrix(X, X, kernel)
    sol = solve_dual((X, y), hp, kernel, gram=K, tol=tol, max_iter=max_iter)
    model = SupportSet(X, y, np.zeros(len(y)), sol.weights, sol.bias, kernel, max(len(y), 1), K)
    del K
    return prune_weights(model), sol


def as_samples(X, y, t_s: Sequence[float] | None = None) -> list[Sample]:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t_s = np.zeros(len(X)) if t_s is None else t_s
    return [Sample(X[i], float(y[i]), float(t_s[i])) for i in range(len(X))]
