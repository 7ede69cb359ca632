"""Online learning pipeline: inclusion gate, training, outlier rejection, forgetting.

One :class:`OnlineLearner` owns the support-vector buffer of a single output
dimension.  :meth:`OnlineLearner.step` runs the five nodes in order for one
incoming sample; :func:`multi_dof_step` drives one learner per DOF.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Literal, NamedTuple

import numpy as np

from numba import njit

from .kernel_density import (BandwidthMatrix, KernelParams, fit_bandwidth, kde_matrix, kernel_matrix,
                             kernel_row)
from .svr_core import (DEFAULT_MAX_ITER, DEFAULT_TOL, Hyperparams, Sample, SupportSet, SvrSolution,
                       ZERO_WEIGHT, fitted_values, predict, predict_many, solve_dual)

Strategy = Literal["kde", "fifo"]
STRATEGIES = ("kde", "fifo")
CHECKPOINT_FORMAT = "auvsvr-checkpoint/1"
MIN_OUTLIER_SET = 4
BANDWIDTH_REFIT_EVERY = 50


class ForgettingScore(NamedTuple):
    sample_index: int
    density: float
    phi: float


@dataclass
class PipelineReport:
    admitted: bool
    trained: bool
    outliers_removed: int
    forgotten: int
    buffer_size_after: int
    solver_iterations: int
    converged: bool = True
    # outlier fence of this step and the fence-time residuals of the samples kept
    fence: tuple[float, float] | None = None
    kept_residuals: np.ndarray | None = field(default=None, repr=False)


def include_gate(candidate: Sample, model: SupportSet, hp: Hyperparams,
                 krow: np.ndarray | None = None) -> bool:
    """True to admit ``candidate``; False when an SV makes it redundant."""
    if len(model) == 0:
        return True
    if krow is None:
        krow = kernel_row(candidate.x, model.X, model.kernel)
    near_xi = krow > hp.xi
    if near_xi.any():
        f = float(krow @ model.weights + model.bias)
        if abs(f - candidate.y) < hp.epsilon:
            return False
    near_a = krow > hp.a
    if near_a.any() and np.any(np.abs(candidate.y - model.y[near_a]) < hp.b):
        return False
    return True


def iqr_fence(residuals) -> tuple[float, float]:
    """``[q1 - 1.5 IQR, q3 + 1.5 IQR]`` with linear interpolation at (n-1)p."""
    q1, q3 = np.quantile(np.asarray(residuals, dtype=float), [0.25, 0.75], method="linear")
    iqr = q3 - q1
    return float(q1 - 1.5 * iqr), float(q3 + 1.5 * iqr)


def outlier_mask(model: SupportSet) -> np.ndarray:
    """Boolean mask of SVs whose residual lies inside the IQR fence."""
    if len(model) < MIN_OUTLIER_SET:
        return np.ones(len(model), dtype=bool)
    res = fitted_values(model) - model.y
    lo, hi = iqr_fence(res)
    return (res >= lo) & (res <= hi)


def reject_outliers(model: SupportSet) -> tuple[SupportSet, list[Sample]]:
    keep = outlier_mask(model)
    if keep.all():
        return model, []
    removed = [Sample(model.X[i].copy(), float(model.y[i]), float(model.t_s[i]))
               for i in np.flatnonzero(~keep)]
    return model.subset(keep), removed


def forgetting_scores(model: SupportSet, hp: Hyperparams, H: BandwidthMatrix) -> list[ForgettingScore]:
    dens = kde_matrix(model.X, model.X, H).mean(axis=1) / H.det_value
    with np.errstate(divide="ignore"):
        phi = dens / (np.sqrt(model.t_s) + hp.k)
    return [ForgettingScore(i, float(d), float(p)) for i, (d, p) in enumerate(zip(dens, phi))]


def forget_mask(model: SupportSet, hp: Hyperparams, H: BandwidthMatrix,
                kde: np.ndarray | None = None, alive: np.ndarray | None = None) -> np.ndarray:
    """Survivor mask after removing the highest-score sample down to capacity.

    Densities are rescored after every single removal; ties go to the lower
    buffer index.  ``kde`` optionally supplies the unnormalised pairwise
    density terms over ``model.X``; ``alive`` restricts the buffer to a subset
    of rows before forgetting starts.
    """
    n = len(model)
    alive = np.ones(n, dtype=bool) if alive is None else alive.copy()
    remaining = int(np.count_nonzero(alive))
    if remaining <= hp.buffer_size:
        return alive
    if kde is None:
        kde = kde_matrix(model.X, model.X, H)
    sums = kde @ alive.astype(float)
    age_term = np.sqrt(model.t_s) + hp.k
    for remaining in range(remaining, hp.buffer_size, -1):
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = (sums / remaining / H.det_value) / age_term
        phi[~alive] = -np.inf
        worst = int(np.argmax(phi))
        alive[worst] = False
        sums -= kde[:, worst]
    return alive


def forget(model: SupportSet, hp: Hyperparams, H: BandwidthMatrix) -> SupportSet:
    keep = forget_mask(model, hp, H)
    return model if keep.all() else model.subset(keep)


def fifo_mask(model: SupportSet, hp: Hyperparams, alive: np.ndarray | None = None) -> np.ndarray:
    n = len(model)
    alive = np.ones(n, dtype=bool) if alive is None else alive.copy()
    excess = int(np.count_nonzero(alive)) - hp.buffer_size
    if excess > 0:
        idx = np.flatnonzero(alive)
        alive[idx[np.argsort(model.t_s[idx], kind="stable")[:excess]]] = False
    return alive


def fifo_forget(model: SupportSet, hp: Hyperparams) -> SupportSet:
    """Drop the oldest samples (lower index first on ties) down to capacity."""
    keep = fifo_mask(model, hp)
    return model if keep.all() else model.subset(keep)


@njit(cache=True)
def _compact_square(M, idx):
    # in place: idx is increasing, so every source row/col is read before it is overwritten
    m = idx.shape[0]
    for r in range(m):
        src = idx[r]
        for c in range(m):
            M[r, c] = M[src, idx[c]]


class _Store:
    """Preallocated buffer arrays with Gram and density caches, compacted in place."""

    def __init__(self, dim: int, size: int):
        self.n = 0
        self.X = np.empty((size, dim))
        self.y = np.empty(size)
        self.t_s = np.empty(size)
        self.w = np.empty(size)
        self.K = np.empty((size, size))
        self.D = np.empty((size, size))
        self.d_valid = False

    def _grow(self) -> None:
        size = 2 * self.X.shape[0]
        old = self.n
        X, y, t, w, K, D = self.X, self.y, self.t_s, self.w, self.K, self.D
        self.__init__(X.shape[1], size)
        self.n = old
        self.X[:old], self.y[:old], self.t_s[:old], self.w[:old] = X[:old], y[:old], t[:old], w[:old]
        self.K[:old, :old] = K[:old, :old]
        self.D[:old, :old] = D[:old, :old]

    def append(self, x, y, t_s, krow, drow=None) -> None:
        if self.n == self.X.shape[0]:
            self._grow()
        n = self.n
        self.X[n], self.y[n], self.t_s[n], self.w[n] = x, y, t_s, 0.0
        self.K[n, :n] = krow
        self.K[:n, n] = krow
        self.K[n, n] = 1.0
        if self.d_valid and drow is not None:
            self.D[n, :n] = drow[:n]
            self.D[:n, n] = drow[:n]
            self.D[n, n] = 1.0
        else:
            self.d_valid = False
        self.n = n + 1

    def compact(self, keep: np.ndarray) -> None:
        idx = np.flatnonzero(keep) if keep.dtype == bool else keep
        m = idx.shape[0]
        if m == self.n:
            return
        for arr in (self.X, self.y, self.t_s, self.w):
            arr[:m] = arr[idx]
        _compact_square(self.K, idx)
        if self.d_valid:
            _compact_square(self.D, idx)
        self.n = m


class OnlineLearner:
    """Single-DOF incremental SVR with gating, outlier rejection and forgetting.

    ``model`` is a view into the learner's storage and is only valid until
    the next :meth:`step`; use :meth:`snapshot` for a detached copy.
    """

    def __init__(self, hp: Hyperparams, kernel: KernelParams, strategy: Strategy = "kde",
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER):
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        if kernel.gamma != hp.gamma:
            kernel = kernel.with_gamma(hp.gamma)
        self.hp = hp
        self.kernel = kernel
        self.strategy = strategy
        self.tol = tol
        self.max_iter = max_iter
        self.bias = 0.0
        self.bandwidth: BandwidthMatrix | None = None
        self.steps = 0
        self._last_refit = -1
        self._store = _Store(kernel.dim, hp.buffer_size + 2)

    def __len__(self) -> int:
        return self._store.n

    @property
    def model(self) -> SupportSet:
        st, n = self._store, self._store.n
        return SupportSet(st.X[:n], st.y[:n], st.t_s[:n], st.w[:n], self.bias, self.kernel,
                          self.hp.buffer_size, st.K[:n, :n])

    def snapshot(self) -> SupportSet:
        m = self.model
        return replace(m, X=m.X.copy(), y=m.y.copy(), t_s=m.t_s.copy(), weights=m.weights.copy(),
                       gram=m.gram.copy())

    def predict(self, x) -> float:
        return predict(self.model, x)

    def predict_many(self, X) -> np.ndarray:
        return predict_many(self.model, X)

    def _refit_due(self) -> bool:
        return self.bandwidth is None or self.steps - self._last_refit >= BANDWIDTH_REFIT_EVERY

    def step(self, sample: Sample) -> PipelineReport:
        """Run gate, collector, training, outlier rejection and forgetting for one sample."""
        self.steps += 1
        hp, st = self.hp, self._store
        x = np.asarray(sample.x, dtype=float)
        model = self.model
        krow = kernel_row(x, model.X, self.kernel) if st.n else np.empty(0)
        if not include_gate(sample, model, hp, krow):
            return PipelineReport(False, False, 0, 0, st.n, 0, True)

        drow = None
        if st.d_valid and self.bandwidth is not None:
            drow = kde_matrix(x[None, :], model.X, self.bandwidth)[0]
        st.append(x, sample.y, sample.t_s, krow, drow)
        n = st.n
        K = st.K[:n, :n]

        warm = SvrSolution.from_weights(st.w[:n], self.bias)
        sol = solve_dual((st.X[:n], st.y[:n]), hp, self.kernel, warm, gram=st.K,
                         tol=self.tol, max_iter=self.max_iter)
        st.w[:n] = sol.weights
        self.bias = sol.bias

        support = np.abs(st.w[:n]) > ZERO_WEIGHT
        if not support.any():
            # an all-zero solution would empty the buffer for good; hold the newest sample
            support[-1] = True
        n_support = int(np.count_nonzero(support))

        # zero-weight rows add nothing to fitted values, so the full Gram is fine here
        keep = support
        fence, res = None, None
        if n_support >= MIN_OUTLIER_SET:
            res = K @ st.w[:n] + self.bias - st.y[:n]
            fence = iqr_fence(res[support])
            keep = support & (res >= fence[0]) & (res <= fence[1])
        pre = int(np.count_nonzero(keep))
        outliers = n_support - pre

        if self._refit_due() and pre >= 2:
            self.bandwidth = fit_bandwidth(st.X[:n][keep], hp.kde_scale)
            self._last_refit = self.steps
            st.d_valid = False
        if pre > hp.buffer_size:
            view = self.model
            if self.strategy == "kde":
                if not st.d_valid:
                    st.D[:n, :n] = kde_matrix(view.X, view.X, self.bandwidth)
                    st.d_valid = True
                keep = forget_mask(view, hp, self.bandwidth, st.D[:n, :n], keep)
            else:
                keep = fifo_mask(view, hp, keep)
        kept_res = None if res is None else res[keep]
        st.compact(keep)
        iterations, converged = sol.iterations, sol.converged
        if st.n < n_support:
            # dropping weighted samples leaves the remaining weights off-optimum (and
            # they may cancel badly), so refit on what is kept before predicting again
            sol = solve_dual((st.X[:st.n], st.y[:st.n]), hp, self.kernel,
                             SvrSolution.from_weights(st.w[:st.n], self.bias), gram=st.K,
                             tol=self.tol, max_iter=self.max_iter)
            st.w[:st.n] = sol.weights
            self.bias = sol.bias
            iterations += sol.iterations
            converged = converged and sol.converged
        return PipelineReport(True, True, outliers, pre - st.n, st.n, iterations, converged,
                              fence, kept_res)

    # checkpointing
    def to_dict(self) -> dict:
        m = self.model
        return {
            "format": CHECKPOINT_FORMAT,
            "strategy": self.strategy,
            "hyperparams": asdict(self.hp),
            "kernel": {"feature_scales": self.kernel.feature_scales.tolist(), "gamma": self.kernel.gamma},
            "capacity": self.hp.buffer_size,
            "steps": self.steps,
            "bias": self.bias,
            "samples": [{"x": m.X[i].tolist(), "y": float(m.y[i]), "t_s": float(m.t_s[i])}
                        for i in range(len(m))],
            "weights": m.weights.tolist(),
            "bandwidth": None if self.bandwidth is None else
            {"scale": self.bandwidth.scale, "base": self.bandwidth.base.tolist()},
            "last_refit": self._last_refit,
            "solver": {"tol": self.tol, "max_iter": self.max_iter},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OnlineLearner":
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError(f"unsupported checkpoint format {d.get('format')!r}")
        hp = Hyperparams(**d["hyperparams"])
        kernel = KernelParams(np.array(d["kernel"]["feature_scales"]), d["kernel"]["gamma"])
        self = cls(hp, kernel, d["strategy"], **d["solver"])
        X = np.array([s["x"] for s in d["samples"]], dtype=float).reshape(-1, kernel.dim)
        y = np.array([s["y"] for s in d["samples"]], dtype=float)
        t = np.array([s["t_s"] for s in d["samples"]], dtype=float)
        w = np.array(d["weights"], dtype=float)
        st = self._store
        while st.X.shape[0] < len(y) + 1:
            st._grow()
        st.n = len(y)
        st.X[:st.n], st.y[:st.n], st.t_s[:st.n], st.w[:st.n] = X, y, t, w
        st.K[:st.n, :st.n] = kernel_matrix(X, X, kernel)
        self.bias = float(d["bias"])
        if d.get("bandwidth"):
            self.bandwidth = BandwidthMatrix(d["bandwidth"]["scale"], np.array(d["bandwidth"]["base"]))
        self.steps = int(d["steps"])
        self._last_refit = int(d["last_refit"])
        return self

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "OnlineLearner":
        return cls.from_dict(json.loads(Path(path).read_text()))


def multi_dof_step(bank: list[OnlineLearner], x, targets, t_s: float) -> list[PipelineReport]:
    """Step every per-DOF learner on the shared features with its own target."""
    x = np.asarray(x, dtype=float)
    targets = np.asarray(targets, dtype=float).ravel()
    if x.shape != (bank[0].kernel.dim,):
        raise ValueError(f"feature vector has shape {x.shape}")
    if targets.shape[0] != len(bank) or not np.all(np.isfinite(targets)):
        raise ValueError("need one finite target per DOF learner")
    return [lrn.step(Sample(x, float(y), float(t_s))) for lrn, y in zip(bank, targets)]


def make_bank(hps, kernel: KernelParams, strategy: Strategy = "kde", **solver) -> list[OnlineLearner]:
    return [OnlineLearner(hp, kernel.with_gamma(hp.gamma), strategy, **solver) for hp in hps]
