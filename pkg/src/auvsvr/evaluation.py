"""Scoring, stratified splits, offline baselines and the online evaluation protocol."""

from __future__ import annotations

import csv
import itertools
import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .auv_dynamics import DOF_NAMES, Dataset
from .kernel_density import KernelParams
from .online_learner import OnlineLearner, Strategy, make_bank, multi_dof_step
from .svr_core import Hyperparams, fit_batch, predict_many

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("step", "time", "config", "r2_surge", "r2_sway", "r2_yaw", "r2_mean",
                 "buf_surge", "buf_sway", "buf_yaw")
OFFLINE_MAX_ITER = 10_000_000

DEFAULT_GRID = {
    "epsilon": (0.001, 0.01, 0.1),
    "cost": (1.0, 10.0, 100.0),
    "gamma": (1.0, 2.0, 5.0, 10.0, 20.0, 40.0, 100.0),
}


class UndefinedScoreError(ValueError):
    pass


def r2_score(predicted, truth) -> float:
    predicted = np.asarray(predicted, dtype=float).ravel()
    truth = np.asarray(truth, dtype=float).ravel()
    if predicted.shape != truth.shape or truth.size == 0:
        raise ValueError("predicted and truth must be nonempty and of equal length")
    ss_tot = float(np.sum((truth.mean() - truth) ** 2))
    if ss_tot == 0.0:
        raise UndefinedScoreError("R^2 is undefined for a constant truth vector")
    return 1.0 - float(np.sum((predicted - truth) ** 2)) / ss_tot


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    shuffle_seed: int = 0

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")


def stratified_split(ds: Dataset, spec: SplitSpec = SplitSpec()) -> tuple[Dataset, dict[int, Dataset]]:
    """Per-configuration train/validation split.

    The validation rows of each configuration are drawn uniformly at random;
    the returned training stream keeps the original temporal order.
    """
    rng = np.random.default_rng(spec.shuffle_seed)
    labels = ds.config
    train_idx, val = [], {}
    for label in sorted(set(labels.tolist())):
        rows = np.flatnonzero(labels == label)
        if rows.size < 5:
            raise ValueError(f"configuration {label} has only {rows.size} samples (need >= 5)")
        n_train = int(round(spec.train_fraction * rows.size))
        perm = rng.permutation(rows.size)
        val[label] = ds.subset(np.sort(rows[perm[n_train:]]))
        train_idx.append(rows[perm[:n_train]])
    return ds.subset(np.sort(np.concatenate(train_idx))), val


def calibrate_kernel(train: Dataset, gamma: float = 1.0) -> KernelParams:
    """Freeze the per-feature variances on the first configuration's training inputs."""
    first = train.config[0]
    return KernelParams.from_data(train.X[train.config == first], gamma)


def segments(labels: np.ndarray) -> list[tuple[int, int, int]]:
    """``(label, start, stop)`` runs of equal configuration label."""
    labels = np.asarray(labels)
    cuts = np.flatnonzero(np.diff(labels)) + 1
    starts = np.concatenate([[0], cuts])
    stops = np.concatenate([cuts, [labels.size]])
    return [(int(labels[a]), int(a), int(b)) for a, b in zip(starts, stops)]


# offline baselines

@dataclass
class BaselineMatrix:
    """``scores[i, j, d]``: DOF ``d`` model trained on config ``labels[i]``, tested on ``labels[j]``."""

    labels: list[int]
    scores: np.ndarray
    converged: np.ndarray
    n_support: np.ndarray

    @property
    def mean(self) -> np.ndarray:
        return self.scores.mean(axis=2)

    def diagonal(self) -> dict[int, float]:
        return {lab: float(self.mean[i, i]) for i, lab in enumerate(self.labels)}

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "mean": self.mean.tolist(),
            "per_dof": {name: self.scores[:, :, d].tolist() for d, name in enumerate(DOF_NAMES)},
            "converged": self.converged.tolist(),
            "n_support": self.n_support.tolist(),
        }


def offline_baseline(train: Dataset, val_sets: dict[int, Dataset], hps: Sequence[Hyperparams],
                     kernel: KernelParams, max_iter: int = OFFLINE_MAX_ITER):
    """Batch-train one SVR per DOF on ``train`` and score it on every validation set.

    Returns ``(scores, converged, n_support)`` with ``scores[j, d]`` for the
    ``j``-th validation configuration (sorted by label) and DOF ``d``.
    """
    labels = sorted(val_sets)
    scores = np.empty((len(labels), len(hps)))
    converged = np.empty(len(hps), dtype=bool)
    n_sv = np.empty(len(hps), dtype=int)
    for d, hp in enumerate(hps):
        model, sol = fit_batch(train.X, train.Y[:, d], hp, kernel.with_gamma(hp.gamma), max_iter=max_iter)
        converged[d] = sol.converged
        n_sv[d] = len(model)
        if not sol.converged:
            log.warning("offline solve for DOF %s did not converge (gap %.3g)", DOF_NAMES[d],
                        sol.max_violation)
        for j, lab in enumerate(labels):
            scores[j, d] = r2_score(predict_many(model, val_sets[lab].X), val_sets[lab].Y[:, d])
    return scores, converged, n_sv


def baseline_matrix(train: Dataset, val_sets: dict[int, Dataset], hps: Sequence[Hyperparams],
                    kernel: KernelParams, max_iter: int = OFFLINE_MAX_ITER) -> BaselineMatrix:
    labels = sorted(val_sets)
    n = len(labels)
    scores = np.empty((n, n, len(hps)))
    converged = np.empty((n, len(hps)), dtype=bool)
    n_sv = np.empty((n, len(hps)), dtype=int)
    for i, lab in enumerate(labels):
        block = train.subset(train.config == lab)
        scores[i], converged[i], n_sv[i] = offline_baseline(block, val_sets, hps, kernel, max_iter)
        log.info("baseline %d: mean R2 %s", lab, np.round(scores[i].mean(axis=1), 4))
    return BaselineMatrix(labels, scores, converged, n_sv)


# online protocol

@dataclass
class TraceEntry:
    step: int
    time: float
    config: int
    r2: tuple[float, ...]
    buffers: tuple[int, ...]
    wall: float

    @property
    def r2_mean(self) -> float:
        return float(np.mean(self.r2))


@dataclass
class EvalTrace:
    entries: list[TraceEntry] = field(default_factory=list)
    strategy: str = "kde"
    switch_steps: list[int] = field(default_factory=list)
    segment_bounds: dict[int, tuple[int, int]] = field(default_factory=dict)
    segment_scores: dict[int, list[float]] = field(default_factory=dict)
    forgotten_total: int = 0

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def steps(self) -> np.ndarray:
        return np.array([e.step for e in self.entries])

    @property
    def configs(self) -> np.ndarray:
        return np.array([e.config for e in self.entries])

    @property
    def r2_mean(self) -> np.ndarray:
        return np.array([e.r2_mean for e in self.entries])

    @property
    def r2(self) -> np.ndarray:
        return np.array([e.r2 for e in self.entries])

    def segment_window(self, label: int, start_frac: float, stop_frac: float = 1.0) -> np.ndarray:
        """Mean-R2 entries of one configuration segment within a fractional step window."""
        if label not in self.segment_bounds:
            return np.empty(0)
        lo, hi = self.segment_bounds[label]
        steps = self.steps
        a, b = lo + start_frac * (hi - lo), lo + stop_frac * (hi - lo)
        sel = (self.configs == label) & (steps >= a) & ((steps < b) | (stop_frac >= 1.0))
        return self.r2_mean[sel]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_COLUMNS)
            for e in self.entries:
                w.writerow([e.step, repr(e.time), e.config, *[repr(float(v)) for v in e.r2],
                            repr(e.r2_mean), *e.buffers])


def read_trace(path) -> np.ndarray:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header) != TRACE_COLUMNS:
            raise ValueError(f"{path}: unexpected trace header {header}")
        return np.array([[float(v) for v in row] for row in reader]).reshape(-1, len(TRACE_COLUMNS))


def validation_subsets(val_sets: dict[int, Dataset], cap: int | None, seed: int) -> dict[int, Dataset]:
    if cap is None:
        return val_sets
    rng = np.random.default_rng(seed)
    out = {}
    for lab in sorted(val_sets):
        v = val_sets[lab]
        out[lab] = v if len(v) <= cap else v.subset(np.sort(rng.choice(len(v), cap, replace=False)))
    return out


def score_bank(bank: Sequence[OnlineLearner], val: Dataset) -> tuple[float, ...]:
    return tuple(r2_score(lrn.predict_many(val.X), val.Y[:, d]) for d, lrn in enumerate(bank))


def online_run(stream: Dataset, val_sets: dict[int, Dataset], hps: Sequence[Hyperparams],
               kernel: KernelParams, strategy: Strategy = "kde", eval_every: int = 10,
               val_cap: int | None = 500, val_seed: int = 0,
               on_segment_end: Callable[[int, list[OnlineLearner]], None] | None = None,
               bank: list[OnlineLearner] | None = None) -> EvalTrace:
    """Feed ``stream`` sample by sample and score against the active configuration.

    An entry is recorded after steps ``0, E, 2E, ...`` using capped validation
    subsets; at the end of every configuration segment the full validation
    set of that configuration is scored into ``segment_scores``.
    """
    if eval_every < 1:
        raise ValueError("eval_every must be >= 1")
    in_loop = validation_subsets(val_sets, val_cap, val_seed)
    bank = make_bank(hps, kernel, strategy) if bank is None else bank
    t_origin = float(stream.t[0]) if len(stream) else 0.0
    trace = EvalTrace(strategy=strategy)
    segs = segments(stream.config)
    trace.switch_steps = [a for _, a, _ in segs[1:]]
    trace.segment_bounds = {lab: (a, b) for lab, a, b in segs}
    seg_end = {b - 1: lab for lab, _, b in segs}
    X, Y, T, cfg = stream.X, stream.Y, stream.t, stream.config
    start = time.perf_counter()
    for i in range(len(stream)):
        reports = multi_dof_step(bank, X[i], Y[i], T[i] - t_origin)
        trace.forgotten_total += sum(r.forgotten for r in reports)
        if i % eval_every == 0:
            label = int(cfg[i])
            trace.entries.append(TraceEntry(i, float(T[i]), label, score_bank(bank, in_loop[label]),
                                            tuple(len(lrn) for lrn in bank),
                                            time.perf_counter() - start))
        if i in seg_end:
            label = seg_end[i]
            trace.segment_scores[label] = list(score_bank(bank, val_sets[label]))
            log.info("%s: end of configuration %d, full-validation R2 %s", strategy, label,
                     np.round(trace.segment_scores[label], 4))
            if on_segment_end is not None:
                on_segment_end(label, bank)
    return trace


@dataclass
class StrategyComparison:
    kde: EvalTrace
    fifo: EvalTrace
    summary: dict


def final_third_stats(trace: EvalTrace) -> dict[int, tuple[float, float]]:
    out = {}
    for lab in sorted(trace.segment_bounds):
        window = trace.segment_window(lab, 2.0 / 3.0)
        out[lab] = (float(window.mean()), float(window.std())) if window.size else (np.nan, np.nan)
    return out


def compare_strategies(stream: Dataset, val_sets: dict[int, Dataset], hps: Sequence[Hyperparams],
                       kernel: KernelParams, eval_every: int = 10, **kw) -> StrategyComparison:
    kde = online_run(stream, val_sets, hps, kernel, "kde", eval_every, **kw)
    fifo = online_run(stream, val_sets, hps, kernel, "fifo", eval_every, **kw)
    inactive = kde.forgotten_total == 0 and fifo.forgotten_total == 0
    stats_k, stats_f = final_third_stats(kde), final_third_stats(fifo)
    summary = {
        "forgetting_inactive": inactive,
        "segments": {
            str(lab): {
                "kde_mean": stats_k[lab][0], "kde_std": stats_k[lab][1],
                "fifo_mean": stats_f[lab][0], "fifo_std": stats_f[lab][1],
            }
            for lab in stats_k
        },
        "forgotten": {"kde": kde.forgotten_total, "fifo": fifo.forgotten_total},
    }
    return StrategyComparison(kde, fifo, summary)


# hyperparameter search

def tune(train: Dataset, val: Dataset, kernel: KernelParams, grid: dict | None = None,
         base: Sequence[Hyperparams] | None = None, max_train: int | None = 2000,
         max_val: int | None = 1000, seed: int = 0, max_iter: int = OFFLINE_MAX_ITER):
    """Grid search of epsilon, C and gamma per DOF on one configuration.

    The gate and forgetting parameters are copied from ``base``.  Returns
    ``(hps, table)`` where ``table[d]`` lists ``(params, r2)`` for every grid
    point.
    """
    grid = {**DEFAULT_GRID, **(grid or {})}
    base = list(base) if base is not None else [Hyperparams(k=k) for k in (10.0, 10.0, 1.0)]
    rng = np.random.default_rng(seed)
    if max_train is not None and len(train) > max_train:
        train = train.subset(np.sort(rng.choice(len(train), max_train, replace=False)))
    if max_val is not None and len(val) > max_val:
        val = val.subset(np.sort(rng.choice(len(val), max_val, replace=False)))
    best, table = [], []
    for d, hp0 in enumerate(base):
        rows = []
        for eps, cost, gamma in itertools.product(grid["epsilon"], grid["cost"], grid["gamma"]):
            hp = Hyperparams(**{**hp0.__dict__, "epsilon": eps, "cost": cost, "gamma": gamma})
            model, sol = fit_batch(train.X, train.Y[:, d], hp, kernel.with_gamma(gamma), max_iter=max_iter)
            rows.append((hp, r2_score(predict_many(model, val.X), val.Y[:, d])))
        table.append(rows)
        # ties keep the earlier (coarser epsilon / smaller C / smaller gamma) grid point
        best.append(max(rows, key=lambda r: r[1])[0])
        log.info("tuned %s: %s", DOF_NAMES[d], best[-1])
    return best, table
