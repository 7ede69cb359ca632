"""3-DOF horizontal-plane AUV simulator used as ground truth.

State is the body velocity ``nu = (u, v, r)`` plus heading ``psi``; position
is never integrated.  Accelerations follow

    nu_dot = M^-1 (tau(n) - C(nu) nu - D_l nu - D_q |nu| nu),
    tau(n) = B (k_t * n |n|),

with restoring forces dropped (depth and pitch are held by other thrusters).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numba import njit

log = logging.getLogger(__name__)

CONFIG_LABELS = {"default": 1, "thruster_damage": 2, "damping_change": 3}
DATASET_COLUMNS = ("t", "u", "v", "r", "n1", "n2", "n3", "du", "dv", "dr", "config")
FEATURE_COLUMNS = ("u", "v", "r", "n1", "n2", "n3")
TARGET_COLUMNS = ("du", "dv", "dr")
DOF_NAMES = ("surge", "sway", "yaw")


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class VehicleConfig:
    mass_matrix: np.ndarray
    damping_linear: np.ndarray
    damping_quad: np.ndarray
    thrust_gain: np.ndarray
    thrust_allocation: np.ndarray
    label: str = "default"

    def __post_init__(self):
        for name in ("mass_matrix", "damping_linear", "damping_quad", "thrust_allocation"):
            arr = np.array(getattr(self, name), dtype=float)
            if arr.shape != (3, 3):
                raise ValueError(f"{name} must be 3x3")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "thrust_gain", np.array(self.thrust_gain, dtype=float).ravel())
        M = self.mass_matrix
        if not np.allclose(M, M.T) or np.linalg.eigvalsh(M).min() <= 0:
            raise ValueError("mass matrix must be symmetric positive definite")
        if np.any(np.diag(self.damping_linear) < 0) or np.any(np.diag(self.damping_quad) < 0):
            raise ValueError("damping diagonals must be nonnegative")
        if np.linalg.matrix_rank(self.thrust_allocation) < 3:
            raise ValueError("thrust allocation must have full rank")
        if self.label not in CONFIG_LABELS:
            raise ValueError(f"unknown configuration label {self.label!r}")

    @property
    def label_id(self) -> int:
        return CONFIG_LABELS[self.label]


def default_config() -> VehicleConfig:
    # thrusters 1-2: lateral pair at x = +/-0.4 m; thruster 3: surge, offset 0.1 m to port
    allocation = np.array([[0.0, 0.0, 1.0],
                           [1.0, 1.0, 0.0],
                           [0.4, -0.4, -0.1]])
    return VehicleConfig(
        mass_matrix=np.diag([90.0, 120.0, 20.0]),
        damping_linear=np.diag([20.0, 40.0, 8.0]),
        damping_quad=np.diag([35.0, 60.0, 12.0]),
        thrust_gain=np.full(3, 0.05),
        thrust_allocation=allocation,
        label="default",
    )


def thruster_damage_config(base: VehicleConfig | None = None, factor: float = 0.4) -> VehicleConfig:
    base = base or default_config()
    gain = base.thrust_gain.copy()
    gain[0] *= factor
    return replace(base, thrust_gain=gain, label="thruster_damage")


def damping_change_config(base: VehicleConfig | None = None, factor: float = 1.6) -> VehicleConfig:
    base = base or default_config()
    return replace(base, damping_linear=base.damping_linear * factor,
                   damping_quad=base.damping_quad * factor, label="damping_change")


def paper_configs() -> list[VehicleConfig]:
    return [default_config(), thruster_damage_config(), damping_change_config()]


@dataclass
class SimState:
    nu: np.ndarray
    psi: float = 0.0
    t: float = 0.0

    def __post_init__(self):
        self.nu = np.asarray(self.nu, dtype=float).reshape(3)


def coriolis(M, nu) -> np.ndarray:
    """Skew-symmetric 3-DOF Coriolis/centripetal matrix built from ``M``."""
    M = np.asarray(M, dtype=float)
    u, v, r = np.asarray(nu, dtype=float)
    m11 = M[0, 0]
    m22 = M[1, 1]
    m23 = 0.5 * (M[1, 2] + M[2, 1])
    c13 = -(m22 * v + m23 * r)
    c23 = m11 * u
    return np.array([[0.0, 0.0, c13],
                     [0.0, 0.0, c23],
                     [-c13, -c23, 0.0]])


@njit(cache=True)
def _nu_dot(nu, n, Minv, m11, m22, m23, Dl, Dq, kt, B):
    u, v, r = nu[0], nu[1], nu[2]
    f = np.empty(3)
    for j in range(3):
        f[j] = kt[j] * n[j] * abs(n[j])
    tau = B @ f
    c13 = -(m22 * v + m23 * r)
    c23 = m11 * u
    cnu = np.empty(3)
    cnu[0] = c13 * r
    cnu[1] = c23 * r
    cnu[2] = -c13 * u - c23 * v
    rhs = np.empty(3)
    for j in range(3):
        rhs[j] = tau[j] - cnu[j] - Dl[j] * nu[j] - Dq[j] * abs(nu[j]) * nu[j]
    return Minv @ rhs


@njit(cache=True)
def _rk4(nu, n0, nh, n1, dt, Minv, m11, m22, m23, Dl, Dq, kt, B):
    k1 = _nu_dot(nu, n0, Minv, m11, m22, m23, Dl, Dq, kt, B)
    k2 = _nu_dot(nu + 0.5 * dt * k1, nh, Minv, m11, m22, m23, Dl, Dq, kt, B)
    k3 = _nu_dot(nu + 0.5 * dt * k2, nh, Minv, m11, m22, m23, Dl, Dq, kt, B)
    k4 = _nu_dot(nu + dt * k3, n1, Minv, m11, m22, m23, Dl, Dq, kt, B)
    return nu + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4), dt / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])


@njit(cache=True)
def _integrate_segment(nu0, psi0, nseq, dt, stride, Minv, m11, m22, m23, Dl, Dq, kt, B):
    # nseq holds thruster speeds on the half-step grid: row 2k at t_k, 2k+1 at t_k + dt/2
    steps = (nseq.shape[0] - 1) // 2
    n_out = steps // stride
    nus = np.empty((n_out, 3))
    acc = np.empty((n_out, 3))
    nu = nu0.copy()
    psi = psi0
    for k in range(steps):
        if k % stride == 0:
            idx = k // stride
            nus[idx] = nu
            acc[idx] = _nu_dot(nu, nseq[2 * k], Minv, m11, m22, m23, Dl, Dq, kt, B)
        nu, dpsi = _rk4(nu, nseq[2 * k], nseq[2 * k + 1], nseq[2 * k + 2], dt,
                        Minv, m11, m22, m23, Dl, Dq, kt, B)
        psi += dpsi
        if not (np.isfinite(nu[0]) and np.isfinite(nu[1]) and np.isfinite(nu[2])):
            return nus, acc, nu, psi, k
    return nus, acc, nu, psi, -1


def _packed(cfg: VehicleConfig):
    M = cfg.mass_matrix
    return (np.linalg.inv(M), float(M[0, 0]), float(M[1, 1]), float(0.5 * (M[1, 2] + M[2, 1])),
            np.diag(cfg.damping_linear).copy(), np.diag(cfg.damping_quad).copy(),
            cfg.thrust_gain.copy(), cfg.thrust_allocation.copy())


def thrust_forces(n, cfg: VehicleConfig) -> np.ndarray:
    """Body force/torque ``tau`` produced by thruster speeds ``n`` (rev/s)."""
    n = np.asarray(n, dtype=float)
    return cfg.thrust_allocation @ (cfg.thrust_gain * n * np.abs(n))


def derivative(state: SimState, thruster_speeds, cfg: VehicleConfig) -> tuple[np.ndarray, float]:
    """Return ``(nu_dot, psi_dot)``."""
    n = np.asarray(thruster_speeds, dtype=float).reshape(3)
    return _nu_dot(state.nu, n, *_packed(cfg)), float(state.nu[2])


def integrate_step(state: SimState, n, cfg: VehicleConfig, dt: float,
                   n_mid=None, n_end=None) -> SimState:
    """One classical RK4 step.  Thruster speeds default to piecewise constant."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    n0 = np.asarray(n, dtype=float).reshape(3)
    nh = n0 if n_mid is None else np.asarray(n_mid, dtype=float).reshape(3)
    n1 = nh if n_end is None else np.asarray(n_end, dtype=float).reshape(3)
    nu, dpsi = _rk4(state.nu, n0, nh, n1, float(dt), *_packed(cfg))
    if not np.all(np.isfinite(nu)):
        raise SimulationError(f"non-finite state after step at t={state.t}: nu={state.nu}, n={n0}")
    return SimState(nu, state.psi + dpsi, state.t + dt)


def kinetic_energy(nu, cfg: VehicleConfig) -> float:
    nu = np.asarray(nu, dtype=float)
    return 0.5 * float(nu @ cfg.mass_matrix @ nu)


@dataclass
class ExcitationPlan:
    """Per-thruster sine waves whose period is redrawn from U[lo, hi] after every cycle.

    Each cycle restarts the sine at its phase, so the signal is continuous
    across period changes.  ``fixed_period`` disables the random schedule.
    """

    amplitude: np.ndarray = field(default_factory=lambda: np.full(3, 15.0))
    phase: np.ndarray = field(default_factory=lambda: np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3]))
    rng_seed: int = 0
    period_range: tuple[float, float] = (20.0, 70.0)
    fixed_period: float | None = None

    def __post_init__(self):
        self.amplitude = np.broadcast_to(np.asarray(self.amplitude, dtype=float), (3,)).copy()
        self.phase = np.broadcast_to(np.asarray(self.phase, dtype=float), (3,)).copy()
        lo, hi = self.period_range
        if not 0 < lo <= hi:
            raise ValueError("period range must satisfy 0 < lo <= hi")
        self._streams = np.random.default_rng(self.rng_seed).spawn(3)
        self._periods: list[list[float]] = [[], [], []]
        self._starts = [np.zeros(1) for _ in range(3)]

    def ensure(self, horizon: float) -> None:
        """Draw periods until every thruster's schedule covers ``[0, horizon]``."""
        if self.fixed_period is not None:
            return
        lo, hi = self.period_range
        for j in range(3):
            if self._starts[j][-1] > horizon:
                continue
            periods = self._periods[j]
            total = float(self._starts[j][-1])
            while total <= horizon:
                periods.append(float(self._streams[j].uniform(lo, hi)))
                total += periods[-1]
            self._starts[j] = np.concatenate([[0.0], np.cumsum(periods)])

    def values(self, thruster_index: int, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise ValueError("excitation time must be nonnegative")
        j = thruster_index
        if self.fixed_period is not None:
            P = self.fixed_period
            local = np.mod(t, P)
        else:
            self.ensure(float(np.max(t, initial=0.0)))
            starts = self._starts[j]
            k = np.searchsorted(starts, t, side="right") - 1
            local = t - starts[k]
            P = np.asarray(self._periods[j])[k]
        return self.amplitude[j] * np.sin(2 * np.pi * local / P + self.phase[j])

    def realized_periods(self, thruster_index: int, horizon: float) -> np.ndarray:
        """Periods of the cycles that start within ``[0, horizon]``."""
        if self.fixed_period is not None:
            return np.full(int(horizon // self.fixed_period) + 1, self.fixed_period)
        self.ensure(horizon)
        starts = self._starts[thruster_index]
        count = int(np.searchsorted(starts, horizon, side="right"))
        return np.asarray(self._periods[thruster_index][:count])


def excitation(plan: ExcitationPlan, thruster_index: int, t: float) -> float:
    return float(plan.values(thruster_index, t))


@dataclass
class Dataset:
    """Sampled rows ``t, u, v, r, n1, n2, n3, du, dv, dr, config``."""

    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] != len(DATASET_COLUMNS):
            raise ValueError(f"dataset must have {len(DATASET_COLUMNS)} columns")

    def __len__(self) -> int:
        return self.data.shape[0]

    @property
    def t(self) -> np.ndarray:
        return self.data[:, 0]

    @property
    def X(self) -> np.ndarray:
        return self.data[:, 1:7]

    @property
    def Y(self) -> np.ndarray:
        return self.data[:, 7:10]

    @property
    def config(self) -> np.ndarray:
        return self.data[:, 10].astype(int)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.data[idx])

    def counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.config, return_counts=True)
        return {int(k): int(c) for k, c in zip(labels, counts)}


def generate_dataset(cfg_sequence, plan: ExcitationPlan, sample_rate: float = 1.0,
                     noise=0.02, seed: int = 0, dt: float = 0.01,
                     initial: SimState | None = None) -> Dataset:
    """Simulate consecutive configuration segments and sample them.

    Parameters
    ----------
    cfg_sequence : list of (VehicleConfig, duration_s)
    plan : ExcitationPlan
        Thruster excitation; time runs continuously across segments.
    sample_rate : float
        Output rate in Hz; ``1 / sample_rate`` must be a multiple of ``dt``.
    noise : float or sequence of 3 floats
        Scalar: relative noise, std = ``noise * std(channel)`` over the clean
        run.  Sequence: absolute per-channel std-devs.
    seed : int
        Seed of the measurement-noise stream.
    """
    stride_f = 1.0 / (sample_rate * dt)
    stride = int(round(stride_f))
    if stride < 1 or abs(stride - stride_f) > 1e-9:
        raise ValueError("sample period must be an integer multiple of dt")
    state = initial or SimState(np.zeros(3))
    t0 = state.t
    rows = []
    for cfg, duration in cfg_sequence:
        if not duration > 0:
            raise ValueError("segment durations must be positive")
        n_samples = int(round(duration * sample_rate))
        steps = n_samples * stride
        tgrid = t0 + 0.5 * dt * np.arange(2 * steps + 1)
        nseq = np.column_stack([plan.values(j, tgrid) for j in range(3)])
        nus, acc, nu_end, psi_end, bad = _integrate_segment(state.nu, state.psi, nseq, dt, stride,
                                                            *_packed(cfg))
        if bad >= 0:
            raise SimulationError(f"simulator diverged at t={t0 + bad * dt:.3f} s "
                                  f"in configuration {cfg.label}")
        ts = t0 + np.arange(n_samples) * stride * dt
        block = np.column_stack([ts, nus, nseq[0:2 * steps:2 * stride], acc,
                                 np.full(n_samples, cfg.label_id)])
        rows.append(block)
        t0 = t0 + steps * dt
        state = SimState(nu_end, psi_end, t0)
        log.debug("segment %s: %d rows", cfg.label, n_samples)
    data = np.vstack(rows)
    noise_std = np.asarray(noise, dtype=float)
    if noise_std.ndim == 0:
        noise_std = float(noise_std) * data[:, 7:10].std(axis=0)
    if np.any(noise_std > 0):
        rng = np.random.default_rng(seed)
        data[:, 7:10] += rng.normal(size=(len(data), 3)) * noise_std
    return Dataset(data)


def default_dataset(seed: int = 0, duration: float = 10_000.0, noise=0.02) -> Dataset:
    plan = ExcitationPlan(rng_seed=seed)
    return generate_dataset([(cfg, duration) for cfg in paper_configs()], plan, 1.0, noise, seed)


def write_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(DATASET_COLUMNS)
        for row in ds.data:
            w.writerow([repr(float(v)) for v in row[:-1]] + [int(row[-1])])


def read_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty dataset file")
        header = [h.strip() for h in header]
        if tuple(header) != DATASET_COLUMNS:
            for i, expected in enumerate(DATASET_COLUMNS):
                got = header[i] if i < len(header) else "<missing>"
                if got != expected:
                    raise ValueError(f"{path}: bad column {i} {got!r}, expected {expected!r}")
            raise ValueError(f"{path}: unexpected extra columns {header[len(DATASET_COLUMNS):]}")
        rows = [[float(v) for v in rec] for rec in reader if rec]
    return Dataset(np.array(rows).reshape(-1, len(DATASET_COLUMNS)))
