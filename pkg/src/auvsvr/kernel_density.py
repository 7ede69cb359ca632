"""Squared-exponential kernel and diagonal-bandwidth kernel density estimation.

The regression kernel is ``exp(-sum_j (x_j - z_j)^2 * gamma / sigma2_j)``
where ``sigma2`` is a frozen per-feature variance estimate.  The density
estimate used by the forgetting node averages the unnormalised Gaussian
``exp(-u.u)`` of bandwidth-scaled differences and divides by ``det(H)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Floors applied to degenerate (constant) feature columns when fitting H.
REL_STD_FLOOR = 1e-6
ABS_STD_FLOOR = 1e-9
# Elements per temporary block in pairwise distance computations.
_CHUNK_ELEMS = 2_000_000


def _as_vector(x, dim: int | None = None, name: str = "x") -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a 1-D feature vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _as_buffer(buffer, dim: int, name: str = "buffer") -> np.ndarray:
    arr = np.asarray(buffer, dtype=float)
    if arr.size == 0:
        return np.empty((0, dim))
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != dim:
        raise ValueError(f"{name} must have shape (n, {dim}), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class KernelParams:
    """Per-feature variances and the width multiplier ``gamma``."""

    feature_scales: np.ndarray
    gamma: float
    dim: int = field(default=-1)

    def __post_init__(self):
        scales = np.array(self.feature_scales, dtype=float).ravel()
        scales.setflags(write=False)
        object.__setattr__(self, "feature_scales", scales)
        dim = scales.shape[0] if self.dim == -1 else int(self.dim)
        object.__setattr__(self, "dim", dim)
        if scales.shape[0] != dim:
            raise ValueError(f"feature_scales has length {scales.shape[0]}, expected {dim}")
        if not (np.all(np.isfinite(scales)) and np.all(scales > 0)):
            raise ValueError("feature_scales must be strictly positive and finite")
        if not (np.isfinite(self.gamma) and self.gamma > 0):
            raise ValueError(f"gamma must be positive, got {self.gamma}")

    @property
    def inv_lengths(self) -> np.ndarray:
        """Weights ``gamma / sigma2_j`` multiplying squared differences."""
        return self.gamma / self.feature_scales

    @classmethod
    def from_data(cls, X, gamma: float) -> "KernelParams":
        """Calibrate on a training block: diagonal of the sample covariance."""
        X = np.asarray(X, dtype=float)
        var = X.var(axis=0, ddof=1)
        floor = max(REL_STD_FLOOR**2 * float(var.max(initial=0.0)), ABS_STD_FLOOR**2)
        return cls(np.maximum(var, floor), gamma)

    def with_gamma(self, gamma: float) -> "KernelParams":
        return KernelParams(self.feature_scales, gamma, self.dim)


def kernel_eval(x, z, p: KernelParams) -> float:
    x = _as_vector(x, p.dim, "x")
    z = _as_vector(z, p.dim, "z")
    d = x - z
    return float(np.exp(-np.sum(d * d * p.inv_lengths)))


def kernel_row(x, buffer, p: KernelParams) -> np.ndarray:
    """Kernel values between ``x`` and every row of ``buffer``."""
    x = _as_vector(x, p.dim, "x")
    B = _as_buffer(buffer, p.dim)
    d = B - x
    return np.exp(-(d * d) @ p.inv_lengths)


def _weighted_sq_dists(A: np.ndarray, B: np.ndarray, w: np.ndarray) -> np.ndarray:
    out = np.empty((A.shape[0], B.shape[0]))
    rows = max(1, _CHUNK_ELEMS // max(1, B.shape[0] * A.shape[1]))
    for s in range(0, A.shape[0], rows):
        d = A[s:s + rows, None, :] - B[None, :, :]
        out[s:s + rows] = (d * d) @ w
    return out


def kernel_matrix(A, B, p: KernelParams) -> np.ndarray:
    """Cross-kernel matrix ``K[i, j] = kernel(A[i], B[j])``."""
    A = _as_buffer(A, p.dim, "A")
    B = _as_buffer(B, p.dim, "B")
    return np.exp(-_weighted_sq_dists(A, B, p.inv_lengths))


@dataclass(frozen=True)
class BandwidthMatrix:
    """Diagonal bandwidth ``H = scale * diag(base)``."""

    scale: float
    base: np.ndarray
    det_value: float = field(init=False)

    def __post_init__(self):
        base = np.array(self.base, dtype=float).ravel()
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"bandwidth scale must be positive, got {self.scale}")
        if not (np.all(np.isfinite(base)) and np.all(base > 0)):
            raise ValueError("bandwidth base entries must be strictly positive")
        object.__setattr__(self, "det_value", float(np.prod(self.scale * base)))

    @property
    def diag(self) -> np.ndarray:
        return self.scale * self.base

    @property
    def dim(self) -> int:
        return self.base.shape[0]


def fit_bandwidth(buffer, scale: float) -> BandwidthMatrix:
    """Bandwidth proportional to the per-feature sample std of ``buffer``."""
    B = np.asarray(buffer, dtype=float)
    if B.ndim != 2 or B.shape[0] < 2:
        raise ValueError("fit_bandwidth needs at least 2 points")
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    std = B.std(axis=0, ddof=1)
    floor = max(REL_STD_FLOOR * float(std.max()), ABS_STD_FLOOR)
    return BandwidthMatrix(float(scale), np.maximum(std, floor))


def kde_matrix(A, B, H: BandwidthMatrix) -> np.ndarray:
    """Unnormalised Gaussian terms ``exp(-|H^-1 (a - b)|^2)``, no 1/det factor."""
    A = _as_buffer(A, H.dim, "A")
    B = _as_buffer(B, H.dim, "B")
    return np.exp(-_weighted_sq_dists(A, B, H.diag ** -2.0))


def kde_density(x, buffer, H: BandwidthMatrix) -> float:
    x = _as_vector(x, H.dim, "x")
    B = _as_buffer(buffer, H.dim)
    if B.shape[0] == 0:
        raise ValueError("density is undefined over an empty buffer")
    u = (B - x) / H.diag
    return float(np.mean(np.exp(-(u * u).sum(axis=1))) / H.det_value)
