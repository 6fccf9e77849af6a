"""Kernel weights over transport distances and the nearest-neighbor bandwidth rule."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

GAUSSIAN_NORM = 1.0 / math.sqrt(2.0 * math.pi)

# Floor applied when the neighbor distances degenerate to zero; scaled by the
# largest observed distance so it tracks the data scale.
BANDWIDTH_FLOOR = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus bandwidth; dim feeds the h^-d prefactor.

    The prefactor does not change any weighted argmin (weights scale by a
    common constant) but is kept so reported weights match the usual
    normalized-kernel convention.
    """

    family: str
    bandwidth: float
    dim: int

    def __post_init__(self):
        if self.family not in ("gaussian", "epanechnikov"):
            raise ValidationError(f"unknown kernel family {self.family!r}")
        if not (self.bandwidth > 0):
            raise ValidationError("bandwidth must be positive")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")


@dataclass(frozen=True)
class BandwidthRule:
    """Bandwidth = scale * (distance to the `neighbors`-th nearest neighbor)."""

    neighbors: int
    scale: float = 1.0

    def __post_init__(self):
        if self.neighbors < 1:
            raise ValidationError("neighbors must be >= 1")
        if not (self.scale > 0):
            raise ValidationError("scale must be positive")


def kernel_weight(dist: float, spec: KernelSpec) -> float:
    """Evaluate h^-d K(dist/h); non-increasing in dist for both families."""
    if dist < 0:
        raise ValidationError("distance must be nonnegative")
    u = dist / spec.bandwidth
    if spec.family == "gaussian":
        k = GAUSSIAN_NORM * math.exp(-0.5 * u * u)
    else:
        k = 0.75 * max(1.0 - u * u, 0.0)
    return spec.bandwidth ** (-spec.dim) * k


def select_bandwidth(dists, rule: BandwidthRule) -> float:
    """Scaled k-th order statistic of the distances, floored for degenerate input."""
    arr = np.asarray(dists, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < rule.neighbors:
        raise ValidationError(
            f"need at least {rule.neighbors} distances, got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValidationError("distances must be finite and nonnegative")
    r_k = float(np.sort(arr)[rule.neighbors - 1])
    floor = BANDWIDTH_FLOOR * (1.0 + float(arr.max()))
    return max(rule.scale * r_k, floor)
