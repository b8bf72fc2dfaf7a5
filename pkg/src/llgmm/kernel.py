"""Epanechnikov kernel and the local-linear design helpers built on it."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import ValidationError

SUPPORT_RADIUS = 1.0

_FAMILIES = ("epanechnikov",)


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family marker; only the Epanechnikov density is implemented."""

    family: str = "epanechnikov"
    support_radius: float = SUPPORT_RADIUS

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValidationError(f"unknown kernel family {self.family!r}")
        if self.support_radius != SUPPORT_RADIUS:
            raise ValidationError("only unit support radius is implemented")


def kernel_eval(u):
    """Epanechnikov density 0.75 * (1 - u^2)_+ ; accepts scalars or arrays."""
    u = np.asarray(u, dtype=float)
    out = 0.75 * np.maximum(1.0 - u * u, 0.0)
    return float(out) if out.ndim == 0 else out


def kernel_scaled(u, h: float):
    """Bandwidth-rescaled kernel K((u)/h)/h."""
    if not h > 0.0:
        raise ValidationError("bandwidth must be positive")
    u = np.asarray(u, dtype=float)
    out = kernel_eval(u / h) / h
    return float(out) if np.ndim(out) == 0 else out


def local_design_vector(s_j, s0: float, h: float):
    """Design vector (1, (s_j - s0)/h); vectorizes over s_j to shape (m, 2)."""
    if not h > 0.0:
        raise ValidationError("bandwidth must be positive")
    s_j = np.asarray(s_j, dtype=float)
    u = (s_j - s0) / h
    if u.ndim == 0:
        return np.array([1.0, float(u)])
    return np.column_stack([np.ones_like(u), u])


@lru_cache(maxsize=None)
def kernel_moment(a: int, b: int, num_points: int = 100_001) -> float:
    """Numerically computed moment integral of t^a K(t)^b over [-1, 1].

    The (a, b) = (2, 1) moment drives local-linear smoothing bias.
    """
    t = np.linspace(-1.0, 1.0, num_points)
    f = t**a * kernel_eval(t) ** b
    dt = t[1] - t[0]
    return float((f[0] / 2.0 + f[1:-1].sum() + f[-1] / 2.0) * dt)
