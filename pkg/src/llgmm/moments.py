"""Localized moment conditions at the fitted coefficient path.

For a subject i and location s0 the moment vector stacks the plain and
slope-weighted kernel sums of the instrumented residual, giving a mean-zero
process of dimension d = twice the instrument count.  The empirical second
moment of these vectors over subjects is the covariance operator that the
eigen step decomposes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CoefficientEstimate,
    DimensionMismatchError,
    FunctionalDataset,
    Grid,
    ValidationError,
)
from .hetero import InstrumentSet
from .kernel import kernel_eval


def _coef_at(gamma: CoefficientEstimate, s0: float):
    """(beta(s0), dbeta(s0)) with linear interpolation off the grid."""
    pts = gamma.grid.points
    idx = np.searchsorted(pts, s0)
    if idx < pts.size and pts[idx] == s0:
        return gamma.beta[idx], gamma.dbeta_scaled[idx] / gamma.bandwidth
    deriv = gamma.dbeta_scaled / gamma.bandwidth
    beta = np.array([np.interp(s0, pts, gamma.beta[:, j]) for j in range(gamma.beta.shape[1])])
    db = np.array([np.interp(s0, pts, deriv[:, j]) for j in range(deriv.shape[1])])
    return beta, db


def moment_eval(
    data: FunctionalDataset,
    inst: InstrumentSet,
    gamma: CoefficientEstimate,
    h: float,
    s0: float,
) -> np.ndarray:
    """Per-subject moment vectors at s0, shape (n, d) with d = 2q.

    Row i holds r^{-1} * sum_j K_h(s_j - s0) * (1, (s_j-s0)/h) kron
    (instrument_i * residual_ij), with the residual taken at the supplied
    coefficient path.
    """
    if not h > 0.0:
        raise ValidationError("bandwidth must be positive")
    if inst.values.shape[0] != data.n_subjects:
        raise DimensionMismatchError("instrument rows do not match the dataset subjects")
    if not gamma.grid.same_as(data.grid):
        raise DimensionMismatchError("coefficient path grid differs from the dataset grid")
    pts = data.grid.points
    beta0, deriv0 = _coef_at(gamma, s0)
    fitted = (data.covariates @ beta0)[:, None] + np.outer(data.covariates @ deriv0, pts - s0)
    resid = data.responses - fitted
    u = (pts - s0) / h
    w = kernel_eval(u) / h
    r = pts.size
    c0 = resid @ w / r
    c1 = resid @ (w * u) / r
    m = inst.values
    return np.hstack([m * c0[:, None], m * c1[:, None]])


@dataclass(frozen=True, eq=False)
class MomentSample:
    """Moment vectors for every subject at every grid point, shape (n, d, r).

    gamma records the coefficient path the moments were evaluated at.
    """

    values: np.ndarray
    grid: Grid
    bandwidth: float
    gamma: CoefficientEstimate = None

    @property
    def n_subjects(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def mean_over_subjects(self) -> np.ndarray:
        """Empirical moment path, shape (d, r)."""
        return self.values.mean(axis=0)


def moment_sample(
    data: FunctionalDataset,
    inst: InstrumentSet,
    gamma: CoefficientEstimate,
    h: float,
) -> MomentSample:
    """Evaluate the moment vectors at every grid point."""
    pts = data.grid.points
    n = data.n_subjects
    d = 2 * inst.n_instruments
    vals = np.empty((n, d, pts.size))
    for m in range(pts.size):
        vals[:, :, m] = moment_eval(data, inst, gamma, h, float(pts[m]))
    return MomentSample(values=vals, grid=data.grid, bandwidth=h, gamma=gamma)


@dataclass(frozen=True, eq=False)
class MomentCovariance:
    """Second-moment operator of the moment process.

    Stored in lined-up layout: the flattened index runs component-major, so
    entry (l*r + j, l'*r + j') is C_{l,l'}(s_j, s_j').  ``samples`` keeps the
    flattened per-subject vectors, which lets the eigen step work on the
    factored Gram form instead of a dense eigendecomposition.
    """

    samples: np.ndarray  # (n, d*r), row i is g_i flattened component-major
    grid: Grid
    dim: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_subjects(self) -> int:
        return self.samples.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        """Dense lined-up covariance matrix of shape (d*r, d*r)."""
        if "matrix" not in self._cache:
            g = self.samples
            m = g.T @ g / g.shape[0]
            self._cache["matrix"] = (m + m.T) / 2.0
        return self._cache["matrix"]

    def block(self, j: int, j_prime: int) -> np.ndarray:
        """C(s_j, s_j') as a (d, d) matrix."""
        r = self.grid.size
        m = self.matrix
        rows = np.arange(self.dim) * r + j
        cols = np.arange(self.dim) * r + j_prime
        return m[np.ix_(rows, cols)]


def moment_covariance(samples: MomentSample) -> MomentCovariance:
    """Empirical second moment n^{-1} sum_i g_i g_i^T over the grid.

    The mean is not subtracted: the moment process is mean zero by
    construction at the coefficient path it was evaluated at.
    """
    if samples.n_subjects < 2:
        raise ValidationError("need at least 2 subjects for a moment covariance")
    n, d, r = samples.values.shape
    flat = samples.values.reshape(n, d * r)
    return MomentCovariance(samples=flat, grid=samples.grid, dim=d)
