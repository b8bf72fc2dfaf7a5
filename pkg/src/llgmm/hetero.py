"""Integrated squared residuals, log-variance smoothing, and instrument blocks.

The conditional variance of the error process is recovered by regressing the
log of each subject's integrated squared residual on the covariates with a
product-Epanechnikov local-linear smoother.  Fitted variances feed the
instrument matrix [X, X / sigma2(X)].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    CoefficientEstimate,
    DimensionMismatchError,
    EstimatorConfig,
    FunctionalDataset,
    ValidationError,
    quadrature_weights,
)
from .kernel import kernel_eval


@dataclass(frozen=True, eq=False)
class VarianceModel:
    """Fitted conditional variance at the training covariates.

    is_constant flags the fallback used when every covariate coordinate is
    degenerate.  floor is the applied lower bound on fitted variances.
    """

    x: np.ndarray
    sigma2: np.ndarray
    bandwidths: np.ndarray
    floor: float
    is_constant: bool = False

    def __post_init__(self):
        if np.any(self.sigma2 < self.floor * (1.0 - 1e-12)):
            raise ValidationError("fitted variance below its floor")


@dataclass(frozen=True, eq=False)
class InstrumentSet:
    """Instrument rows, shape (n, q); build_instruments yields [X, X/sigma2].

    Identification requires q >= p, checked where the covariate count is
    known.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] < 1:
            raise ValidationError("instrument matrix must be 2-d with at least one column")
        if not np.all(np.isfinite(v)):
            raise ValidationError("non-finite instrument entry")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_instruments(self) -> int:
        return self.values.shape[1]

    def subset(self, indices) -> "InstrumentSet":
        return InstrumentSet(self.values[np.asarray(indices, dtype=int)])


def integrated_sq_residuals(
    data: FunctionalDataset, init: CoefficientEstimate, variance_floor: float = 1e-6
) -> np.ndarray:
    """Per-subject quadrature of the squared step-one residual curve.

    Values are clamped below at ``variance_floor * 1e-3 * max(1, mean)`` so a
    later log-transform stays finite even for an exact fit.
    """
    if not init.grid.same_as(data.grid):
        raise DimensionMismatchError("initial estimate grid differs from the dataset grid")
    resid = data.responses - data.covariates @ init.beta.T
    w = quadrature_weights(data.grid)
    r_int = (resid * resid) @ w
    clamp = variance_floor * 1e-3 * max(1.0, float(r_int.mean()))
    return np.maximum(r_int, clamp)


def _rule_of_thumb_bandwidths(x: np.ndarray) -> np.ndarray:
    n, p = x.shape
    sd = x.std(axis=0, ddof=1)
    return 1.06 * sd * n ** (-1.0 / (4.0 + p))


# smoothness ladder explored by leave-one-out CV, as multiples of the
# rule-of-thumb bandwidth; the last rung makes every kernel weight equal,
# which turns the fit into a global linear regression
_BANDWIDTH_MULTIPLIERS = (0.5, 1.0, 2.0, 4.0, 8.0, 1e6)


def _loclin_smooth(
    x: np.ndarray, y: np.ndarray, bandwidths: np.ndarray, leave_one_out: bool = False
) -> np.ndarray:
    """Product-Epanechnikov local-linear fit of y on x, evaluated at x itself.

    With ``leave_one_out`` each point's own observation is removed from its
    window.  Rank-deficient windows fall back to the kernel-weighted mean.
    """
    n, p = x.shape
    d = x[None, :, :] - x[:, None, :]          # d[i, j] = x_j - x_i
    w = np.ones((n, n))
    for j in range(p):
        w *= kernel_eval(d[:, :, j] / bandwidths[j]) / bandwidths[j]
    if leave_one_out:
        np.fill_diagonal(w, 0.0)

    s0 = w.sum(axis=1)
    t0 = w @ y
    sx = np.einsum("ij,ijk->ik", w, d)
    sxx = np.einsum("ij,ijk,ijl->ikl", w, d, d)
    tx = np.einsum("ij,ijk,j->ik", w, d, y)

    lhs = np.empty((n, p + 1, p + 1))
    lhs[:, 0, 0] = s0
    lhs[:, 0, 1:] = sx
    lhs[:, 1:, 0] = sx
    lhs[:, 1:, 1:] = sxx
    rhs = np.concatenate([t0[:, None], tx], axis=1)

    out = np.full(n, np.nan)
    # jitter keeps near-empty windows solvable; bad fits drop to the fallback
    scale = np.maximum(np.abs(lhs).max(axis=(1, 2)), 1e-300)
    eye = np.eye(p + 1)
    try:
        coef = np.linalg.solve(lhs + 1e-9 * scale[:, None, None] * eye, rhs[:, :, None])
        out = coef[:, 0, 0]
    except np.linalg.LinAlgError:
        pass
    windowed = s0 > 0.0
    fallback = windowed & ~np.isfinite(out)
    if np.any(fallback):
        out[fallback] = t0[fallback] / s0[fallback]
    if np.any(~windowed):
        # empty window: use the nearest neighbours instead
        dist2 = np.sum((d / bandwidths) ** 2, axis=2)
        for i in np.flatnonzero(~windowed):
            order = np.argsort(dist2[i])
            if leave_one_out:
                order = order[order != i]
            out[i] = float(y[order[: max(2, p + 1)]].mean())
    return out


def _select_bandwidths(x: np.ndarray, y: np.ndarray, base: np.ndarray) -> np.ndarray:
    """Scale the rule-of-thumb bandwidths by the best leave-one-out multiplier.

    Ties prefer the smoother fit, so a signal-free target collapses toward
    the global linear regression instead of chasing noise.
    """
    best_mult, best_score = None, np.inf
    for mult in _BANDWIDTH_MULTIPLIERS:
        pred = _loclin_smooth(x, y, base * mult, leave_one_out=True)
        score = float(np.mean((y - pred) ** 2))
        if not np.isfinite(score):
            continue
        if best_mult is None or score <= best_score:
            best_mult, best_score = mult, score
    if best_mult is None:
        best_mult = 1.0
    return base * best_mult


def fit_variance(x: np.ndarray, r_integrated: np.ndarray, config: EstimatorConfig) -> VarianceModel:
    """Fit sigma2(X) from log integrated squared residuals.

    The smoother bandwidth starts from the per-coordinate rule of thumb and
    is rescaled by leave-one-out CV over a fixed smoothness ladder, so a
    homoskedastic target yields a nearly flat variance function rather than
    an overfit one.  Fitted variances are floored at
    ``config.variance_floor * max(1, mean(r_integrated))``.  Degenerate
    covariates (zero spread in every coordinate) trigger a flagged constant
    model exp(mean log R).
    """
    x = np.asarray(x, dtype=float)
    r_integrated = np.asarray(r_integrated, dtype=float)
    if x.ndim != 2 or r_integrated.ndim != 1 or x.shape[0] != r_integrated.size:
        raise DimensionMismatchError("covariates and residual vector must align")
    if x.shape[0] < 3:
        raise ValidationError("need at least 3 subjects to fit the variance model")
    if np.any(r_integrated <= 0.0):
        raise ValidationError("integrated squared residuals must be positive")

    floor = config.variance_floor * max(1.0, float(r_integrated.mean()))
    log_r = np.log(r_integrated)
    base = _rule_of_thumb_bandwidths(x)
    degenerate = ~(base > 0.0)
    if np.all(degenerate):
        sigma2 = np.full(x.shape[0], max(float(np.exp(log_r.mean())), floor))
        return VarianceModel(
            x=x, sigma2=sigma2, bandwidths=base, floor=floor, is_constant=True
        )
    keep = ~degenerate
    x_used = x[:, keep] if np.any(degenerate) else x
    bandwidths = _select_bandwidths(x_used, log_r, base[keep])
    mu = _loclin_smooth(x_used, log_r, bandwidths)
    sigma2 = np.maximum(np.exp(mu), floor)
    full_bw = np.zeros(x.shape[1])
    full_bw[keep] = bandwidths
    return VarianceModel(x=x, sigma2=sigma2, bandwidths=full_bw, floor=floor)


def build_instruments(x: np.ndarray, vm: VarianceModel) -> InstrumentSet:
    """Instrument blocks [X, X / sigma2(X)] for the fitted variance model."""
    x = np.asarray(x, dtype=float)
    if x.shape != vm.x.shape:
        raise DimensionMismatchError("variance model was fitted on a different covariate matrix")
    return InstrumentSet(np.hstack([x, x / vm.sigma2[:, None]]))
