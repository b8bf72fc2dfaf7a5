"""Eigen-decomposition of the moment-process covariance by lining up components.

A d-variate process on [0, 1] is rearranged into one scalar process on
[0, d]; its covariance then admits an ordinary functional eigenproblem.  On
the grid this becomes a quadrature-weighted matrix eigenproblem: with
trapezoid weights W, the symmetric matrix sqrt(W) M sqrt(W) is decomposed
and eigenvectors are unscaled by sqrt(W), which makes the returned vector
eigenfunctions orthonormal in the integral sense (the sum over components
of the integrated products is 0 or 1).

Eigenpair estimation error grows as the smoothing bandwidth shrinks relative
to the grid resolution; retained components should therefore be read together
with the bandwidth that produced the moment sample.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import (
    DegenerateCovarianceError,
    Grid,
    ValidationError,
    quadrature_weights,
)
from .moments import MomentCovariance

RELATIVE_DROP = 1e-12   # eigenvalues below this fraction of the largest are dropped
ALPHA_FLOOR = 1e-8      # ridge floor as a fraction of the top eigenvalue squared
_NEG_TOL = 1e-10        # most negative admissible raw eigenvalue, relative


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Eigenpairs of the lined-up covariance operator.

    eigenvalues are sorted descending; functions has shape (K, d, r).
    kappa0 and alpha stay None until select_truncation fills them.
    """

    eigenvalues: np.ndarray
    functions: np.ndarray
    grid: Grid
    kappa0: int = None
    alpha: float = None

    @property
    def n_components(self) -> int:
        return self.eigenvalues.size

    @property
    def dim(self) -> int:
        return self.functions.shape[1]

    def weights(self) -> np.ndarray:
        """Spectral filter lambda_k / (lambda_k^2 + alpha) over all components."""
        if self.alpha is None:
            raise ValidationError("alpha not set; call select_truncation first")
        lam = self.eigenvalues
        return lam / (lam * lam + self.alpha)

    def functions_at(self, s0: float) -> np.ndarray:
        """Eigenfunction values at s0, shape (K, d); linear interpolation off-grid."""
        pts = self.grid.points
        idx = int(np.searchsorted(pts, s0))
        if idx < pts.size and pts[idx] == s0:
            return self.functions[:, :, idx]
        if idx == 0:
            return self.functions[:, :, 0]
        if idx >= pts.size:
            return self.functions[:, :, -1]
        left, right = pts[idx - 1], pts[idx]
        t = (s0 - left) / (right - left)
        return (1.0 - t) * self.functions[:, :, idx - 1] + t * self.functions[:, :, idx]


def _fix_signs(funcs: np.ndarray) -> np.ndarray:
    # convention: the first entry of each eigenfunction's largest-magnitude
    # component is nonnegative
    for k in range(funcs.shape[0]):
        comp = int(np.argmax(np.max(np.abs(funcs[k]), axis=1)))
        if funcs[k, comp, 0] < 0.0:
            funcs[k] = -funcs[k]
    return funcs


def lineup_eigen(cov: MomentCovariance) -> EigenSystem:
    """Solve the quadrature-weighted eigenproblem of the lined-up covariance.

    Returned pairs satisfy the discrete Fredholm identity
    sum_{l', j'} C_{l,l'}(s_j, s_{j'}) phi_{k,l'}(s_{j'}) w_{j'} =
    lambda_k phi_{k,l}(s_j) with trapezoid weights w.  Eigenvalues below
    RELATIVE_DROP times the largest are discarded; kappa0 and alpha are left
    unset.
    """
    if not np.all(np.isfinite(cov.samples)):
        raise ValidationError("non-finite covariance input")
    d, r = cov.dim, cov.grid.size
    w_full = np.tile(quadrature_weights(cov.grid), d)
    sqrt_w = np.sqrt(w_full)

    n = cov.n_subjects
    if n < d * r:
        # Gram factorization: the weighted matrix is (G W^1/2)^T (G W^1/2) / n,
        # so an SVD of the n x dr factor yields the exact nonzero eigenpairs.
        scaled = cov.samples * sqrt_w[None, :] / np.sqrt(n)
        _, svals, vt = np.linalg.svd(scaled, full_matrices=False)
        lam = svals * svals
        vecs = vt
    else:
        b = sqrt_w[:, None] * cov.matrix * sqrt_w[None, :]
        b = (b + b.T) / 2.0
        lam, u = np.linalg.eigh(b)
        lam = lam[::-1]
        vecs = u.T[::-1]
        if lam[0] > 0.0 and lam[-1] < -_NEG_TOL * lam[0]:
            raise ValidationError(
                f"covariance is not positive semidefinite (min eigenvalue {lam[-1]:.3e})"
            )
    if lam.size == 0 or lam[0] <= 0.0:
        raise DegenerateCovarianceError("covariance has no positive eigenvalue")

    keep = lam >= RELATIVE_DROP * lam[0]
    lam = lam[keep]
    funcs = (vecs[keep] / sqrt_w[None, :]).reshape(-1, d, r)
    funcs = _fix_signs(np.ascontiguousarray(funcs))
    return EigenSystem(eigenvalues=lam, functions=funcs, grid=cov.grid)


def select_truncation(eigsys: EigenSystem, fve: float) -> EigenSystem:
    """Pick the retained count by fraction of variance explained and set alpha.

    kappa0 is the smallest K whose leading eigenvalue share reaches ``fve``;
    alpha = max(lambda_{kappa0+1}^2, ALPHA_FLOOR * lambda_1^2), treating a
    missing next eigenvalue as zero.
    """
    if not (0.0 < fve < 1.0):
        raise ValidationError("fve must lie in (0, 1)")
    lam = eigsys.eigenvalues
    total = float(lam.sum())
    if total <= 0.0:
        raise DegenerateCovarianceError("all eigenvalues are zero")
    share = np.cumsum(lam) / total
    kappa0 = int(np.searchsorted(share, fve - 1e-15) + 1)
    kappa0 = min(kappa0, lam.size)
    lam_next = float(lam[kappa0]) if kappa0 < lam.size else 0.0
    alpha = max(lam_next * lam_next, ALPHA_FLOOR * float(lam[0]) ** 2)
    return replace(eigsys, kappa0=kappa0, alpha=alpha)
