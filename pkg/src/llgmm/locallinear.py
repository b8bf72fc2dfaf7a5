"""Initial local-linear least-squares fit and k-fold bandwidth selection.

At each evaluation point the weighted normal equations factor as a Kronecker
product of a 2x2 kernel-moment matrix with the covariate Gram matrix, so a
full coefficient path costs little more than the kernel weight table.
"""

from __future__ import annotations

import numpy as np

from .core import (
    CoefficientEstimate,
    EmptyWindowError,
    EstimatorConfig,
    FunctionalDataset,
    Grid,
    NoFeasibleBandwidthError,
    SingularSystemError,
    ValidationError,
)
from .kernel import kernel_eval

_SYM_TOL = 1e-9


def default_bandwidth_grid(grid: Grid, num_candidates: int = 12, upper: float = 0.5):
    """Geometric candidate grid from twice the largest spacing up to ``upper``.

    The lower bound guarantees that every evaluation window contains at
    least two grid points.
    """
    lo = 2.0 * float(np.max(np.diff(grid.points)))
    if lo >= upper:
        return (upper,)
    return tuple(np.geomspace(lo, upper, num_candidates))


def _check_sym_psd(mat: np.ndarray, where: str) -> None:
    scale = max(float(np.max(np.abs(mat))), 1.0)
    if float(np.max(np.abs(mat - mat.T))) > _SYM_TOL * scale:
        raise SingularSystemError(f"{where}: assembled system is not symmetric")
    if mat.shape[0] == 2:
        tr = mat[0, 0] + mat[1, 1]
        det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
        ok = tr >= -_SYM_TOL * scale and det >= -_SYM_TOL * scale * scale
    else:
        ok = float(np.linalg.eigvalsh(mat)[0]) >= -_SYM_TOL * scale
    if not ok:
        raise SingularSystemError(f"{where}: assembled system is not positive semidefinite")


def solve_local_system(lhs: np.ndarray, rhs: np.ndarray, ridge_jitter: float, where: str) -> np.ndarray:
    """Solve a symmetric PSD local system, retrying once with ridge jitter.

    Raises SingularSystemError with condition diagnostics when the jittered
    system still fails.
    """
    _check_sym_psd(lhs, where)

    def attempt(m):
        try:
            sol = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            return None
        if not np.all(np.isfinite(sol)):
            return None
        resid = float(np.linalg.norm(m @ sol - rhs))
        bound = 1e-8 * (float(np.linalg.norm(m)) * float(np.linalg.norm(sol)) + float(np.linalg.norm(rhs)))
        if resid > bound + 1e-300:
            return None
        return sol

    sol = attempt(lhs)
    if sol is not None:
        return sol
    dim = lhs.shape[0]
    jitter = ridge_jitter * float(np.trace(lhs)) / dim
    jittered = lhs + jitter * np.eye(dim)
    sol = attempt(jittered)
    if sol is not None:
        return sol
    cond = float(np.linalg.cond(lhs))
    raise SingularSystemError(
        f"{where}: singular local system after jitter {jitter:.3e} (cond={cond:.3e})"
    )


def _gram_and_cross(data: FunctionalDataset):
    x = data.covariates
    n = x.shape[0]
    gram = x.T @ x / n
    gram = (gram + gram.T) / 2.0
    cross = x.T @ data.responses  # (p, r)
    return gram, cross


def _lle_solve_point(gram, b_top, b_bot, s0, s_sums, n, r, h, ridge_jitter):
    s0_, s1_, s2_ = s_sums
    if s0_ <= 0.0:
        raise EmptyWindowError(f"no kernel weight is positive at s0={s0:g} with h={h:g}")
    mz = np.array([[s0_, s1_], [s1_, s2_]]) / r
    lhs = np.kron(mz, gram)
    rhs = np.concatenate([b_top, b_bot]) / (n * r)
    gamma = solve_local_system(lhs, rhs, ridge_jitter, where=f"local fit at s0={s0:g}")
    p = gram.shape[0]
    return gamma[:p], gamma[p:]


def lle_at(data: FunctionalDataset, s0: float, h: float, ridge_jitter: float = 1e-10):
    """Local-linear estimate (beta, h*dbeta) at a single location."""
    if not h > 0.0:
        raise ValidationError("bandwidth must be positive")
    gram, cross = _gram_and_cross(data)
    pts = data.grid.points
    u = (pts - s0) / h
    w = kernel_eval(u) / h
    wu = w * u
    s_sums = (float(w.sum()), float(wu.sum()), float((wu * u).sum()))
    b_top = cross @ w
    b_bot = cross @ wu
    n, r = data.responses.shape
    return _lle_solve_point(gram, b_top, b_bot, s0, s_sums, n, r, h, ridge_jitter)


def lle_curve(data: FunctionalDataset, h: float, ridge_jitter: float = 1e-10) -> CoefficientEstimate:
    """Local-linear coefficient path at every grid point."""
    if not h > 0.0:
        raise ValidationError("bandwidth must be positive")
    gram, cross = _gram_and_cross(data)
    pts = data.grid.points
    n, r = data.responses.shape
    p = data.n_covariates

    u_mat = (pts[None, :] - pts[:, None]) / h
    w_mat = kernel_eval(u_mat) / h
    wu_mat = w_mat * u_mat
    s0v = w_mat.sum(axis=1)
    s1v = wu_mat.sum(axis=1)
    s2v = (wu_mat * u_mat).sum(axis=1)
    b_top = w_mat @ cross.T  # (r, p)
    b_bot = wu_mat @ cross.T

    beta = np.empty((r, p))
    dbeta = np.empty((r, p))
    for m in range(r):
        beta[m], dbeta[m] = _lle_solve_point(
            gram, b_top[m], b_bot[m], pts[m],
            (float(s0v[m]), float(s1v[m]), float(s2v[m])), n, r, h, ridge_jitter,
        )
    return CoefficientEstimate(grid=data.grid, beta=beta, dbeta_scaled=dbeta, bandwidth=h)


def fold_assignments(n: int, folds: int, seed: int) -> np.ndarray:
    """Deterministic fold labels: seeded shuffle, then round-robin."""
    if folds < 2:
        raise ValidationError("need at least 2 folds")
    if folds > n:
        raise ValidationError(f"cannot split {n} subjects into {folds} folds")
    perm = np.random.default_rng(seed).permutation(n)
    assign = np.empty(n, dtype=int)
    assign[perm] = np.arange(n) % folds
    return assign


def cv_scores(data: FunctionalDataset, candidates, config: EstimatorConfig, fit) -> np.ndarray:
    """Held-out prediction MSE for each bandwidth candidate.

    ``fit(train_data, train_indices, h)`` must return a CoefficientEstimate
    on the full grid.  Candidates whose fit fails anywhere score inf.
    """
    n, r = data.responses.shape
    assign = fold_assignments(n, config.cv_folds, config.cv_seed)
    folds = [np.where(assign == f)[0] for f in range(config.cv_folds)]
    train_sets = [
        (np.where(assign != f)[0], data.subset(np.where(assign != f)[0])) for f in range(config.cv_folds)
    ]
    scores = np.empty(len(candidates))
    for c, h in enumerate(candidates):
        sse = 0.0
        try:
            for f, test_idx in enumerate(folds):
                train_idx, train_data = train_sets[f]
                est = fit(train_data, train_idx, h)
                pred = data.covariates[test_idx] @ est.beta.T
                diff = data.responses[test_idx] - pred
                sse += float(np.sum(diff * diff))
        except (EmptyWindowError, SingularSystemError):
            scores[c] = np.inf
            continue
        scores[c] = sse / (n * r)
    return scores


def cv_bandwidth(data: FunctionalDataset, config: EstimatorConfig, fit) -> float:
    """Bandwidth with the lowest k-fold CV score; ties go to the larger h."""
    candidates = config.bandwidth_grid
    if candidates is None:
        candidates = default_bandwidth_grid(data.grid)
    order = np.argsort(candidates)
    sorted_h = [float(candidates[i]) for i in order]
    scores = cv_scores(data, sorted_h, config, fit)
    if not np.any(np.isfinite(scores)):
        raise NoFeasibleBandwidthError(
            f"all {len(sorted_h)} bandwidth candidates failed to fit"
        )
    best_h, best_score = None, np.inf
    for h, sc in zip(sorted_h, scores):
        if sc <= best_score:
            best_h, best_score = h, sc
    return best_h


def lle_fit(data: FunctionalDataset, train_indices, h: float, ridge_jitter: float = 1e-10) -> CoefficientEstimate:
    """Curve-estimator adapter for cv_bandwidth (train indices unused)."""
    return lle_curve(data, h, ridge_jitter)
