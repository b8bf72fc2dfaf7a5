"""Shared domain types, grid quadrature, and CSV input/output.

Everything downstream (smoothing, moment construction, simulation) works on
the small set of immutable containers defined here: a design grid on [0, 1],
a dataset of response curves with scalar covariates, and a fitted coefficient
path.  All containers validate on construction and are safe to share across
worker processes.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------

class LLGMMError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(LLGMMError, ValueError):
    """Invalid value or broken container invariant."""


class DimensionMismatchError(ValidationError):
    """Array shapes or grids that were required to agree do not."""


class ParseError(ValidationError):
    """Malformed input file."""


class EmptyWindowError(LLGMMError):
    """No kernel weight is positive at an evaluation point (bandwidth too small)."""


class SingularSystemError(LLGMMError):
    """A local normal-equation system stayed singular after ridge jitter."""


class NoFeasibleBandwidthError(LLGMMError):
    """Every bandwidth candidate failed to produce a fit."""


class DegenerateCovarianceError(LLGMMError):
    """Covariance operator has no positive eigenvalue."""


class EstimationStageError(LLGMMError):
    """Failure inside the multi-step estimation pipeline, tagged with its stage."""

    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered design locations s_1 < ... < s_r inside [0, 1].

    The spacing convention prepends s_0 = 0, so the first spacing is s_1
    itself.  Spacings are therefore positive and sum to s_r.
    """

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 1 or pts.size < 2:
            raise ValidationError("grid needs at least 2 one-dimensional points")
        if not np.all(np.isfinite(pts)):
            raise ValidationError("grid points must be finite")
        if pts[0] < 0.0 or pts[-1] > 1.0:
            raise ValidationError("grid points must lie in [0, 1]")
        if np.any(np.diff(pts) <= 0.0):
            raise ValidationError("grid points must be strictly increasing")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def size(self) -> int:
        return self.points.size

    @property
    def spacings(self) -> np.ndarray:
        """Delta(s_j) = s_j - s_{j-1} with s_0 = 0."""
        return np.concatenate(([self.points[0]], np.diff(self.points)))

    def same_as(self, other: "Grid", tol: float = 0.0) -> bool:
        if self.points.size != other.points.size:
            return False
        if tol == 0.0:
            return bool(np.array_equal(self.points, other.points))
        return bool(np.max(np.abs(self.points - other.points)) <= tol)


@dataclass(frozen=True, eq=False)
class FunctionalDataset:
    """Response curves observed on a common grid, plus scalar covariates.

    responses has shape (n, r), covariates has shape (n, p).  Optional
    string ids label subjects; generated ids "1".."n" are used otherwise.
    """

    grid: Grid
    responses: np.ndarray
    covariates: np.ndarray
    ids: tuple = None

    def __post_init__(self):
        y = np.ascontiguousarray(self.responses, dtype=float)
        x = np.ascontiguousarray(self.covariates, dtype=float)
        if y.ndim != 2 or x.ndim != 2:
            raise ValidationError("responses and covariates must be 2-d arrays")
        if y.shape[0] != x.shape[0]:
            raise DimensionMismatchError(
                f"responses have {y.shape[0]} rows but covariates have {x.shape[0]}"
            )
        if y.shape[0] < 2:
            raise ValidationError("need at least 2 subjects")
        if y.shape[1] != self.grid.size:
            raise DimensionMismatchError(
                f"responses have {y.shape[1]} columns but grid has {self.grid.size} points"
            )
        if x.shape[1] < 1:
            raise ValidationError("need at least one covariate")
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(x)):
            raise ValidationError("non-finite entry in responses or covariates")
        ids = self.ids
        if ids is None:
            ids = tuple(str(i + 1) for i in range(y.shape[0]))
        else:
            ids = tuple(str(i) for i in ids)
            if len(ids) != y.shape[0]:
                raise DimensionMismatchError("ids length does not match subject count")
            if len(set(ids)) != len(ids):
                raise ValidationError("subject ids must be unique")
        y.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "responses", y)
        object.__setattr__(self, "covariates", x)
        object.__setattr__(self, "ids", ids)

    @property
    def n_subjects(self) -> int:
        return self.responses.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.covariates.shape[1]

    def subset(self, indices) -> "FunctionalDataset":
        """Row subset preserving grid and ids."""
        idx = np.asarray(indices, dtype=int)
        return FunctionalDataset(
            grid=self.grid,
            responses=self.responses[idx],
            covariates=self.covariates[idx],
            ids=tuple(self.ids[i] for i in idx),
        )


@dataclass(frozen=True, eq=False)
class CoefficientEstimate:
    """Fitted coefficient path: beta and the bandwidth-scaled slope h*dbeta.

    beta and dbeta_scaled have shape (r, p), one row per grid point.
    """

    grid: Grid
    beta: np.ndarray
    dbeta_scaled: np.ndarray
    bandwidth: float

    def __post_init__(self):
        b = np.ascontiguousarray(self.beta, dtype=float)
        db = np.ascontiguousarray(self.dbeta_scaled, dtype=float)
        if b.ndim != 2 or db.shape != b.shape:
            raise DimensionMismatchError("beta and dbeta_scaled must share shape (r, p)")
        if b.shape[0] != self.grid.size:
            raise DimensionMismatchError("coefficient rows must match grid size")
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(db))):
            raise ValidationError("non-finite coefficient entry")
        if not (self.bandwidth > 0.0 and math.isfinite(self.bandwidth)):
            raise ValidationError("bandwidth must be positive and finite")
        b.setflags(write=False)
        db.setflags(write=False)
        object.__setattr__(self, "beta", b)
        object.__setattr__(self, "dbeta_scaled", db)

    @property
    def n_covariates(self) -> int:
        return self.beta.shape[1]

    def derivative(self) -> np.ndarray:
        """Unscaled slope path dbeta(s)."""
        return self.dbeta_scaled / self.bandwidth


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning knobs shared by the estimation pipeline.

    bandwidth_grid of None means: use the default rule (geometric grid from
    twice the largest grid spacing up to 0.5).  variance_floor is a relative
    coefficient; the variance model floors fitted values at
    variance_floor * max(1, mean integrated residual).
    """

    bandwidth_grid: tuple = None
    cv_folds: int = 5
    fve: float = 0.99
    bandwidth_shrink: float = 0.75
    variance_floor: float = 1e-6
    ridge_jitter: float = 1e-10
    cv_seed: int = 0

    def __post_init__(self):
        if self.bandwidth_grid is not None:
            bg = tuple(float(h) for h in self.bandwidth_grid)
            if len(bg) == 0:
                raise ValidationError("bandwidth_grid must be nonempty")
            if any(not (h > 0.0 and math.isfinite(h)) for h in bg):
                raise ValidationError("bandwidth candidates must be positive")
            object.__setattr__(self, "bandwidth_grid", bg)
        if self.cv_folds < 2:
            raise ValidationError("cv_folds must be at least 2")
        if not (0.0 < self.fve < 1.0):
            raise ValidationError("fve must lie in (0, 1)")
        if self.bandwidth_shrink <= 0.0:
            raise ValidationError("bandwidth_shrink must be positive")
        if self.variance_floor <= 0.0:
            raise ValidationError("variance_floor must be positive")
        if self.ridge_jitter <= 0.0:
            raise ValidationError("ridge_jitter must be positive")


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

def quadrature_weights(grid: Grid) -> np.ndarray:
    """Trapezoid weights over [0, s_r] with the leading panel [0, s_1].

    The leading panel uses constant extension of the first value, so the
    first weight is s_1 + (s_2-s_1)/2.  Weights sum to s_r.
    """
    pts = grid.points
    w = np.empty(pts.size)
    d = np.diff(pts)
    w[0] = pts[0] + d[0] / 2.0
    w[-1] = d[-1] / 2.0
    if pts.size > 2:
        w[1:-1] = (pts[2:] - pts[:-2]) / 2.0
    return w


def trapezoid_integrate(values, grid: Grid) -> float:
    """Integrate grid samples over [0, s_r].

    Interior panels use the trapezoid rule; the leading panel [0, s_1]
    extends the first value as a constant.

    Raises DimensionMismatchError when the sample length differs from the
    grid, ValidationError for non-finite samples.
    """
    v = np.asarray(values, dtype=float)
    if v.ndim != 1 or v.size != grid.size:
        raise DimensionMismatchError(
            f"expected {grid.size} values, got array of shape {v.shape}"
        )
    if not np.all(np.isfinite(v)):
        raise ValidationError("cannot integrate non-finite values")
    return float(v @ quadrature_weights(grid))


# ---------------------------------------------------------------------------
# File IO
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_float(text: str, where: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{where}: cannot parse {text!r} as a number") from None
    if not math.isfinite(v):
        raise ParseError(f"{where}: non-finite value {text!r}")
    return v


def _read_rows(path: str):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    rows = [r for r in rows if r]
    if len(rows) < 2:
        raise ParseError(f"{path}: expected a header and at least one data row")
    return rows


def load_dataset(covariates_path: str, responses_path: str) -> FunctionalDataset:
    """Load a dataset from the covariates/responses CSV pair.

    covariates: header ``id,x1,...,xp``.  responses: header ``id,<s_1>,...``
    where the column names are the decimal grid locations.  Rows are matched
    by subject id; the covariate file fixes the subject order.
    """
    cov_rows = _read_rows(covariates_path)
    header = cov_rows[0]
    if len(header) < 2 or header[0] != "id":
        raise ParseError(f"{covariates_path}: header must start with 'id' and one covariate")
    p = len(header) - 1
    ids, xs = [], []
    for k, row in enumerate(cov_rows[1:], start=2):
        if len(row) != p + 1:
            raise ParseError(f"{covariates_path}: line {k} has {len(row)} fields, expected {p + 1}")
        ids.append(row[0])
        xs.append([_parse_float(c, f"{covariates_path}: line {k}") for c in row[1:]])
    if len(set(ids)) != len(ids):
        raise ParseError(f"{covariates_path}: duplicate subject id")

    resp_rows = _read_rows(responses_path)
    rheader = resp_rows[0]
    if len(rheader) < 3 or rheader[0] != "id":
        raise ParseError(f"{responses_path}: header must start with 'id' and grid locations")
    pts = np.array([_parse_float(c, f"{responses_path}: header") for c in rheader[1:]])
    if np.any(np.diff(pts) <= 0.0):
        raise ParseError(f"{responses_path}: grid locations in header must be strictly increasing")
    try:
        grid = Grid(pts)
    except ValidationError as exc:
        raise ParseError(f"{responses_path}: {exc}") from exc

    by_id = {}
    for k, row in enumerate(resp_rows[1:], start=2):
        if len(row) != grid.size + 1:
            raise ParseError(
                f"{responses_path}: line {k} has {len(row)} fields, expected {grid.size + 1}"
            )
        if row[0] in by_id:
            raise ParseError(f"{responses_path}: duplicate subject id {row[0]!r}")
        by_id[row[0]] = [_parse_float(c, f"{responses_path}: line {k}") for c in row[1:]]

    ys = []
    for sid in ids:
        if sid not in by_id:
            raise ParseError(f"{responses_path}: missing responses for subject id {sid!r}")
        ys.append(by_id.pop(sid))
    if by_id:
        extra = next(iter(by_id))
        raise ParseError(f"{covariates_path}: missing covariates for subject id {extra!r}")

    return FunctionalDataset(grid=grid, responses=np.array(ys), covariates=np.array(xs), ids=ids)


def write_dataset(ds: FunctionalDataset, covariates_path: str, responses_path: str) -> None:
    with open(covariates_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [f"x{j + 1}" for j in range(ds.n_covariates)])
        for sid, row in zip(ds.ids, ds.covariates):
            w.writerow([sid] + [_fmt(v) for v in row])
    with open(responses_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id"] + [_fmt(s) for s in ds.grid.points])
        for sid, row in zip(ds.ids, ds.responses):
            w.writerow([sid] + [_fmt(v) for v in row])


def write_estimate(est: CoefficientEstimate, path: str) -> None:
    """Write a coefficient path as ``s,beta_1,...,beta_p,dbeta_1,...,dbeta_p``.

    Values carry 17 significant digits, so a read-back reproduces the input
    exactly.  The bandwidth is not stored in the file.
    """
    p = est.n_covariates
    header = (
        ["s"]
        + [f"beta_{j + 1}" for j in range(p)]
        + [f"dbeta_{j + 1}" for j in range(p)]
    )
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for m in range(est.grid.size):
                row = [_fmt(est.grid.points[m])]
                row += [_fmt(v) for v in est.beta[m]]
                row += [_fmt(v) for v in est.dbeta_scaled[m]]
                w.writerow(row)
    except OSError as exc:
        raise LLGMMError(f"cannot write estimate to {path}: {exc}") from exc


def load_estimate(path: str, bandwidth: float) -> CoefficientEstimate:
    """Read back an estimate CSV; the bandwidth is supplied by the caller."""
    rows = _read_rows(path)
    header = rows[0]
    if header[0] != "s" or (len(header) - 1) % 2 != 0:
        raise ParseError(f"{path}: expected header s,beta_*,dbeta_*")
    p = (len(header) - 1) // 2
    pts, beta, dbeta = [], [], []
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != 2 * p + 1:
            raise ParseError(f"{path}: line {k} has {len(row)} fields, expected {2 * p + 1}")
        vals = [_parse_float(c, f"{path}: line {k}") for c in row]
        pts.append(vals[0])
        beta.append(vals[1 : p + 1])
        dbeta.append(vals[p + 1 :])
    return CoefficientEstimate(
        grid=Grid(np.array(pts)),
        beta=np.array(beta),
        dbeta_scaled=np.array(dbeta),
        bandwidth=bandwidth,
    )
