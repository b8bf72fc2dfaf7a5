"""Similarity networks and average-path-length curves from scalar node measurements.

Each subject's per-region measurements become a scaled absolute-difference
similarity matrix; thresholding it over a sweep produces a family of graphs
whose average shortest-path length, as a function of the threshold, is a
functional response.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import FunctionalDataset, Grid, ValidationError
from .locallinear import lle_curve


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Symmetric nonnegative matrix with zero diagonal, scaled to [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ValidationError("similarity matrix must be square with at least 2 nodes")
        if not np.all(np.isfinite(v)):
            raise ValidationError("non-finite similarity entry")
        if np.any(v < 0.0) or np.max(np.abs(v - v.T)) > 0.0 or np.any(np.diag(v) != 0.0):
            raise ValidationError("similarity matrix must be symmetric, nonnegative, zero-diagonal")
        if v.max() > 1.0:
            raise ValidationError("similarity entries must be scaled to [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class APLCurve:
    """Average path length per threshold, with connected-pair counts."""

    thresholds: np.ndarray
    apl: np.ndarray
    connected_pairs: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thresholds, dtype=float)
        a = np.asarray(self.apl, dtype=float)
        c = np.asarray(self.connected_pairs, dtype=int)
        if t.size != a.size or t.size != c.size:
            raise ValidationError("threshold/apl/count lengths differ")
        if np.any(np.diff(t) <= 0.0):
            raise ValidationError("thresholds must be strictly increasing")
        if not np.all(np.isfinite(a)):
            raise ValidationError("APL values must be finite")
        object.__setattr__(self, "thresholds", t)
        object.__setattr__(self, "apl", a)
        object.__setattr__(self, "connected_pairs", c)


def default_thresholds() -> np.ndarray:
    """The 99-point sweep 0.01, 0.02, ..., 0.99."""
    return np.arange(1, 100) / 100.0


def similarity_from_measurements(y) -> SimilarityMatrix:
    """Absolute pairwise differences |y_k - y_l| scaled by their maximum."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 2:
        raise ValidationError("need at least 2 measurements")
    if not np.all(np.isfinite(y)):
        raise ValidationError("non-finite measurement")
    c = np.abs(y[:, None] - y[None, :])
    top = c.max()
    if top > 0.0:
        c = c / top
    np.fill_diagonal(c, 0.0)
    return SimilarityMatrix(c)


def threshold_adjacency(sim: SimilarityMatrix, t: float) -> np.ndarray:
    """Boolean adjacency: edge when similarity strictly exceeds t."""
    if not (0.0 < t < 1.0):
        raise ValidationError("threshold must lie strictly inside (0, 1)")
    adj = sim.values > t
    np.fill_diagonal(adj, False)
    return adj


def shortest_path_stats(adj: np.ndarray):
    """(mean shortest-path length over connected pairs, connected pair count).

    Breadth-first search from every node; unordered pairs with no path are
    ignored.  A graph with no connected pair reports (0.0, 0).
    """
    adj = np.asarray(adj, dtype=bool)
    if adj.ndim != 2 or adj.shape[0] != adj.shape[1]:
        raise ValidationError("adjacency must be square")
    m = adj.shape[0]
    neighbors = [np.flatnonzero(adj[k]) for k in range(m)]
    total = 0
    pairs = 0
    for start in range(m):
        dist = np.full(m, -1, dtype=int)
        dist[start] = 0
        queue = deque([start])
        while queue:
            node = queue.popleft()
            for nxt in neighbors[node]:
                if dist[nxt] < 0:
                    dist[nxt] = dist[node] + 1
                    queue.append(nxt)
        reachable = dist[start + 1 :] >= 0
        total += int(dist[start + 1 :][reachable].sum())
        pairs += int(reachable.sum())
    return (total / pairs if pairs else 0.0), pairs


def average_path_length(adj: np.ndarray) -> float:
    """Mean shortest-path length over connected unordered pairs (0 when none)."""
    return shortest_path_stats(adj)[0]


def apl_curve(sim: SimilarityMatrix, thresholds=None) -> APLCurve:
    """Average path length across a threshold sweep (default 0.01..0.99)."""
    t = default_thresholds() if thresholds is None else np.asarray(thresholds, dtype=float)
    apl = np.empty(t.size)
    pairs = np.empty(t.size, dtype=int)
    for i, ti in enumerate(t):
        apl[i], pairs[i] = shortest_path_stats(threshold_adjacency(sim, float(ti)))
    return APLCurve(thresholds=t, apl=apl, connected_pairs=pairs)


def smooth_curve(curve: APLCurve, bandwidth: float) -> APLCurve:
    """Optional local-linear presmoothing of an APL curve over thresholds.

    Runs the local-linear smoother with a unit covariate on the single curve;
    raw curves are the default everywhere else.
    """
    grid = Grid(curve.thresholds)
    ds = FunctionalDataset(
        grid=grid,
        responses=np.vstack([curve.apl, curve.apl]),
        covariates=np.ones((2, 1)),
    )
    est = lle_curve(ds, bandwidth)
    return APLCurve(
        thresholds=curve.thresholds,
        apl=est.beta[:, 0],
        connected_pairs=curve.connected_pairs,
    )
