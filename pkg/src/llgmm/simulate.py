"""Scenario generators, error metrics, and the replication harness.

Data follow Y_i(s) = X_i * cos(2*pi*s) + U_i(s) on the midpoint grid
s_j = (j - 0.5)/r, with X_i ~ Normal(1, 1) and a two-component error process
U_i(s) = xi_1i * psi1(s) + xi_2i * psi2(s) whose component variances are
3 * sigma2(X_i) * theta0^2 and 1.5 * sigma2(X_i) * theta0^2.  The variance
function sigma2 is one of:

    S0: 1                 S1: (1 + x^2/2)^2     S2: exp(1 + x^2/2)
    S3: exp(1 + |x| + x^2)                      S4: (1 + |x|/2)^2

The noise scale theta0 targets a noise-to-signal ratio of 1/snr_theta.  The
generator pins that ratio on the realized sample: S2 and S3 give sigma2(X) an
infinite population mean under Normal(1, 1) covariates, so a population-mean
calibration either diverges or collapses with the Monte Carlo sample used to
estimate it, while the realized-sample version is finite, replicate-stable,
and keeps the intended ratio exact.  calibrate_theta0 exposes the
population-level reference value.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache, partial

import numpy as np

from .core import (
    CoefficientEstimate,
    DimensionMismatchError,
    EstimatorConfig,
    FunctionalDataset,
    Grid,
    LLGMMError,
    ValidationError,
    quadrature_weights,
)
from .gmm import estimate_full

VARIANCE_FUNCTIONS = {
    "S0": lambda x: np.ones_like(x),
    "S1": lambda x: (1.0 + x * x / 2.0) ** 2,
    "S2": lambda x: np.exp(1.0 + x * x / 2.0),
    "S3": lambda x: np.exp(1.0 + np.abs(x) + x * x),
    "S4": lambda x: (1.0 + np.abs(x) / 2.0) ** 2,
}

SCENARIO_NAMES = tuple(sorted(VARIANCE_FUNCTIONS))

# fixed stream for the population-level Monte Carlo in calibrate_theta0,
# independent of any cell seed so the reference value is a scenario constant
_CALIBRATION_SEED = 202406


@dataclass(frozen=True)
class Scenario:
    """One simulation cell: variance regime, noise ratio, and sizes."""

    variance: str
    snr_theta: float
    n: int
    r: int = 200
    replicates: int = 500
    seed: int = 0

    def __post_init__(self):
        if self.variance not in VARIANCE_FUNCTIONS:
            raise ValidationError(
                f"unknown variance regime {self.variance!r}; choose from {SCENARIO_NAMES}"
            )
        if self.n < 2 or self.r < 2:
            raise ValidationError("need n >= 2 subjects and r >= 2 grid points")
        if not self.snr_theta > 0.0:
            raise ValidationError("snr_theta must be positive")
        if self.replicates < 1:
            raise ValidationError("need at least one replicate")


def default_grid(r: int) -> Grid:
    """Midpoint grid s_j = (j - 0.5)/r."""
    return Grid((np.arange(1, r + 1) - 0.5) / r)


def beta_path(grid: Grid) -> np.ndarray:
    """True coefficient cos(2*pi*s) as an (r, 1) column."""
    return np.cos(2.0 * np.pi * grid.points)[:, None]


def basis_psi(grid: Grid):
    """The two error-basis functions, normalized to unit integral of squares.

    psi1 is proportional to 1.5 - sin(2*pi*s) - cos(2*pi*s), psi2 to
    sin(4*pi*s); normalization constants come from the grid quadrature, not
    from closed forms.
    """
    s = grid.points
    w = quadrature_weights(grid)
    raw1 = 1.5 - np.sin(2.0 * np.pi * s) - np.cos(2.0 * np.pi * s)
    raw2 = np.sin(4.0 * np.pi * s)
    psi1 = raw1 / np.sqrt(float((raw1 * raw1) @ w))
    psi2 = raw2 / np.sqrt(float((raw2 * raw2) @ w))
    return psi1, psi2


@lru_cache(maxsize=None)
def expected_sigma2(variance: str, n_draws: int = 10**6) -> float:
    """Population mean of sigma2(X) for X ~ Normal(1, 1).

    Analytic for the homoskedastic regime, otherwise a fixed-seed Monte
    Carlo average.  For S2 and S3 the population mean is infinite, so the
    returned value is an unstable function of ``n_draws``; it is exposed for
    reference and ordering checks only.
    """
    if variance == "S0":
        return 1.0
    rng = np.random.default_rng(_CALIBRATION_SEED)
    x = 1.0 + rng.standard_normal(n_draws)
    return float(VARIANCE_FUNCTIONS[variance](x).mean())


def _pooled_signal_variance(x_sq_mean: float, x_mean: float, grid: Grid) -> float:
    """Pooled variance of the noise-free prediction X*beta(s) over subjects and s."""
    w = quadrature_weights(grid)
    b = beta_path(grid)[:, 0]
    length = float(w.sum())
    second = x_sq_mean * float((b * b) @ w)
    first = x_mean * float(b @ w)
    return (second - first * first / length) / length


def calibrate_theta0(scenario: Scenario) -> float:
    """Population-level noise scale for a scenario.

    Solves 4.5 * E[sigma2(X)] * theta0^2 = snr^{-2} * pooled variance of the
    noise-free prediction X*beta(s) (second moment about the pooled mean,
    E[X^2] * integral of beta^2 here since beta integrates to ~0).  Larger
    snr_theta means less noise, matching cells where errors shrink as
    snr_theta grows.
    """
    grid = default_grid(scenario.r)
    signal_var = _pooled_signal_variance(2.0, 1.0, grid)  # X ~ Normal(1, 1)
    esig = expected_sigma2(scenario.variance)
    return float(np.sqrt(signal_var / (4.5 * esig)) / scenario.snr_theta)


def _replicate_draws(scenario: Scenario, replicate_index: int) -> np.ndarray:
    """Standard-normal draws for one replicate, shape (n, 3).

    Stream is a counter-based Philox keyed by (seed, replicate); rows fill in
    subject order as (X-shift, score 1, score 2).
    """
    key = np.array([scenario.seed % 2**64, replicate_index % 2**64], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((scenario.n, 3))


def generate(scenario: Scenario, replicate_index: int):
    """Draw one replicate; returns (dataset, true beta path of shape (r, 1)).

    The noise scale is calibrated on the realized sample so that the pooled
    noise-to-signal variance ratio equals snr_theta^{-2} exactly; an
    infinite snr_theta yields noise-free data.
    """
    grid = default_grid(scenario.r)
    truth = beta_path(grid)
    psi1, psi2 = basis_psi(grid)
    z = _replicate_draws(scenario, replicate_index)
    x = 1.0 + z[:, 0]
    signal = np.outer(x, truth[:, 0])
    if np.isinf(scenario.snr_theta):
        ds = FunctionalDataset(grid=grid, responses=signal, covariates=x[:, None])
        return ds, truth

    sig = np.sqrt(VARIANCE_FUNCTIONS[scenario.variance](x))
    core = sig[:, None] * (
        np.sqrt(3.0) * np.outer(z[:, 1], psi1) + np.sqrt(1.5) * np.outer(z[:, 2], psi2)
    )
    w = quadrature_weights(grid)
    v_noise = float(((core * core) @ w).mean()) / float(w.sum())
    v_signal = _pooled_signal_variance(float((x * x).mean()), float(x.mean()), grid)
    theta0 = 0.0 if v_noise <= 0.0 else np.sqrt(v_signal / v_noise) / scenario.snr_theta
    ds = FunctionalDataset(
        grid=grid, responses=signal + theta0 * core, covariates=x[:, None]
    )
    return ds, truth


def _metric(est: CoefficientEstimate, truth: np.ndarray, square: bool) -> np.ndarray:
    truth = np.asarray(truth, dtype=float)
    if truth.shape != est.beta.shape:
        raise DimensionMismatchError(
            f"truth has shape {truth.shape}, estimate has {est.beta.shape}"
        )
    diff = est.beta - truth
    w = est.grid.spacings
    if square:
        return (diff * diff).T @ w
    return np.abs(diff).T @ w


def imse(est: CoefficientEstimate, truth: np.ndarray) -> np.ndarray:
    """Integrated squared error per coefficient, weighted by the grid spacings."""
    return _metric(est, truth, square=True)


def imae(est: CoefficientEstimate, truth: np.ndarray) -> np.ndarray:
    """Integrated absolute error per coefficient."""
    return _metric(est, truth, square=False)


@dataclass(frozen=True, eq=False)
class MonteCarloReport:
    """Per-replicate metrics and their summaries for one simulation cell.

    metrics maps method name ("lle", "llgmm") to arrays of shape
    (successful replicates, p).  failures lists (replicate, stage, message)
    for excluded replicates.
    """

    scenario: Scenario
    metrics: dict
    failures: tuple
    wall_time_s: float

    @property
    def n_success(self) -> int:
        return self.metrics["imse_lle"].shape[0]

    def mean(self, key: str) -> np.ndarray:
        vals = self.metrics[key]
        if vals.shape[0] == 0:
            return np.full(vals.shape[1], np.nan)
        return vals.mean(axis=0)

    def standard_error(self, key: str) -> np.ndarray:
        vals = self.metrics[key]
        if vals.shape[0] < 2:
            return np.zeros(vals.shape[1])
        return vals.std(axis=0, ddof=1) / np.sqrt(vals.shape[0])

    def as_dict(self, include_wall_time: bool = True) -> dict:
        out = {
            "scenario": {
                "variance": self.scenario.variance,
                "snr_theta": self.scenario.snr_theta,
                "n": self.scenario.n,
                "r": self.scenario.r,
                "replicates": self.scenario.replicates,
                "seed": self.scenario.seed,
            },
            "methods": {
                method: {
                    "imse_mean": [float(v) for v in self.mean(f"imse_{method}")],
                    "imse_se": [float(v) for v in self.standard_error(f"imse_{method}")],
                    "imae_mean": [float(v) for v in self.mean(f"imae_{method}")],
                    "imae_se": [float(v) for v in self.standard_error(f"imae_{method}")],
                }
                for method in ("lle", "llgmm")
            },
            "failures": len(self.failures),
            "failure_detail": [
                {"replicate": rep, "stage": stage, "message": msg}
                for rep, stage, msg in self.failures
            ],
        }
        if include_wall_time:
            out["wall_time_s"] = self.wall_time_s
        return out


def _limit_worker_threads():
    global _THREAD_LIMIT
    try:
        from threadpoolctl import threadpool_limits

        _THREAD_LIMIT = threadpool_limits(limits=1)
    except Exception:
        _THREAD_LIMIT = None


def _replicate_metrics(scenario: Scenario, config: EstimatorConfig, rep: int):
    try:
        ds, truth = generate(scenario, rep)
        lle_est, gmm_est, _ = estimate_full(ds, config)
        return (
            "ok",
            imse(lle_est, truth),
            imae(lle_est, truth),
            imse(gmm_est, truth),
            imae(gmm_est, truth),
        )
    except LLGMMError as exc:
        stage = getattr(exc, "stage", exc.__class__.__name__)
        return ("fail", rep, stage, str(exc))


def run_cell(
    scenario: Scenario, config: EstimatorConfig = EstimatorConfig(), workers: int = 1
) -> MonteCarloReport:
    """Run all replicates of one cell and aggregate the error metrics.

    Replicates are independent (each owns its RNG stream) and may run in a
    process pool; results aggregate in replicate order either way.  Failed
    replicates are excluded from the summaries but recorded.
    """
    t0 = time.perf_counter()
    task = partial(_replicate_metrics, scenario, config)
    reps = range(scenario.replicates)
    if workers > 1 and scenario.replicates > 1:
        chunk = max(1, scenario.replicates // (workers * 8))
        with ProcessPoolExecutor(
            max_workers=workers, initializer=_limit_worker_threads
        ) as pool:
            results = list(pool.map(task, reps, chunksize=chunk))
    else:
        results = [task(rep) for rep in reps]

    ok = [res for res in results if res[0] == "ok"]
    failures = tuple((res[1], res[2], res[3]) for res in results if res[0] == "fail")
    p = ok[0][1].size if ok else 1
    metrics = {
        "imse_lle": np.array([res[1] for res in ok]).reshape(len(ok), p),
        "imae_lle": np.array([res[2] for res in ok]).reshape(len(ok), p),
        "imse_llgmm": np.array([res[3] for res in ok]).reshape(len(ok), p),
        "imae_llgmm": np.array([res[4] for res in ok]).reshape(len(ok), p),
    }
    return MonteCarloReport(
        scenario=scenario,
        metrics=metrics,
        failures=failures,
        wall_time_s=time.perf_counter() - t0,
    )
