"""
From a selected bandwidth to a variance-function estimate, plus evaluation.

The single-pass procedure is:

1. select the bandwidth on the squared pseudo-residuals;
2. divide the data by the square root of the local-variogram fit at the
   observation sites;
3. fit an exponential correlation to the standardized series and estimate its
   scale;
4. rescale the local-variogram fit by ``scale / (1 - rho(h))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import optimize

from .bandwidth import DEFAULT_PHI, CandidateGrid, SelectionResult, _argmin_prefer_larger, select_bandwidth
from .errors import NumericError, ParameterError, PositivityError
from .grid import CorrelationModel, FunctionSpec, GridDesign, GridProcess, evaluate_function, lag_distance
from .kernels import KernelSpec, triweight
from .variogram import EstimateCurve, estimate_local_variogram, pseudo_residuals

logger = logging.getLogger(__name__)

#: 100 equally spaced evaluation points including both ends of [0, 1].
EVAL_GRID = np.linspace(0.0, 1.0, 100)
EVAL_GRID.flags.writeable = False

DENOM_EPS = 1e-6
DEFAULT_MAX_LAG = 10


def default_kernel() -> KernelSpec:
    """Triweight with the edge-shrinking bandwidth policy.

    The kernel is nonnegative, so the local-variogram estimate is positive
    wherever the data are not identically zero and the floor almost never
    engages.
    """
    return triweight("fixed_bandwidth_edge")


@dataclass(frozen=True, eq=False)
class StandardizedProcess:
    values: np.ndarray
    design: GridDesign
    curve: EstimateCurve


@dataclass(frozen=True)
class CorrelationFit:
    """Exponential correlation fitted to a standardized series.

    ``sigma2_star`` is the sample variance of the standardized series divided
    by the variance ``1 / (1 - rho(h))`` the fitted model implies for it, so it
    equals one when the local-variogram fit has the right overall level.
    """

    theta: float
    sigma2_star: float
    degenerate: bool = False
    lags: tuple[int, ...] = ()
    rss: float = 0.0
    zstar_variance: float | None = None

    @classmethod
    def known(cls, model: CorrelationModel) -> "CorrelationFit":
        if model.kind == "independent":
            return cls(0.0, 1.0, degenerate=True)
        return cls(float(model.theta), 1.0)

    def rho(self, d: float) -> float:
        if self.degenerate:
            return 0.0
        return float(np.exp(-abs(d) / self.theta))


@dataclass(frozen=True, eq=False)
class EvaluationReport:
    """Error summary of one variance curve.

    ``max`` is the variance-scale sup norm; ``max_sd`` is the same norm on the
    standard-deviation scale, kept for reference.
    """

    dmse: float
    max: float
    eval_points: np.ndarray
    sd_errors: np.ndarray
    variance_errors: np.ndarray

    @property
    def max_sd(self) -> float:
        return float(np.max(np.abs(self.sd_errors)))


@dataclass(frozen=True, eq=False)
class VarianceEstimate:
    curve: EstimateCurve
    selection: SelectionResult
    fit: CorrelationFit
    local_variogram: EstimateCurve


def standardize(process: GridProcess, curve: EstimateCurve) -> StandardizedProcess:
    """Divide ``Z_i`` by ``sqrt(curve(s_i))``; the mean is not removed."""
    if curve.kind != "local_variogram":
        raise ParameterError("standardization needs a local-variogram curve")
    if curve.values.shape != process.values.shape or not np.allclose(
        curve.eval_points, process.locations, rtol=0, atol=1e-12
    ):
        raise ParameterError("curve must be evaluated at the observation locations")
    if np.any(curve.values <= 0):
        raise PositivityError("local-variogram curve must be positive at every observation")
    return StandardizedProcess(process.values / np.sqrt(curve.values), process.design, curve)


def autocorrelation(x: np.ndarray, max_lag: int, center: bool = False) -> np.ndarray:
    """Sample autocorrelations at lags ``1..max_lag`` with the biased denominator.

    By default the products are taken about zero, the known mean of a
    de-trended standardized series. Removing the sample mean instead biases
    every lag downward by roughly the variance of that mean, which is large
    for long-range correlation on a bounded domain.
    """
    x = np.asarray(x, dtype=float)
    if center:
        x = x - np.mean(x)
    denom = x @ x
    return np.array([x[k:] @ x[:-k] / denom for k in range(1, max_lag + 1)])


def fit_theta_to_acf(acf: np.ndarray, spacing: float) -> tuple[float, float]:
    """Least-squares ``theta`` for ``acf[k-1] ~ exp(-k * spacing / theta)``.

    The search runs over ``log theta`` in ``[log(spacing / 10), log 10]``: a
    coarse scan locates the basin, then a bounded golden-section/Brent refine.
    """
    lags = np.arange(1, acf.size + 1) * spacing

    def loss(log_theta):
        return float(np.sum((acf - np.exp(-lags / np.exp(log_theta))) ** 2))

    lo, hi = np.log(spacing / 10.0), np.log(10.0)
    scan = np.linspace(lo, hi, 81)
    values = [loss(x) for x in scan]
    k = int(np.argmin(values))
    a, b = scan[max(k - 1, 0)], scan[min(k + 1, scan.size - 1)]
    res = optimize.minimize_scalar(loss, bounds=(a, b), method="bounded", options={"xatol": 1e-12})
    best = res.x if res.fun <= values[k] else scan[k]
    return float(np.exp(best)), float(loss(best))


def fit_exponential_theta(zstar: StandardizedProcess, max_lag: int = DEFAULT_MAX_LAG, h: int = 1) -> CorrelationFit:
    """Fit the exponential range of the standardized series and its scale.

    Autocorrelations are computed about zero (see :func:`autocorrelation`).

    The fit is flagged degenerate (near-independent) when every sample
    autocorrelation is non-positive or when the fitted lag-one correlation lies
    inside the white-noise band ``1.96 / sqrt(n)``; ``theta`` is then reported
    at the search floor and ``rho`` is taken as zero downstream.
    """
    z = np.asarray(zstar.values, dtype=float)
    n = z.size
    if max_lag < 1 or n - max_lag < 30:
        raise ParameterError(f"need max_lag >= 1 and n - max_lag >= 30 (n={n}, max_lag={max_lag})")
    spacing = zstar.design.spacing
    acf = autocorrelation(z, max_lag)
    floor = spacing / 10.0
    if np.all(acf <= 0):
        theta, rss, degenerate = floor, float(np.sum(acf**2)), True
    else:
        theta, rss = fit_theta_to_acf(acf, spacing)
        degenerate = np.exp(-spacing / theta) < 1.96 / np.sqrt(n)
        if degenerate:
            theta = floor
    var = float(np.var(z, ddof=1))
    rho_h = 0.0 if degenerate else float(np.exp(-lag_distance(zstar.design, h) / theta))
    return CorrelationFit(
        theta=float(theta),
        sigma2_star=var * (1.0 - rho_h),
        degenerate=bool(degenerate),
        lags=tuple(range(1, max_lag + 1)),
        rss=float(rss),
        zstar_variance=var,
    )


def plugin_variance(curve: EstimateCurve, fit: CorrelationFit, h: int, design: GridDesign) -> EstimateCurve:
    """``curve * sigma2_star / (1 - rho(h))`` as a variance curve."""
    denom = 1.0 - fit.rho(lag_distance(design, h))
    if denom <= DENOM_EPS:
        raise NumericError(
            f"1 - rho(h) = {denom:.3g} is too small to rescale; treat the fit as degenerate"
        )
    meta = dict(curve.metadata)
    meta.update(theta_hat=fit.theta, sigma2_star=fit.sigma2_star, degenerate_fit=fit.degenerate)
    return EstimateCurve(
        curve.eval_points, curve.values * fit.sigma2_star / denom, curve.bandwidth, curve.lag, "variance", meta
    )


def evaluate(curve: EstimateCurve, truth: FunctionSpec, dmse_scale: Literal["sd", "variance"] = "sd") -> EvaluationReport:
    """DMSE and MAX of a variance curve against the true standard deviation.

    DMSE averages squared errors of ``sqrt(curve)`` against ``sigma`` (or of the
    variances when ``dmse_scale="variance"``); MAX is the largest absolute
    variance error.
    """
    sd_true = np.asarray(evaluate_function(truth, curve.eval_points))
    sd_hat = np.sqrt(np.maximum(curve.values, 0.0))
    sd_err = sd_hat - sd_true
    var_err = curve.values - sd_true**2
    dmse = float(np.mean(sd_err**2)) if dmse_scale == "sd" else float(np.mean(var_err**2))
    return EvaluationReport(dmse, float(np.max(np.abs(var_err))), curve.eval_points, sd_err, var_err)


def oracle_bandwidth(
    process: GridProcess,
    kernel: KernelSpec,
    grid: CandidateGrid,
    truth: FunctionSpec,
    known_fit: CorrelationFit,
    h: int = 1,
    eval_points=EVAL_GRID,
) -> SelectionResult:
    """Candidate bandwidth with the smallest DMSE under known correlation parameters.

    Ties, including DMSE differences below rounding level of the sd scale, go
    to the larger bandwidth.
    """
    pres = pseudo_residuals(process, h)
    lams, scores, maxes, floored, failures = [], [], {}, {}, {}
    for lam in grid:
        try:
            lv = estimate_local_variogram(pres, kernel, lam, eval_points)
            report = evaluate(plugin_variance(lv, known_fit, h, process.design), truth)
        except (NumericError, ParameterError) as exc:
            failures[lam] = str(exc)
            continue
        lams.append(lam)
        scores.append(report.dmse)
        maxes[lam] = report.max
        floored[lam] = lv.metadata["floored"]
    if not lams:
        raise NumericError(f"every candidate bandwidth failed: {failures}")
    # sd errors below 1e-12 of the sd scale are rounding noise: treat as ties
    sd_scale = float(np.max(np.abs(evaluate_function(truth, np.asarray(eval_points)))))
    k = _argmin_prefer_larger(lams, scores, atol=(1e-12 * sd_scale) ** 2)
    diagnostics = {"max": maxes, "floored": floored, "failures": failures}
    return SelectionResult(float(lams[k]), list(zip(lams, scores)), diagnostics)


def estimate_variance(
    process: GridProcess,
    kernel: KernelSpec | None = None,
    grid: CandidateGrid | None = None,
    phi: float = DEFAULT_PHI,
    h: int = 1,
    eval_points=EVAL_GRID,
    max_lag: int = DEFAULT_MAX_LAG,
    diagonal: Literal["computed", "literal"] = "computed",
) -> VarianceEstimate:
    """Full single-pass variance-function estimate for one realization."""
    kernel = kernel or default_kernel()
    grid = grid or CandidateGrid.default(process.design.spacing)
    pres = pseudo_residuals(process, h)
    selection = select_bandwidth(pres, kernel, grid, phi, diagonal)
    lam = selection.bandwidth
    at_sites = estimate_local_variogram(pres, kernel, lam, process.locations)
    fit = fit_exponential_theta(standardize(process, at_sites), max_lag, h)
    lv = estimate_local_variogram(pres, kernel, lam, eval_points)
    curve = plugin_variance(lv, fit, h, process.design)
    curve.metadata.update(
        phi=phi,
        floored_sites=at_sites.metadata["floored"],
        rng=process.metadata.get("rng"),
        seed=process.seed,
    )
    return VarianceEstimate(curve, selection, fit, lv)
