"""
Pseudo-residuals, the kernel local-variogram estimator and exact Gaussian moments.

For lag ``h`` the pseudo-residuals are ``D_i = (Z_i - Z_{i+h}) / sqrt(2)`` located
at ``t_i = (s_i + s_{i+h}) / 2``. The local variogram at ``s`` is estimated by
smoothing ``D_i**2`` with Gasser-Mueller weights; its target is
``sigma^2(s) * (1 - rho(h * spacing))``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ParameterError, PositivityError
from .grid import (
    GridDesign,
    GridProcess,
    ProcessSpec,
    evaluate_derivative,
    evaluate_function,
    lag_distance,
)
from .kernels import KernelSpec, weight_matrix

logger = logging.getLogger(__name__)

#: Relative floor applied to non-positive local-variogram estimates.
FLOOR_REL = 1e-8


@dataclass(frozen=True, eq=False)
class PseudoResidualSeries:
    lag: int
    values: np.ndarray
    centers: np.ndarray
    source: GridProcess | None = None

    @property
    def squared(self) -> np.ndarray:
        return self.values**2

    @property
    def n(self) -> int:
        """Number of observations in the underlying process."""
        return self.values.size + self.lag


@dataclass(frozen=True, eq=False)
class EstimateCurve:
    eval_points: np.ndarray
    values: np.ndarray
    bandwidth: float
    lag: int
    kind: Literal["local_variogram", "variance"] = "local_variogram"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.shape(self.eval_points) != np.shape(self.values):
            raise ParameterError("eval_points and values must have equal length")


def pseudo_residuals(process: GridProcess, h: int = 1) -> PseudoResidualSeries:
    """Lag-``h`` scaled first differences of ``process``."""
    n = process.design.n
    if int(h) != h or not 1 <= h <= n - 2:
        raise ParameterError(f"lag must be an integer in [1, {n - 2}], got {h!r}")
    z = process.values
    s = process.locations
    values = (z[:-h] - z[h:]) / np.sqrt(2.0)
    centers = 0.5 * (s[:-h] + s[h:])
    return PseudoResidualSeries(int(h), values, centers, process)


def series_from_values(z, design: GridDesign, h: int = 1) -> PseudoResidualSeries:
    """Pseudo-residuals of raw observations on ``design`` (no simulation spec attached)."""
    process = GridProcess(design, z, ProcessSpec())
    pres = pseudo_residuals(process, h)
    return PseudoResidualSeries(pres.lag, pres.values, pres.centers, None)


def apply_floor(values: np.ndarray, floor_rel: float = FLOOR_REL) -> tuple[np.ndarray, int]:
    """Replace entries below ``floor_rel * max(values)`` by that floor.

    Returns the floored copy and the number of replaced entries.
    """
    top = float(np.max(values))
    if not top > 0:
        raise PositivityError("local-variogram estimate is non-positive everywhere")
    floor = floor_rel * top
    low = values < floor
    count = int(low.sum())
    if count:
        logger.debug("floored %d local-variogram value(s) at %.3g", count, floor)
    return np.where(low, floor, values), count


def estimate_local_variogram(
    pres: PseudoResidualSeries,
    kernel: KernelSpec,
    lam: float,
    eval_points,
    floor: bool = True,
    floor_rel: float = FLOOR_REL,
) -> EstimateCurve:
    """Kernel-smoothed squared pseudo-residuals evaluated at ``eval_points``.

    With ``floor=True`` values below ``floor_rel * max`` are raised to that
    level and the number of such points is stored under ``metadata["floored"]``.
    """
    eval_points = np.atleast_1d(np.asarray(eval_points, dtype=float))
    if np.any(eval_points < 0) or np.any(eval_points > 1):
        raise ParameterError("evaluation points must lie in [0, 1]")
    w, bw = weight_matrix(kernel, lam, pres.centers, eval_points)
    values = w @ pres.squared
    floored = 0
    if floor:
        values, floored = apply_floor(values, floor_rel)
    meta = {
        "kernel_order": kernel.order,
        "boundary_policy": kernel.boundary_policy,
        "floored": floored,
        "min_effective_bandwidth": float(bw.min()),
    }
    return EstimateCurve(eval_points, values, float(lam), pres.lag, "local_variogram", meta)


def true_local_variogram(spec: ProcessSpec, s, h: int, design: GridDesign):
    """``sigma^2(s) * (1 - rho(h * spacing))`` for the grid ``design``."""
    rho_h = float(spec.correlation.rho(lag_distance(design, h)))
    return spec.variance(s) * (1.0 - rho_h)


# -- exact Gaussian moments of the squared pseudo-residuals ------------------


@dataclass(frozen=True, eq=False)
class MomentOracleInputs:
    """Mean differences ``delta``, difference variances ``g`` and cross terms ``P``."""

    delta: np.ndarray
    g: np.ndarray
    P: np.ndarray


def moment_inputs(spec: ProcessSpec, design: GridDesign, h: int = 1) -> MomentOracleInputs:
    n = design.n
    if not 1 <= h <= n - 2:
        raise ParameterError(f"lag must be in [1, {n - 2}], got {h!r}")
    s = design.locations
    mu = np.asarray(evaluate_function(spec.mean, s))
    sd = np.asarray(evaluate_function(spec.sd, s))
    rho = spec.correlation.rho
    m = n - h
    a, b = s[:m], s[h:]
    sa, sb = sd[:m], sd[h:]
    delta = mu[:m] - mu[h:]
    P = (
        rho(a[:, None] - a[None, :]) * (np.outer(sa, sa) + np.outer(sb, sb))
        - rho(a[:, None] - b[None, :]) * np.outer(sa, sb)
        - rho(b[:, None] - a[None, :]) * np.outer(sb, sa)
    )
    g = sa**2 + sb**2 - 2.0 * sa * sb * rho(b - a)
    np.fill_diagonal(P, g)
    return MomentOracleInputs(delta, g, P)


def squared_residual_moments(spec: ProcessSpec, design: GridDesign, h: int = 1):
    """Mean vector and covariance matrix of ``D_i**2`` (closed form).

    Returns
    -------
    mean : ndarray, shape (n - h,)
    cov : ndarray, shape (n - h, n - h)
    """
    inp = moment_inputs(spec, design, h)
    mean = 0.5 * (inp.delta**2 + inp.g)
    cov = np.outer(inp.delta, inp.delta) * inp.P + 0.5 * inp.P**2
    return mean, cov


def moment_oracle(spec: ProcessSpec, design: GridDesign, h: int, i: int, j: int) -> dict:
    """Closed-form ``E D_i^2``, ``var D_i^2`` and ``cov(D_i^2, D_j^2)``.

    Indices are zero-based and must lie in ``[0, n - h)``.
    """
    m = design.n - h
    if not (0 <= i < m and 0 <= j < m):
        raise ParameterError(f"indices must lie in [0, {m}), got ({i}, {j})")
    inp = moment_inputs(spec, design, h)
    d, g, P = inp.delta, inp.g, inp.P
    return {
        "mean_i": 0.5 * (d[i] ** 2 + g[i]),
        "var_i": d[i] ** 2 * g[i] + 0.5 * g[i] ** 2,
        "cov_ij": d[i] * d[j] * P[i, j] + 0.5 * P[i, j] ** 2,
        "P_ij": P[i, j],
    }


def _centered_moment(idx: tuple[int, ...], cov: np.ndarray) -> float:
    if not idx:
        return 1.0
    if len(idx) % 2:
        return 0.0
    first, rest = idx[0], idx[1:]
    total = 0.0
    for k, other in enumerate(rest):
        total += cov[first, other] * _centered_moment(rest[:k] + rest[k + 1 :], cov)
    return total


def gaussian_product_moment(idx: tuple[int, ...], mean: np.ndarray, cov: np.ndarray) -> float:
    """``E[prod_k Y_{idx_k}]`` for ``Y ~ N(mean, cov)`` via Isserlis pairings."""
    total = 0.0
    for picks in itertools.product((False, True), repeat=len(idx)):
        centered = tuple(k for k, use in zip(idx, picks) if use)
        fixed = np.prod([mean[k] for k, use in zip(idx, picks) if not use])
        total += fixed * _centered_moment(centered, cov)
    return float(total)


def isserlis_cov(spec: ProcessSpec, design: GridDesign, h: int, i: int, j: int) -> float:
    """``cov(D_i^2, D_j^2)`` by brute-force fourth moments of ``(Z_i, Z_i+h, Z_j, Z_j+h)``."""
    m = design.n - h
    if not (0 <= i < m and 0 <= j < m):
        raise ParameterError(f"indices must lie in [0, {m}), got ({i}, {j})")
    pos = np.array([i, i + h, j, j + h])
    s = design.locations[pos]
    mu = np.asarray(evaluate_function(spec.mean, s))
    sd = np.asarray(evaluate_function(spec.sd, s))
    cov = np.outer(sd, sd) * spec.correlation.rho(s[:, None] - s[None, :])
    u = np.array([1.0, -1.0, 0.0, 0.0])
    v = np.array([0.0, 0.0, 1.0, -1.0])

    def form_moment(forms):
        total = 0.0
        for combo in itertools.product(range(4), repeat=len(forms)):
            coef = np.prod([f[k] for f, k in zip(forms, combo)])
            if coef:
                total += coef * gaussian_product_moment(combo, mu, cov)
        return total

    uuvv = form_moment((u, u, v, v))
    uu = form_moment((u, u))
    vv = form_moment((v, v))
    return (uuvv - uu * vv) / 4.0


def p_taylor(
    spec: ProcessSpec, design: GridDesign, h: int, i: int, form: Literal["printed", "leading"] = "printed"
) -> float:
    """Two-term small-lag expansion of the cross term ``P_ij`` about ``s_i`` (``j != i``).

    ``form="printed"`` is ``(h D)^2 sigma'^2 - 2 (h D / theta)^2 sigma^2``.
    ``form="leading"`` halves the second coefficient, which is what a direct
    expansion of the exponential correlation gives; its error is one order
    smaller. Only defined for exponential correlation; neither form depends on
    ``j``.
    """
    if spec.correlation.kind != "exponential":
        raise ParameterError("expansion needs an exponential correlation")
    if form not in ("printed", "leading"):
        raise ParameterError(f"unknown expansion form {form!r}")
    s = design.locations[i]
    step = lag_distance(design, h)
    sd = evaluate_function(spec.sd, s)
    dsd = evaluate_derivative(spec.sd, s)
    coef = 2.0 if form == "printed" else 1.0
    return step**2 * dsd**2 - coef * (step / spec.correlation.theta) ** 2 * sd**2


def squared_residual_correlation(spec: ProcessSpec, design: GridDesign, h: int, i: int, j: int) -> float:
    """Closed-form ``cor(D_i^2, D_j^2)``."""
    mi = moment_oracle(spec, design, h, i, j)
    mj = moment_oracle(spec, design, h, j, i)
    return mi["cov_ij"] / np.sqrt(mi["var_i"] * mj["var_i"])
