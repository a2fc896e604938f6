"""
Bandwidth selection by leave-one-out cross-validation on whitened deviances.

For each candidate bandwidth the squared pseudo-residuals are smoothed, the raw
deviances ``eps_i = D_i^2 - fit_i`` are whitened with the lower Cholesky factor
of an exponential working covariance ``exp(-|i - j| / (phi * n))`` and scored
with the hat-matrix shortcut ``sum (xi_i / (1 - M_ii))^2``.
"""

from __future__ import annotations

import functools
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from .errors import DegenerateSmootherError, NumericError, ParameterError, SelectionError
from .kernels import KernelSpec, literal_diagonal, smoothing_matrix
from .variogram import FLOOR_REL, PseudoResidualSeries

logger = logging.getLogger(__name__)

DEFAULT_PHI = 0.01
DEFAULT_GRID_SIZE = 20


@dataclass(frozen=True)
class CandidateGrid:
    values: tuple[float, ...]

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise ParameterError("candidate grid is empty")
        if np.any(np.diff(v) <= 0):
            raise ParameterError("candidate bandwidths must be strictly increasing")
        if v[0] <= 0 or v[-1] > 0.5:
            raise ParameterError("candidate bandwidths must lie in (0, 0.5]")

    @classmethod
    def default(cls, spacing: float, size: int = DEFAULT_GRID_SIZE, upper: float = 0.5) -> "CandidateGrid":
        """``size`` log-spaced bandwidths from ``4 * spacing`` to ``upper``."""
        return cls(tuple(float(x) for x in np.geomspace(4.0 * spacing, upper, size)))

    def __iter__(self):
        return iter(self.values)

    def __len__(self):
        return len(self.values)


@dataclass(frozen=True, eq=False)
class DevianceSeries:
    raw: np.ndarray
    bandwidth: float
    diagonal: np.ndarray
    whitened: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SelectionResult:
    bandwidth: float
    scores: list[tuple[float, float]]
    diagnostics: dict = field(default_factory=dict)


def raw_deviances(pres: PseudoResidualSeries, kernel: KernelSpec, lam: float) -> DevianceSeries:
    """``D_i^2`` minus its smoothed value at the pseudo-residual location."""
    M = smoothing_matrix(kernel, lam, pres.centers)
    y = pres.squared
    return DevianceSeries(y - M @ y, float(lam), np.diag(M).copy())


@functools.lru_cache(maxsize=16)
def _whitening_factor(length: int, phi: float, n: int) -> np.ndarray:
    idx = np.arange(length, dtype=float)
    cov = np.exp(-np.abs(idx[:, None] - idx[None, :]) / (phi * n))
    try:
        factor = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericError(f"deviance covariance not positive definite (phi={phi}, n={n})") from exc
    factor.flags.writeable = False
    return factor


def whitening_transform(length: int, phi: float, n: int) -> np.ndarray:
    """Lower Cholesky factor ``L`` of the working deviance covariance.

    ``phi == 0`` selects the identity (no whitening). The factor is cached and
    returned read-only.
    """
    if length < 2:
        raise ParameterError("whitening needs at least two deviances")
    if phi < 0:
        raise ParameterError(f"phi must be >= 0, got {phi!r}")
    if phi == 0:
        return np.eye(length)
    return _whitening_factor(int(length), float(phi), int(n))


def whiten(eps: np.ndarray, phi: float, n: int) -> np.ndarray:
    """Solve ``L xi = eps`` by forward substitution."""
    if phi == 0:
        return np.array(eps, dtype=float)
    L = whitening_transform(len(eps), phi, n)
    return linalg.solve_triangular(L, eps, lower=True)


def cv_score(xi, diag) -> float:
    """Leave-one-out shortcut ``sum_i (xi_i / (1 - M_ii))^2``."""
    xi = np.asarray(xi, dtype=float)
    diag = np.asarray(diag, dtype=float)
    if np.any(diag >= 1.0):
        raise DegenerateSmootherError("smoothing-matrix diagonal reaches 1; bandwidth too small")
    return float(np.sum((xi / (1.0 - diag)) ** 2))


def _argmin_prefer_larger(lams, scores, atol: float = 0.0) -> int:
    """Index of the minimal score; scores within ``atol`` (or 1e-12 relative) count as ties."""
    scores = np.asarray(scores, dtype=float)
    best = np.nanmin(scores)
    tied = np.flatnonzero(np.isclose(scores, best, rtol=1e-12, atol=atol) | (scores == best))
    return int(tied[np.argmax(np.asarray(lams)[tied])])


def select_bandwidth(
    pres: PseudoResidualSeries,
    kernel: KernelSpec,
    grid: CandidateGrid,
    phi: float = DEFAULT_PHI,
    diagonal: Literal["computed", "literal"] = "computed",
) -> SelectionResult:
    """Pick the candidate bandwidth minimizing the whitened LOO score.

    Ties are broken toward the larger bandwidth. Candidates whose smoother is
    degenerate are skipped and reported in ``diagnostics["failures"]``.
    """
    n = pres.n
    lams, scores, failures, floored = [], [], {}, {}
    for lam in grid:
        try:
            dev = raw_deviances(pres, kernel, lam)
            diag = dev.diagonal if diagonal == "computed" else literal_diagonal(kernel, lam, pres.centers)
            xi = whiten(dev.raw, phi, n)
            score = cv_score(xi, diag)
        except (NumericError, ParameterError) as exc:
            failures[lam] = str(exc)
            continue
        fit = pres.squared - dev.raw
        floored[lam] = int(np.sum(fit < FLOOR_REL * fit.max()))
        lams.append(lam)
        scores.append(score)
    if not lams:
        raise SelectionError(f"every candidate bandwidth failed: {failures}")
    k = _argmin_prefer_larger(lams, scores)
    diagnostics = {
        "failures": failures,
        "floored": floored,
        "phi": phi,
        "whitening": "cholesky" if phi > 0 else "identity",
        "diagonal": diagonal,
    }
    return SelectionResult(float(lams[k]), list(zip(lams, scores)), diagnostics)


def loo_residuals(y, M) -> np.ndarray:
    """Explicit leave-one-out residuals of a row-normalized linear smoother.

    Row ``i`` drops observation ``i`` and rescales the remaining weights to sum
    to one. ``O(n^2)``; used to check the shortcut.
    """
    y = np.asarray(y, dtype=float)
    M = np.asarray(M, dtype=float)
    out = np.empty_like(y)
    for i in range(y.size):
        w = M[i].copy()
        w[i] = 0.0
        out[i] = y[i] - w @ y / w.sum()
    return out
