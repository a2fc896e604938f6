"""
Polynomial Gasser-Mueller kernels and cell-integrated smoothing weights.

A base kernel of order ``m`` is an even polynomial ``K(u) = sum_k a_k u^(2k)``
on ``[-1, 1]`` with unit mass and vanishing even moments of orders
``2 .. m - 2``. With ``smoothness = mu`` the first ``mu`` derivatives
``K, K', ..., K^(mu-1)`` vanish at ``+-1``, which fixes the degree at
``m + 2 (mu - 1)``: ``(2, 1)`` is Epanechnikov, ``(2, 3)`` the triweight
``(35/32)(1 - u^2)^3`` and ``(6, 1)`` the degree-6 sixth-order kernel.

Observation ``i`` owns the cell ``[t_i - D/2, t_i + D/2]`` and receives the
weight

    w_i(s) = int_cell (1 / lam) K((s - u) / lam) du,

computed exactly from the antiderivative of ``K``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

from .errors import EmptySupportError, NumericError, ParameterError

BoundaryPolicy = Literal["renormalize", "fixed_bandwidth_edge"]

SUPPORTED_ORDERS = (2, 4, 6, 8)


@dataclass(frozen=True)
class KernelSpec:
    """Even polynomial kernel on ``[-1, 1]``.

    ``coefficients[k]`` multiplies ``u**(2k)``.
    """

    order: int
    coefficients: tuple[float, ...]
    boundary_policy: BoundaryPolicy = "renormalize"
    smoothness: int = 1

    def __post_init__(self):
        if self.boundary_policy not in ("renormalize", "fixed_bandwidth_edge"):
            raise ParameterError(f"unknown boundary policy {self.boundary_policy!r}")

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        u2 = u * u
        out = np.zeros_like(u)
        for a in reversed(self.coefficients):
            out = out * u2 + a
        return np.where(np.abs(u) <= 1.0, out, 0.0)

    def antiderivative(self, x):
        """``int_{-1}^{x} K(u) du`` with ``x`` clipped to ``[-1, 1]``."""
        x = np.clip(np.asarray(x, dtype=float), -1.0, 1.0)
        out = np.zeros_like(x)
        for k, a in enumerate(self.coefficients):
            p = 2 * k + 1
            out = out + a * (x**p + 1.0) / p
        return out

    def moment(self, j: int) -> float:
        """Exact ``int_{-1}^{1} u^j K(u) du``."""
        if j % 2:
            return 0.0
        return float(sum(2.0 * a / (j + 2 * k + 1) for k, a in enumerate(self.coefficients)))

    @property
    def degree(self) -> int:
        return 2 * (len(self.coefficients) - 1)

    @property
    def label(self) -> str:
        return f"order{self.order}-degree{self.degree}"

    def with_policy(self, policy: BoundaryPolicy) -> "KernelSpec":
        return KernelSpec(self.order, self.coefficients, policy, self.smoothness)


@dataclass(frozen=True)
class SmoothingWeights:
    eval_point: float
    lag: int
    weights: np.ndarray
    bandwidth: float
    effective_bandwidth: float


def build_base_kernel(
    m: int, boundary_policy: BoundaryPolicy = "renormalize", smoothness: int = 1
) -> KernelSpec:
    """Solve the moment and edge conditions for an order-``m`` even polynomial kernel.

    Parameters
    ----------
    m : {2, 4, 6, 8}
        Kernel order: moments ``1 .. m - 1`` vanish.
    boundary_policy : {"renormalize", "fixed_bandwidth_edge"}
    smoothness : int
        Number of derivatives (starting with the value) that vanish at ``+-1``.
    """
    if m not in SUPPORTED_ORDERS:
        raise ParameterError(f"kernel order must be one of {SUPPORTED_ORDERS}, got {m!r}")
    if int(smoothness) != smoothness or not 1 <= smoothness <= 4:
        raise ParameterError(f"smoothness must be an integer in [1, 4], got {smoothness!r}")
    n_moment = m // 2
    size = n_moment + smoothness
    system = np.zeros((size, size))
    rhs = np.zeros(size)
    for j in range(n_moment):
        for k in range(size):
            system[j, k] = 2.0 / (2 * j + 2 * k + 1)
    rhs[0] = 1.0
    for r in range(smoothness):
        for k in range(size):
            p = 2 * k
            # r-th derivative of u^p at u = 1
            system[n_moment + r, k] = math.perm(p, r) if p >= r else 0.0
    try:
        coef = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"moment system for order {m} is singular") from exc
    return KernelSpec(m, tuple(float(c) for c in coef), boundary_policy, int(smoothness))


def triweight(boundary_policy: BoundaryPolicy = "renormalize") -> KernelSpec:
    """Degree-6, second-order kernel ``(35/32)(1 - u^2)^3``; the harness default."""
    return build_base_kernel(2, boundary_policy, smoothness=3)


def _cell_geometry(centers) -> tuple[np.ndarray, float, float, float]:
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 1 or centers.size < 2:
        raise ParameterError("need at least two ordered cell centers")
    steps = np.diff(centers)
    spacing = float(steps.mean())
    if np.any(steps <= 0) or np.max(np.abs(steps - spacing)) > 1e-9 * max(1.0, spacing):
        raise ParameterError("cell centers must be strictly increasing with constant spacing")
    return centers, spacing, centers[0] - spacing / 2, centers[-1] + spacing / 2


def _check_bandwidth(lam: float) -> None:
    if not (0.0 < lam <= 0.5):
        raise ParameterError(f"bandwidth must lie in (0, 0.5], got {lam!r}")


def weight_matrix(kernel: KernelSpec, lam: float, centers, eval_points) -> tuple[np.ndarray, np.ndarray]:
    """Gasser-Mueller weights for every evaluation point.

    Returns
    -------
    weights : ndarray, shape (len(eval_points), len(centers))
    bandwidths : ndarray
        Bandwidth actually used at each evaluation point (differs from ``lam``
        only under the ``fixed_bandwidth_edge`` policy).
    """
    _check_bandwidth(lam)
    centers, spacing, lo, hi = _cell_geometry(centers)
    s = np.atleast_1d(np.asarray(eval_points, dtype=float))

    if kernel.boundary_policy == "fixed_bandwidth_edge":
        room = np.maximum(np.minimum(s - lo, hi - s), 2.0 * spacing)
        bw = np.minimum(lam, room)
    else:
        bw = np.full(s.shape, float(lam))

    left = centers - spacing / 2
    right = centers + spacing / 2
    upper = (s[:, None] - left[None, :]) / bw[:, None]
    lower = (s[:, None] - right[None, :]) / bw[:, None]
    w = kernel.antiderivative(upper) - kernel.antiderivative(lower)

    total = w.sum(axis=1)
    if np.any(np.all(w == 0.0, axis=1)):
        bad = s[np.all(w == 0.0, axis=1)]
        raise EmptySupportError(f"no cell within bandwidth of evaluation point(s) {bad[:5]}")
    overflow = (s - bw < lo - 1e-12) | (s + bw > hi + 1e-12)
    if np.any(overflow):
        if np.any(np.abs(total[overflow]) < 1e-12):
            raise NumericError("truncated kernel mass vanishes; cannot renormalize")
        w[overflow] /= total[overflow, None]
    return w, bw


def gm_weights(kernel: KernelSpec, lam: float, centers, s: float, lag: int = 1) -> SmoothingWeights:
    """Weights of every cell for a single evaluation point ``s``."""
    w, bw = weight_matrix(kernel, lam, centers, [s])
    return SmoothingWeights(float(s), lag, w[0], float(lam), float(bw[0]))


def smoothing_matrix(kernel: KernelSpec, lam: float, centers) -> np.ndarray:
    """Square linear smoother mapping values at ``centers`` to fits at ``centers``."""
    return weight_matrix(kernel, lam, centers, centers)[0]


def literal_diagonal(kernel: KernelSpec, lam: float, centers) -> np.ndarray:
    """Diagonal approximated as ``K(0) * D / lam`` at every row (comparison mode)."""
    _check_bandwidth(lam)
    centers, spacing, _, _ = _cell_geometry(centers)
    return np.full(centers.size, float(kernel(0.0)) * spacing / lam)
