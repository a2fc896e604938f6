"""
Grid designs, mean/sd/correlation specifications and Gaussian process simulation.

The data model is ``Z(s) = mu(s) + sigma(s) X(s)`` on ``[0, 1]`` where ``X`` is a
zero-mean, unit-variance stationary Gaussian process with correlation
``rho(|s - s'|)``. Realizations are drawn on an equidistant grid through the
lower Cholesky factor of the correlation matrix.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import linalg

from .errors import DomainError, ParameterError, SimulationError

#: Name of the bit generator used for every simulated draw (recorded in metadata).
RNG_ALGORITHM = "numpy.random.PCG64"

#: Largest diagonal jitter tried before a Cholesky failure is reported.
MAX_JITTER = 1e-10

_DOMAIN_TOL = 1e-12


@dataclass(frozen=True)
class GridDesign:
    """Equidistant design on the unit interval.

    ``midpoint`` places ``s_i = (2i - 1) / (2n)``; ``endpoint`` places
    ``s_i = (i - 1) / (n - 1)`` so both 0 and 1 are observed.
    """

    n: int
    convention: Literal["midpoint", "endpoint"] = "midpoint"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ParameterError(f"grid size must be an integer >= 2, got {self.n!r}")
        if self.convention not in ("midpoint", "endpoint"):
            raise ParameterError(f"unknown grid convention {self.convention!r}")

    @property
    def spacing(self) -> float:
        if self.convention == "midpoint":
            return 1.0 / self.n
        return 1.0 / (self.n - 1)

    @property
    def locations(self) -> np.ndarray:
        i = np.arange(1, self.n + 1, dtype=float)
        if self.convention == "midpoint":
            return (2.0 * i - 1.0) / (2.0 * self.n)
        return (i - 1.0) / (self.n - 1.0)


@dataclass(frozen=True)
class FunctionSpec:
    """A real function on ``[0, 1]`` used as a mean or standard deviation.

    Parameters
    ----------
    kind : {"constant", "sine", "step", "linear", "tabulated"}
    params : tuple of float
        ``(c,)`` for constant, ``(a, b)`` for ``a + b s``; ignored by sine/step.
    table : tuple of float
        Values on an equally spaced grid covering ``[0, 1]`` (tabulated only).
    scale : float
        Multiplier applied to the output; used for scale-equivariance checks.
    """

    kind: Literal["constant", "sine", "step", "linear", "tabulated"]
    params: tuple[float, ...] = ()
    table: tuple[float, ...] = ()
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("constant", "sine", "step", "linear", "tabulated"):
            raise ParameterError(f"unknown function kind {self.kind!r}")
        need = {"constant": 1, "linear": 2}.get(self.kind)
        if need is not None and len(self.params) != need:
            raise ParameterError(f"{self.kind} needs {need} parameter(s), got {self.params!r}")
        if self.kind == "tabulated" and len(self.table) < 2:
            raise ParameterError("tabulated function needs at least two values")

    @classmethod
    def constant(cls, c: float) -> "FunctionSpec":
        return cls("constant", (float(c),))

    @classmethod
    def sine(cls) -> "FunctionSpec":
        return cls("sine")

    @classmethod
    def step(cls) -> "FunctionSpec":
        return cls("step")

    @classmethod
    def linear(cls, a: float, b: float) -> "FunctionSpec":
        return cls("linear", (float(a), float(b)))

    @classmethod
    def tabulated(cls, values) -> "FunctionSpec":
        return cls("tabulated", table=tuple(float(v) for v in values))

    def scaled(self, c: float) -> "FunctionSpec":
        return FunctionSpec(self.kind, self.params, self.table, self.scale * c)

    def __call__(self, s):
        return evaluate_function(self, s)

    @property
    def label(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.params[0]:g}"
        return self.kind


@dataclass(frozen=True)
class CorrelationModel:
    """Stationary correlation of the standardized process ``X``.

    ``exponential`` uses ``rho(d) = exp(-d / theta)``; its smoothness exponent is
    ``alpha = 1``. ``independent`` has ``rho(d) = 0`` for ``d > 0``.
    """

    kind: Literal["independent", "exponential"] = "independent"
    theta: float | None = None

    def __post_init__(self):
        if self.kind == "exponential":
            if self.theta is None or not self.theta > 0:
                raise ParameterError(f"exponential correlation needs theta > 0, got {self.theta!r}")
        elif self.kind == "independent":
            if self.theta is not None:
                raise ParameterError("independent correlation takes no theta")
        else:
            raise ParameterError(f"unknown correlation kind {self.kind!r}")

    @classmethod
    def independent(cls) -> "CorrelationModel":
        return cls("independent")

    @classmethod
    def exponential(cls, theta: float) -> "CorrelationModel":
        return cls("exponential", float(theta))

    @property
    def alpha(self) -> float | None:
        return 1.0 if self.kind == "exponential" else None

    @property
    def label(self) -> str:
        return "indep" if self.kind == "independent" else f"{self.theta:g}"

    def rho(self, d):
        d = np.abs(np.asarray(d, dtype=float))
        if self.kind == "independent":
            return np.where(d == 0.0, 1.0, 0.0)
        return np.exp(-d / self.theta)


@dataclass(frozen=True)
class ProcessSpec:
    mean: FunctionSpec = field(default_factory=lambda: FunctionSpec.constant(0.0))
    sd: FunctionSpec = field(default_factory=lambda: FunctionSpec.constant(1.0))
    correlation: CorrelationModel = field(default_factory=CorrelationModel.independent)

    def variance(self, s):
        return np.asarray(evaluate_function(self.sd, s)) ** 2


@dataclass(frozen=True, eq=False)
class GridProcess:
    """One realization ``Z_1..Z_n`` together with what generated it."""

    design: GridDesign
    values: np.ndarray
    spec: ProcessSpec
    seed: int | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.design.n,):
            raise ParameterError(
                f"expected {self.design.n} values, got array of shape {values.shape}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def locations(self) -> np.ndarray:
        return self.design.locations


def evaluate_function(f: FunctionSpec, s):
    """Evaluate ``f`` at ``s`` (scalar or array) in ``[0, 1]``."""
    arr = np.asarray(s, dtype=float)
    if np.any(arr < -_DOMAIN_TOL) or np.any(arr > 1.0 + _DOMAIN_TOL) or np.any(np.isnan(arr)):
        raise DomainError(f"evaluation point outside [0, 1]: {s!r}")
    if f.kind == "constant":
        out = np.full_like(arr, f.params[0])
    elif f.kind == "sine":
        out = 2.0 * np.sin(arr / 0.15) + 2.8
    elif f.kind == "step":
        out = 1.0 + (arr > 1.0 / 3.0).astype(float)
    elif f.kind == "linear":
        out = f.params[0] + f.params[1] * arr
    else:
        table = np.asarray(f.table)
        out = np.interp(arr, np.linspace(0.0, 1.0, table.size), table)
    out = f.scale * out
    return float(out) if out.ndim == 0 else out


def evaluate_derivative(f: FunctionSpec, s):
    """First derivative of ``f``; the step kind is treated as flat off its jump."""
    evaluate_function(f, s)  # domain check
    arr = np.asarray(s, dtype=float)
    if f.kind in ("constant", "step"):
        out = np.zeros_like(arr)
    elif f.kind == "sine":
        out = (2.0 / 0.15) * np.cos(arr / 0.15)
    elif f.kind == "linear":
        out = np.full_like(arr, f.params[1])
    else:
        table = np.asarray(f.table)
        knots = np.linspace(0.0, 1.0, table.size)
        slopes = np.diff(table) / np.diff(knots)
        out = slopes[np.clip(np.searchsorted(knots, arr, side="right") - 1, 0, slopes.size - 1)]
    out = f.scale * out
    return float(out) if out.ndim == 0 else out


def correlation_matrix(model: CorrelationModel, design: GridDesign) -> np.ndarray:
    """Return the ``n x n`` matrix ``rho(|s_i - s_j|)`` for the design."""
    s = design.locations
    return model.rho(s[:, None] - s[None, :])


@functools.lru_cache(maxsize=32)
def _cholesky_factor(model: CorrelationModel, design: GridDesign) -> tuple[np.ndarray, float]:
    corr = correlation_matrix(model, design)
    jitter = 0.0
    for jitter in (0.0, 1e-14, 1e-12, MAX_JITTER):
        try:
            factor = linalg.cholesky(corr + jitter * np.eye(design.n), lower=True)
            break
        except linalg.LinAlgError:
            continue
    else:
        smallest = float(linalg.eigvalsh(corr, subset_by_index=[0, 0])[0])
        raise SimulationError(
            "correlation matrix is not numerically positive definite "
            f"(smallest eigenvalue ~ {smallest:.3e}) even with jitter {MAX_JITTER:g}"
        )
    factor.flags.writeable = False
    return factor, jitter


def cholesky_factor(model: CorrelationModel, design: GridDesign) -> np.ndarray:
    """Lower Cholesky factor of the correlation matrix (cached, read-only)."""
    return _cholesky_factor(model, design)[0]


def simulate_process(spec: ProcessSpec, design: GridDesign, seed: int) -> GridProcess:
    """Draw one realization of ``Z = mu + sigma * (L w)`` with ``w ~ N(0, I)``.

    The draw is a pure function of ``(spec, design, seed)``.
    """
    s = design.locations
    sd = np.asarray(evaluate_function(spec.sd, s))
    if not np.all(sd > 0):
        raise ParameterError("standard-deviation function must be strictly positive on the grid")
    factor, jitter = _cholesky_factor(spec.correlation, design)
    w = np.random.Generator(np.random.PCG64(seed)).standard_normal(design.n)
    values = np.asarray(evaluate_function(spec.mean, s)) + sd * (factor @ w)
    meta = {"rng": RNG_ALGORITHM, "jitter": jitter}
    return GridProcess(design, values, spec, seed, meta)


def simulate_many(spec: ProcessSpec, design: GridDesign, seed: int, size: int) -> np.ndarray:
    """Draw ``size`` independent realizations as rows of a ``size x n`` array.

    Bulk variant used by Monte Carlo checks; row ``k`` is not the same draw as
    ``simulate_process(..., seed + k)``.
    """
    s = design.locations
    sd = np.asarray(evaluate_function(spec.sd, s))
    factor = cholesky_factor(spec.correlation, design)
    w = np.random.Generator(np.random.PCG64(seed)).standard_normal((size, design.n))
    return np.asarray(evaluate_function(spec.mean, s)) + sd * (w @ factor.T)


def lag_distance(design: GridDesign, h: int) -> float:
    """Distance between observations ``h`` grid steps apart."""
    return h * design.spacing


def whiten(process: GridProcess) -> np.ndarray:
    """Recover the standard-normal draws behind ``process`` by forward substitution."""
    s = process.locations
    x = (process.values - np.asarray(evaluate_function(process.spec.mean, s))) / np.asarray(
        evaluate_function(process.spec.sd, s)
    )
    return linalg.solve_triangular(cholesky_factor(process.spec.correlation, process.design), x, lower=True)


def is_positive_on(f: FunctionSpec, design: GridDesign) -> bool:
    return bool(np.all(np.asarray(evaluate_function(f, design.locations)) > 0))

