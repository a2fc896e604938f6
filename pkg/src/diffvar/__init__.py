"""
Difference-based estimation of a variance function on an equidistant grid
with correlated errors.
"""

from .bandwidth import CandidateGrid, SelectionResult, cv_score, select_bandwidth, whitening_transform
from .errors import (
    ConfigError,
    DiffvarError,
    DomainError,
    NumericError,
    ParameterError,
    PositivityError,
    SelectionError,
    SimulationError,
)
from .grid import (
    CorrelationModel,
    FunctionSpec,
    GridDesign,
    GridProcess,
    ProcessSpec,
    correlation_matrix,
    evaluate_function,
    simulate_process,
)
from .kernels import KernelSpec, build_base_kernel, gm_weights, smoothing_matrix, triweight
from .pipeline import (
    EVAL_GRID,
    CorrelationFit,
    default_kernel,
    estimate_variance,
    evaluate,
    fit_exponential_theta,
    oracle_bandwidth,
    plugin_variance,
    standardize,
)
from .variogram import (
    EstimateCurve,
    PseudoResidualSeries,
    estimate_local_variogram,
    moment_oracle,
    pseudo_residuals,
    true_local_variogram,
)

__version__ = "0.1.0"

__all__ = [
    "build_base_kernel",
    "CandidateGrid",
    "ConfigError",
    "correlation_matrix",
    "CorrelationFit",
    "CorrelationModel",
    "cv_score",
    "default_kernel",
    "DiffvarError",
    "DomainError",
    "estimate_local_variogram",
    "estimate_variance",
    "EstimateCurve",
    "EVAL_GRID",
    "evaluate",
    "evaluate_function",
    "fit_exponential_theta",
    "FunctionSpec",
    "gm_weights",
    "GridDesign",
    "GridProcess",
    "KernelSpec",
    "moment_oracle",
    "NumericError",
    "oracle_bandwidth",
    "ParameterError",
    "plugin_variance",
    "PositivityError",
    "ProcessSpec",
    "pseudo_residuals",
    "PseudoResidualSeries",
    "select_bandwidth",
    "SelectionError",
    "SelectionResult",
    "simulate_process",
    "SimulationError",
    "smoothing_matrix",
    "standardize",
    "triweight",
    "true_local_variogram",
    "whitening_transform",
]
