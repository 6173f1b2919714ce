"""Matrix-valued and vector-valued dynamic optimal mass transport solver."""

from .errors import (
    BreakdownDetected,
    FactorizationFailed,
    InvalidContrast,
    InvalidProblem,
    LineSearchFailed,
    MomtError,
    NonPositiveDensity,
    NotPositiveDefinite,
    PositivityLost,
    ShapeMismatch,
)
from .grid import Grid
from .matrix_omt import MatrixProblem, OperatorBasis, div_L, grad_L, verify_kernel
from .sqp import SolveResult, SolverConfig, SqpState, initialize, solve, sqp_step
from .vector_omt import Graph, VectorProblem, graph_div, graph_grad

__version__ = "0.1.0"

__all__ = [
    "BreakdownDetected",
    "FactorizationFailed",
    "Graph",
    "Grid",
    "InvalidContrast",
    "InvalidProblem",
    "LineSearchFailed",
    "MatrixProblem",
    "MomtError",
    "NonPositiveDensity",
    "NotPositiveDefinite",
    "OperatorBasis",
    "PositivityLost",
    "ShapeMismatch",
    "SolveResult",
    "SolverConfig",
    "SqpState",
    "VectorProblem",
    "div_L",
    "grad_L",
    "graph_div",
    "graph_grad",
    "initialize",
    "solve",
    "sqp_step",
    "verify_kernel",
    "__version__",
]
