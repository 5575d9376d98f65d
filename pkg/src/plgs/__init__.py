"""Ground states and blow-up asymptotics for mass-critical p-Laplacian problems."""

from .exceptions import PlgsError
from .model import (
    CartesianGrid2D,
    Field,
    PotentialSpec,
    ProblemParams,
    RadialGrid,
    make_params,
)
from .limit_solver import GroundStateProfile, find_Q
from .minimizer import FlowOpts, MinimizerResult, minimize

__version__ = "0.1.0"

__all__ = [
    "PlgsError",
    "CartesianGrid2D",
    "Field",
    "PotentialSpec",
    "ProblemParams",
    "RadialGrid",
    "make_params",
    "GroundStateProfile",
    "find_Q",
    "FlowOpts",
    "MinimizerResult",
    "minimize",
]
