"""Mean-field planning, games and dynamic optimal transport on staggered grids.

The functional core lives in :mod:`mfplan.grid`, :mod:`mfplan.costs`,
:mod:`mfplan.poisson`, :mod:`mfplan.solver` and :mod:`mfplan.multiscale`;
:mod:`mfplan.estimator` wraps it in scikit-learn style classes.
"""

from .costs import CostKind, CostModel
from .estimator import MeanFieldGame, TransportPlanner
from .grid import BoundaryData, GridShape, StaggeredFields
from .multiscale import LevelHierarchy, mg_fista, ml_fista
from .solver import Problem, SolveReport, SolverConfig, SolverDivergence, fista, project, solve_mfg, solve_mfp

__version__ = "0.1.0"

__all__ = [
    "BoundaryData",
    "CostKind",
    "CostModel",
    "GridShape",
    "LevelHierarchy",
    "MeanFieldGame",
    "Problem",
    "SolveReport",
    "SolverConfig",
    "SolverDivergence",
    "StaggeredFields",
    "TransportPlanner",
    "fista",
    "mg_fista",
    "ml_fista",
    "project",
    "solve_mfg",
    "solve_mfp",
]
