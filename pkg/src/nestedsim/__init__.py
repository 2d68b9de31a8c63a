"""Budget-optimal nested simulation designs with pooled likelihood-ratio estimators."""

from .design import (
    DesignSolution,
    SecondMomentTable,
    achieved_ess,
    build_design_lp,
    compute_second_moments,
    pooling_weights,
    solve_design,
)
from .input_models import (
    DomainError,
    ExponentialModel,
    LognormalModel,
    NormalModel,
    PoissonModel,
    model_from_config,
)
from .lp_solver import LinearProgram, LpSolution, LpSolverError, LpStatus, solve

__version__ = "0.1.0"
