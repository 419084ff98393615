"""Temporal multiscale ODE solver with dual weighted residual error estimation.

A slow state driven by a fast periodic one is replaced by an averaged slow
equation whose right-hand side comes from periodic micro problems.  Both
scales use continuous piecewise linear / piecewise constant Galerkin time
stepping.  The goal error is estimated and split into macro and micro parts
that drive adaptive refinement.
"""

from .adaptivity import AdaptConfig, AdaptTrace, adapt_loop, adapt_step
from .adjoint import MacroAdjoint, adjoint_residuals, solve_macro_adjoint
from .discretization import (
    MacroMesh,
    MicroGrid,
    PiecewiseConstantFn,
    PiecewiseLinearFn,
    gauss2_integrate,
    reconstruct_linear,
    reconstruct_quadratic,
    refine,
    refine_interval,
)
from .estimator import (
    EstimatorBreakdown,
    effectivity,
    effort,
    estimate,
    estimate_adjoint_conformity,
    indicator_index,
)
from .exceptions import (
    AdjointAssemblyError,
    ConfigurationError,
    ConsistencyError,
    DegenerateMonodromyError,
    HMMError,
    NonConvergenceError,
    StepError,
    StructuralError,
    UsageError,
)
from .macro import MacroSolution, SolverTolerances, macro_step, solve_macro
from .micro import (
    PeriodicOrbit,
    eta_pi,
    solve_micro_adjoint,
    solve_periodic,
    solve_tangent,
    transfer,
    transfer_grad_full,
    transfer_grad_partial,
)
from .reference import extrapolate, solve_resolved
from .systems import GoalFunctional, SlowFastSystem, check_assumptions, make_benchmark

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
