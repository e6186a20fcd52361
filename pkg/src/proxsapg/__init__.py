"""Stochastic approximation proximal gradient estimation of regularisation parameters
with MYULA/PULA Langevin samplers, plus oracles and diagnostics for small instances."""

from .errors import (AdmissibilityError, DomainError, InvalidArgument, NumericalFailure,
                     ProxSapgError, ScheduleInvalid, UnsupportedConfiguration)
from .model import (EstimatorSpec, Homogeneous, Inhomogeneous, ParameterDomain,
                    PotentialModel, PriorSplit, ProblemInstance, SeparablyHomogeneous,
                    builtin_gaussian_conjugate, builtin_group_lasso, builtin_laplace_scalar,
                    estimator_terms, project_theta)
from .samplers import ChainState, KernelConfig, KernelKind, drift_map, run_chain, step
from .sapg import RunTrace, Schedule, averaged_objective_gap, run, validate_schedule

__version__ = "0.1.0"

__all__ = [
    "AdmissibilityError", "DomainError", "InvalidArgument", "NumericalFailure", "ProxSapgError",
    "ScheduleInvalid", "UnsupportedConfiguration", "EstimatorSpec", "Homogeneous",
    "Inhomogeneous", "ParameterDomain", "PotentialModel", "PriorSplit", "ProblemInstance",
    "SeparablyHomogeneous", "builtin_gaussian_conjugate", "builtin_group_lasso",
    "builtin_laplace_scalar", "estimator_terms", "project_theta", "ChainState", "KernelConfig",
    "KernelKind", "drift_map", "run_chain", "step", "RunTrace", "Schedule",
    "averaged_objective_gap", "run", "validate_schedule",
]
