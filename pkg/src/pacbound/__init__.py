"""Certified PAC-Bayes risk bounds for unbalanced multi-task and meta-learning."""

__version__ = "0.1.0"

from .bounds import BoundKind, BoundResult, RiskConstraint  # noqa: E402
from .ensemble import ComplexityBudget, Ensemble, TaskStat, build_ensemble, gaussian_budget  # noqa: E402
from .klmath import kl_bernoulli, kl_inv_lower, kl_inv_upper, phi, phi_inv  # noqa: E402
from .solver import ObjectiveWeights, SolveReport, maximize_joint, maximize_single_constraint  # noqa: E402
from .unionbound import LambdaGrid, MetaBudget, run_bound_suite  # noqa: E402

__all__ = [
    "__version__",
    "BoundKind",
    "BoundResult",
    "RiskConstraint",
    "ComplexityBudget",
    "Ensemble",
    "TaskStat",
    "build_ensemble",
    "gaussian_budget",
    "kl_bernoulli",
    "kl_inv_lower",
    "kl_inv_upper",
    "phi",
    "phi_inv",
    "ObjectiveWeights",
    "SolveReport",
    "maximize_joint",
    "maximize_single_constraint",
    "LambdaGrid",
    "MetaBudget",
    "run_bound_suite",
]
