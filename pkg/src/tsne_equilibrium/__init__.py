"""t-SNE in the proportional-perplexity regime, its population-level limit
objects, and convergence experiments between the two."""

from .affinities import CalibratedAffinities, calibrate_all, calibrate_sigma, row_conditionals, row_entropy
from .core_types import (
    Dataset,
    Embedding,
    MeasureSpec,
    RunConfig,
    empirical_measure,
    validate_dataset,
)
from .estimator import ProportionalPerplexityTSNE
from .lowdim_kernel import loss, loss_gradient, loss_report, q_matrix
from .optimizer import OptimizerConfig, OptimizeResult, init_embedding, minimize, multistart_minimize
from .population import (
    F_value,
    PopulationContext,
    QuadraturePlan,
    SigmaField,
    context_from_joint_points,
    context_from_measure,
    functional_I,
    p_psi_kernel,
    q_population,
    sigma_field,
    solve_sigma_star,
)
from .stationarity import residual_discrete, residual_plugin

__version__ = "0.1.0"

__all__ = [
    "CalibratedAffinities", "calibrate_all", "calibrate_sigma",
    "row_conditionals", "row_entropy",
    "Dataset", "Embedding", "MeasureSpec", "RunConfig",
    "empirical_measure", "validate_dataset",
    "ProportionalPerplexityTSNE",
    "loss", "loss_gradient", "loss_report", "q_matrix",
    "OptimizerConfig", "OptimizeResult", "init_embedding", "minimize",
    "multistart_minimize",
    "F_value", "PopulationContext", "QuadraturePlan", "SigmaField",
    "context_from_joint_points", "context_from_measure", "functional_I",
    "p_psi_kernel", "q_population", "sigma_field", "solve_sigma_star",
    "residual_discrete", "residual_plugin",
    "__version__",
]
