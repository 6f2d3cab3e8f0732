"""Nonparametric random-coefficients estimation on a fixed grid.

Fits the distribution of random coefficients in a logit choice model as a
weight vector over grid points, by constrained least squares with an
optional ridge penalty, with cross-validated tuning, support-recovery
diagnostics, Monte Carlo experiments, and an EM extension for models mixing
fixed and random coefficients.
"""

from .errors import (
    ConvergenceError,
    GridmixError,
    NumericalError,
    ValidationError,
)
from .metrics import (
    SUPPORT_THRESHOLD,
    SupportMetrics,
    l1_bias,
    rmise,
    support_metrics,
)
from .model import (
    ChoiceDataset,
    Grid,
    KernelMatrix,
    StepCDF,
    TransformedDesign,
    build_grid,
    cdf_indicator,
    choice_vector,
    kernel_matrix,
    observed_choice_probs,
    predict_choices,
    transform_design,
)
from .simulate import (
    DiscreteDGP,
    ExperimentSpec,
    GroundTruth,
    MixtureDGP,
    SummaryRow,
    correlation_quartile,
    draw_covariates,
    run_monte_carlo,
    sample_dgp,
    simulate_choices,
)
from .solver import (
    KKTReport,
    QuadraticForm,
    Solution,
    SolverConfig,
    kkt_residuals,
    lattice_search,
    project_simplex,
    solve_prepared,
    solve_simplex_ridge,
)
from .theory import (
    DiagnosticsReport,
    ErrorBounds,
    concentration_radius,
    diagnostics,
    gram_min_eigenvalues,
    irrepresentable_margin,
    recovery_error_bounds,
    signal_margin,
)
from .tuning import (
    CVResult,
    RULES,
    cross_validate,
    cv_fit,
    fold_assignments,
    make_mu_path,
    select_mu,
)
from .twostep import (
    ElasticityResult,
    EMResult,
    MixedSpec,
    elasticities,
    fit_weighted_logit,
    mixture_log_likelihood,
    posterior_weights,
    run_em,
)

__version__ = "0.1.0"

__all__ = [
    "ChoiceDataset",
    "ConvergenceError",
    "CVResult",
    "DiagnosticsReport",
    "DiscreteDGP",
    "ElasticityResult",
    "EMResult",
    "ErrorBounds",
    "ExperimentSpec",
    "Grid",
    "GridmixError",
    "GroundTruth",
    "KKTReport",
    "KernelMatrix",
    "MixedSpec",
    "MixtureDGP",
    "NumericalError",
    "QuadraticForm",
    "RULES",
    "Solution",
    "SolverConfig",
    "StepCDF",
    "SummaryRow",
    "SUPPORT_THRESHOLD",
    "SupportMetrics",
    "TransformedDesign",
    "ValidationError",
    "build_grid",
    "cdf_indicator",
    "choice_vector",
    "concentration_radius",
    "correlation_quartile",
    "cross_validate",
    "cv_fit",
    "diagnostics",
    "draw_covariates",
    "elasticities",
    "fit_weighted_logit",
    "fold_assignments",
    "gram_min_eigenvalues",
    "irrepresentable_margin",
    "kernel_matrix",
    "kkt_residuals",
    "l1_bias",
    "lattice_search",
    "make_mu_path",
    "mixture_log_likelihood",
    "observed_choice_probs",
    "posterior_weights",
    "predict_choices",
    "project_simplex",
    "recovery_error_bounds",
    "rmise",
    "run_em",
    "run_monte_carlo",
    "sample_dgp",
    "select_mu",
    "signal_margin",
    "simulate_choices",
    "solve_prepared",
    "solve_simplex_ridge",
    "support_metrics",
    "transform_design",
    "__version__",
]
