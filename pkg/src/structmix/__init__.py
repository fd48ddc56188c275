"""Mixed effects modeling of joint geometric/functional projections.

Structured covariance construction, precision estimation through regularized
row regressions, iterative generalized least squares with Wald inference,
desk-scale PCA, a forced-zero-pattern oracle, and a reproducible simulation
study harness with CSV/JSON/figure reports.
"""

from .covariance import (
    CholeskyFactors,
    ParametricFit,
    ParametricSpec,
    StructuredCovariance,
    ar1_block,
    build_sigma,
    dense_cholesky_precision,
    ensure_pd,
    fit_parametric,
    kl_divergence,
)
from .errors import (
    ConfigError,
    ConvergenceWarning,
    DegenerateColumnError,
    DimensionError,
    IdentifiabilityError,
    OverfitError,
    ParameterError,
    StructmixError,
    ValidityError,
)
from .mixed import (
    Design,
    FitOptions,
    FitResult,
    FixedEffects,
    WaldReport,
    assemble_design,
    fit_iterative,
    gls_loop,
    gls_update,
    pack_fixed_effects,
    predict_outcomes,
    validate_identifiability,
    wald_tests,
)
from .model import ModelSpec, coefficient_labels
from .pca import PcBasis, empirical_pca, fpca_flat, pre_residualize
from .precision import (
    CholeskyEstimate,
    PenaltyPolicy,
    default_tau,
    estimate_precision,
    lambda_for_target,
    lasso_row,
)
from .report import VerificationBatch, export_report
from .simulate import (
    METHODS,
    MetricsReport,
    PcChainConfig,
    SimulatedDataset,
    StudyConfig,
    TruthParams,
    benchmark_study,
    benchmark_truth,
    evaluate_run,
    fit_baselines,
    generate_dataset,
    run_study,
)
from .sparsity import (
    CouplingPattern,
    ZeroPatternReport,
    predicted_zero_pattern,
    random_coupled_covariance,
    verify_zero_pattern,
)

__version__ = "0.1.0"

__all__ = [
    "CholeskyEstimate",
    "CholeskyFactors",
    "ConfigError",
    "ConvergenceWarning",
    "CouplingPattern",
    "DegenerateColumnError",
    "Design",
    "DimensionError",
    "FitOptions",
    "FitResult",
    "FixedEffects",
    "IdentifiabilityError",
    "METHODS",
    "MetricsReport",
    "ModelSpec",
    "OverfitError",
    "ParameterError",
    "ParametricFit",
    "ParametricSpec",
    "PcBasis",
    "PcChainConfig",
    "PenaltyPolicy",
    "ZeroPatternReport",
    "SimulatedDataset",
    "StructmixError",
    "StructuredCovariance",
    "StudyConfig",
    "TruthParams",
    "ValidityError",
    "VerificationBatch",
    "WaldReport",
    "benchmark_study",
    "benchmark_truth",
    "ar1_block",
    "assemble_design",
    "build_sigma",
    "coefficient_labels",
    "default_tau",
    "dense_cholesky_precision",
    "empirical_pca",
    "ensure_pd",
    "estimate_precision",
    "evaluate_run",
    "export_report",
    "fit_baselines",
    "fit_iterative",
    "fit_parametric",
    "fpca_flat",
    "generate_dataset",
    "gls_loop",
    "gls_update",
    "kl_divergence",
    "lambda_for_target",
    "lasso_row",
    "pack_fixed_effects",
    "predict_outcomes",
    "predicted_zero_pattern",
    "pre_residualize",
    "random_coupled_covariance",
    "run_study",
    "validate_identifiability",
    "verify_zero_pattern",
    "wald_tests",
]
