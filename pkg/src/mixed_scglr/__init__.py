"""Supervised-component regularisation for multivariate GLMMs on grouped data."""

__version__ = "0.1.0"

from .criteria import (
    CriterionConfig,
    ProjectionContext,
    criterion,
    grad_criterion,
    grad_phi,
    grad_psi,
    phi,
    psi,
)
from .data import (
    Dataset,
    FamilySpec,
    Weighting,
    build_indicator,
    gaussian_family,
    load_dataset,
    poisson_family,
    standardize,
)
from .evaluation import (
    CvPlan,
    CvResult,
    ave_nrmse,
    correlation_scatterplot_data,
    cross_validate,
    group_stratified_folds,
    mlre,
    select_best,
)
from .glmm import (
    GlmmFit,
    ResponseState,
    fit_glmm,
    henderson_edf,
    posterior_group_cov,
    solve_henderson,
    update_dispersion_gaussian,
    update_variance,
    working_update,
)
from .model import ComponentSet, FitOptions, FitResult, fit, fit_component, predict
from .simulate import (
    SimDesign,
    SimTruth,
    StudyResult,
    generate,
    lmm_estimator,
    mixed_scglr_estimator,
    run_study,
)
from .sphere import (
    PingOptions,
    PingResult,
    SphereProgram,
    StationarityError,
    arc_search,
    build_metric_program,
    ping_maximize,
    ping_step,
    project_orthogonal,
)

__all__ = [
    "CriterionConfig",
    "ProjectionContext",
    "criterion",
    "grad_criterion",
    "grad_phi",
    "grad_psi",
    "phi",
    "psi",
    "Dataset",
    "FamilySpec",
    "Weighting",
    "build_indicator",
    "gaussian_family",
    "load_dataset",
    "poisson_family",
    "standardize",
    "CvPlan",
    "CvResult",
    "ave_nrmse",
    "correlation_scatterplot_data",
    "cross_validate",
    "group_stratified_folds",
    "mlre",
    "select_best",
    "GlmmFit",
    "ResponseState",
    "fit_glmm",
    "henderson_edf",
    "posterior_group_cov",
    "solve_henderson",
    "update_dispersion_gaussian",
    "update_variance",
    "working_update",
    "ComponentSet",
    "FitOptions",
    "FitResult",
    "fit",
    "fit_component",
    "predict",
    "SimDesign",
    "SimTruth",
    "StudyResult",
    "generate",
    "lmm_estimator",
    "mixed_scglr_estimator",
    "run_study",
    "PingOptions",
    "PingResult",
    "SphereProgram",
    "StationarityError",
    "arc_search",
    "build_metric_program",
    "ping_maximize",
    "ping_step",
    "project_orthogonal",
]
