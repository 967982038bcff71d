"""Random-effect prediction in clustered GLMMs under mixture-of-normals laws."""

from .diagnostics import ShapiroResult, density_curve, qq_data, shapiro_wilk
from .fit import FitConfig, FitError, FittedModel, fit_ml, marginal_loglik
from .intervals import BinCoverage, IntervalReport, coverage_eval, prediction_interval
from .lmm import (
    CmsepGammas,
    LmmClusterMats,
    MixtureBp,
    blup_normal,
    bp_mixture_lmm,
    c1_mixture_mc,
    c1_normal,
    cmsep_gammas,
    kl_objective,
    u1_mixture_mc,
    u1_normal,
    zeta_weights,
)
from .model import (
    FAMILIES,
    ClusterData,
    Dataset,
    MixtureSpec,
    Theta,
    cond_loglik,
    is_standardized,
    linear_predictor,
    mixture_logpdf,
    mixture_moments,
    sample_mixture,
    sample_response,
    standardize_mixture,
)
from .msep import (
    CmsepStudy,
    HarnessError,
    MsepEntry,
    MsepResult,
    UmsepStudy,
    bootstrap_msep,
    simulated_cmsep,
    simulated_umsep,
    u1_report,
)
from .predict import Prediction, ebp, ebp_all
from .quadrature import (
    ComponentPosterior,
    GhRule,
    component_posterior,
    gh_rule,
    grid_posterior_oracle,
    posterior_summary,
)
from .simlab import (
    DIST_I,
    DIST_II,
    GeneratedData,
    Scenario,
    builtin_scenarios,
    generate,
    get_scenario,
    redraw_responses,
    wages_like_scenario,
)

__version__ = "0.1.0"

__all__ = [
    "DIST_I",
    "DIST_II",
    "FAMILIES",
    "BinCoverage",
    "ClusterData",
    "CmsepGammas",
    "CmsepStudy",
    "ComponentPosterior",
    "Dataset",
    "FitConfig",
    "FitError",
    "FittedModel",
    "GeneratedData",
    "GhRule",
    "HarnessError",
    "IntervalReport",
    "LmmClusterMats",
    "MixtureBp",
    "MixtureSpec",
    "MsepEntry",
    "MsepResult",
    "Prediction",
    "Scenario",
    "ShapiroResult",
    "Theta",
    "UmsepStudy",
    "blup_normal",
    "bootstrap_msep",
    "bp_mixture_lmm",
    "builtin_scenarios",
    "c1_mixture_mc",
    "c1_normal",
    "cmsep_gammas",
    "component_posterior",
    "cond_loglik",
    "coverage_eval",
    "density_curve",
    "ebp",
    "ebp_all",
    "fit_ml",
    "generate",
    "get_scenario",
    "gh_rule",
    "grid_posterior_oracle",
    "is_standardized",
    "kl_objective",
    "linear_predictor",
    "marginal_loglik",
    "mixture_logpdf",
    "mixture_moments",
    "posterior_summary",
    "prediction_interval",
    "qq_data",
    "redraw_responses",
    "sample_mixture",
    "sample_response",
    "shapiro_wilk",
    "simulated_cmsep",
    "simulated_umsep",
    "standardize_mixture",
    "u1_mixture_mc",
    "u1_normal",
    "u1_report",
    "wages_like_scenario",
    "zeta_weights",
]
