"""Bayesian adaptive dose-finding engine for Phase I trials."""

from .model import (
    CanonicalParams,
    DoseSpace,
    NaturalParams,
    SingularTransformError,
    fisher_info,
    linear_predictor,
    mtd,
    to_canonical,
    toxicity_prob,
)
from .posterior import (
    GridPosterior,
    History,
    Prior,
    WeightedSample,
    build_grid_posterior,
    draw_importance_sample,
    expected_loss,
    log_likelihood,
    marginal_eta,
    posterior_mean_eta,
    posterior_quantile_eta,
    predictive_dlt_prob,
)
from .losses import (
    DesignCriterion,
    DesignMeasure,
    Ewoc,
    Inverted,
    SquaredError,
    criterion,
    design_loss,
    eval_loss,
    info_matrix,
)

__all__ = [
    "CanonicalParams",
    "DoseSpace",
    "NaturalParams",
    "SingularTransformError",
    "fisher_info",
    "linear_predictor",
    "mtd",
    "to_canonical",
    "toxicity_prob",
    "GridPosterior",
    "History",
    "Prior",
    "WeightedSample",
    "build_grid_posterior",
    "draw_importance_sample",
    "expected_loss",
    "log_likelihood",
    "marginal_eta",
    "posterior_mean_eta",
    "posterior_quantile_eta",
    "predictive_dlt_prob",
    "DesignCriterion",
    "DesignMeasure",
    "Ewoc",
    "Inverted",
    "SquaredError",
    "criterion",
    "design_loss",
    "eval_loss",
    "info_matrix",
]

__version__ = "0.1.0"
