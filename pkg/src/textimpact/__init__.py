"""Model-assisted impact estimation for randomized trials with partially human-coded text outcomes."""

from .data import Document, Experiment, Schema, load_experiment, select_coding_sample
from .estimators import (
    ImpactEstimate,
    bias_decomposition,
    empirical_r2,
    estimate_covariate_adjusted,
    estimate_model_assisted,
    estimate_oracle,
    estimate_subset,
    estimate_synthetic,
)
from .learners import CrossFitPlan, PredictorSpec, cross_fit_predict, fit, predict, tune_cv
from .planner import DesignPlan, mdes, mdes_curve, relative_variance, required_fraction, variance_ma

__version__ = "0.1.0"

__all__ = [
    "CrossFitPlan",
    "DesignPlan",
    "Document",
    "Experiment",
    "ImpactEstimate",
    "PredictorSpec",
    "Schema",
    "bias_decomposition",
    "cross_fit_predict",
    "empirical_r2",
    "estimate_covariate_adjusted",
    "estimate_model_assisted",
    "estimate_oracle",
    "estimate_subset",
    "estimate_synthetic",
    "fit",
    "load_experiment",
    "mdes",
    "mdes_curve",
    "predict",
    "relative_variance",
    "required_fraction",
    "select_coding_sample",
    "tune_cv",
    "variance_ma",
]
