"""Regression learners, cross-validated tuning and cross-fitting."""

from .base import KINDS, FittedPredictor, PredictorSpec, fit, predict, r2_score
from .crossfit import (
    CrossFitPlan,
    CrossFitResult,
    cross_fit,
    cross_fit_predict,
    make_partitions,
    read_external_predictions,
    tune_cv,
)

__all__ = [
    "KINDS",
    "CrossFitPlan",
    "CrossFitResult",
    "FittedPredictor",
    "PredictorSpec",
    "cross_fit",
    "cross_fit_predict",
    "fit",
    "make_partitions",
    "predict",
    "r2_score",
    "read_external_predictions",
    "tune_cv",
]
