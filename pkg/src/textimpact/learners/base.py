"""Predictor specifications, fitting and prediction for the built-in learners."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ..errors import DegenerateTraining, NonFiniteInput, TextImpactError, WidthMismatch
from . import linear
from .trees import grow_ensemble

KINDS = ("ridge", "lasso", "knn", "regression_tree", "bagged_forest", "external")

DEFAULTS: dict[str, dict[str, Any]] = {
    "ridge": {"lambda": 0.1},
    "lasso": {"lambda": 0.05},
    "knn": {"k": 10},
    "regression_tree": {"max_depth": 6, "min_leaf": 5, "seed": 0},
    # conventional choices; nothing is prescribed for the forest
    "bagged_forest": {"n_trees": 200, "feature_subsample": 1 / 3, "min_leaf": 5, "max_depth": None, "seed": 0},
    "external": {"path": None},
}


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    hyperparams: Mapping[str, Any] = field(default_factory=dict)
    standardize: bool = True

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise TextImpactError(f"unknown learner kind {self.kind!r}; expected one of {KINDS}")
        allowed = DEFAULTS[self.kind]
        unknown = set(self.hyperparams) - set(allowed)
        if unknown:
            raise TextImpactError(f"{self.kind}: unknown hyperparameters {sorted(unknown)}")
        hp = {**allowed, **self.hyperparams}
        object.__setattr__(self, "hyperparams", hp)
        self._validate(hp)

    def _validate(self, hp: Mapping[str, Any]) -> None:
        k = self.kind
        if k in ("ridge", "lasso") and not (hp["lambda"] >= 0 and math.isfinite(hp["lambda"])):
            raise TextImpactError(f"{k}: lambda must be a finite value >= 0, got {hp['lambda']}")
        if k == "knn" and not (int(hp["k"]) == hp["k"] and hp["k"] >= 1):
            raise TextImpactError(f"knn: k must be an integer >= 1, got {hp['k']}")
        if k in ("regression_tree", "bagged_forest"):
            if hp["max_depth"] is not None and hp["max_depth"] < 1:
                raise TextImpactError(f"{k}: max_depth must be >= 1")
            if hp["min_leaf"] < 1:
                raise TextImpactError(f"{k}: min_leaf must be >= 1")
        if k == "bagged_forest":
            if hp["n_trees"] < 1:
                raise TextImpactError("bagged_forest: n_trees must be >= 1")
            if not 0 < hp["feature_subsample"] <= 1:
                raise TextImpactError("bagged_forest: feature_subsample must lie in (0, 1]")
        if k == "external" and not hp["path"]:
            raise TextImpactError("external: a predictions file path is required")

    def with_params(self, **hp: Any) -> "PredictorSpec":
        return PredictorSpec(self.kind, {**self.hyperparams, **hp}, self.standardize)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "hyperparams": dict(self.hyperparams), "standardize": self.standardize}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PredictorSpec":
        return cls(d["kind"], dict(d.get("hyperparams", {})), bool(d.get("standardize", True)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PredictorSpec":
        return cls.from_dict(json.loads(text))

    def label(self) -> str:
        if self.kind == "external":
            return "external"
        hp = ",".join(f"{k}={v:g}" if isinstance(v, float) else f"{k}={v}" for k, v in self.hyperparams.items() if k != "seed")
        return f"{self.kind}({hp})"


@dataclass(frozen=True, eq=False)
class FittedPredictor:
    spec: PredictorSpec
    params: Any
    mean: np.ndarray
    scale: np.ndarray
    training_r2: float

    @property
    def n_features(self) -> int:
        return self.mean.shape[0]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return predict(self, X)


def _standardize_stats(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    return mean, scale


def r2_score(y: np.ndarray, pred: np.ndarray) -> float:
    """1 - var(e)/var(y) with centered sample variances; may be negative."""
    vy = float(np.var(y, ddof=1)) if y.shape[0] > 1 else 0.0
    if vy == 0.0:
        return math.nan
    return 1.0 - float(np.var(y - pred, ddof=1)) / vy


def fit(spec: PredictorSpec, X: np.ndarray, y: np.ndarray) -> FittedPredictor:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if spec.kind == "external":
        raise TextImpactError("external predictors are read from file, not fitted")
    if X.ndim != 2 or X.shape[1] < 1:
        raise TextImpactError("X must be a 2-d matrix with at least one feature column")
    if X.shape[0] != y.shape[0]:
        raise WidthMismatch(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise DegenerateTraining(f"need at least 2 training rows, got {X.shape[0]}")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise NonFiniteInput("training data contain NaN or infinite values")

    if spec.standardize:
        mean, scale = _standardize_stats(X)
    else:
        mean, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
    Xs = (X - mean) / scale
    hp = spec.hyperparams
    kind = spec.kind

    if kind in ("ridge", "lasso"):
        # center even when not scaling, so the intercept stays unpenalized
        xbar = Xs.mean(axis=0)
        ybar = float(y.mean())
        coef, sweeps = linear.coordinate_descent(Xs - xbar, y - ybar, hp["lambda"], kind)
        params = {"coef": coef, "intercept": ybar - float(xbar @ coef), "sweeps": sweeps}
    elif kind == "knn":
        params = {"X": Xs, "y": y.copy()}
    elif kind == "regression_tree":
        model = grow_ensemble(Xs, y, max_depth=hp["max_depth"], min_leaf=int(hp["min_leaf"]), seed=hp["seed"])
        params = {"model": model}
    else:
        model = grow_ensemble(
            Xs,
            y,
            n_trees=int(hp["n_trees"]),
            bootstrap=True,
            max_depth=hp["max_depth"],
            min_leaf=int(hp["min_leaf"]),
            feature_subsample=float(hp["feature_subsample"]),
            seed=hp["seed"],
        )
        params = {"model": model}

    fitted = FittedPredictor(spec=spec, params=params, mean=mean, scale=scale, training_r2=math.nan)
    object.__setattr__(fitted, "training_r2", r2_score(y, _predict_std(fitted, Xs)))
    return fitted


def _knn_predict(params: Mapping[str, Any], Q: np.ndarray, k: int) -> np.ndarray:
    Xt, yt = params["X"], params["y"]
    k = min(k, Xt.shape[0])
    out = np.empty(Q.shape[0])
    sq_t = (Xt**2).sum(axis=1)
    for start in range(0, Q.shape[0], 512):
        q = Q[start : start + 512]
        d2 = (q**2).sum(axis=1)[:, None] + sq_t[None, :] - 2.0 * q @ Xt.T
        np.maximum(d2, 0.0, out=d2)
        # stable sort: equal distances keep training-row order
        nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
        out[start : start + 512] = yt[nn].mean(axis=1)
    return out


def _predict_std(model: FittedPredictor, Xs: np.ndarray) -> np.ndarray:
    kind = model.spec.kind
    if kind in ("ridge", "lasso"):
        return Xs @ model.params["coef"] + model.params["intercept"]
    if kind == "knn":
        return _knn_predict(model.params, Xs, int(model.spec.hyperparams["k"]))
    return model.params["model"].predict(Xs)


def predict(model: FittedPredictor, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.shape[1] != model.n_features:
        raise WidthMismatch(f"model was trained on {model.n_features} features, got {X.shape[1]}")
    if not np.isfinite(X).all():
        raise NonFiniteInput("prediction inputs contain NaN or infinite values")
    return _predict_std(model, (X - model.mean) / model.scale)
