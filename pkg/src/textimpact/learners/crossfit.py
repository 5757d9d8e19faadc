"""K-fold cross-validated tuning and cross-fitted predictions for every document."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..data import Experiment
from ..errors import (
    DegenerateTraining,
    EmptyGrid,
    InsufficientCoded,
    LengthMismatch,
    TextImpactError,
)
from .base import FittedPredictor, PredictorSpec, fit, predict, r2_score

MODES = ("pure_crossfit", "cv_departure")


@dataclass(frozen=True)
class CrossFitPlan:
    K: int = 5
    mode: str = "pure_crossfit"
    per_arm_models: bool = True
    seed: int | None = 0

    def __post_init__(self) -> None:
        if self.K < 2:
            raise TextImpactError(f"cross-fitting needs K >= 2 partitions, got {self.K}")
        if self.mode not in MODES:
            raise TextImpactError(f"unknown cross-fit mode {self.mode!r}; expected one of {MODES}")

    def to_dict(self) -> dict:
        return {"K": self.K, "mode": self.mode, "per_arm_models": self.per_arm_models, "seed": self.seed}


@dataclass(frozen=True)
class FoldModel:
    """One fitted model with the rows it was trained on and the rows it predicted."""

    model: FittedPredictor
    train: np.ndarray
    predicted: np.ndarray
    partition: int | None


@dataclass(frozen=True, eq=False)
class CrossFitResult:
    predictions: np.ndarray
    partition: np.ndarray
    models: list[FoldModel] = field(default_factory=list)
    chosen: list[PredictorSpec] = field(default_factory=list)


def _rng(seed: int | np.random.Generator | None) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def deal_folds(n: int, K: int, seed: int | np.random.Generator | None) -> np.ndarray:
    """Random fold labels 0..K-1 with sizes differing by at most one."""
    labels = np.empty(n, dtype=np.int64)
    labels[_rng(seed).permutation(n)] = np.arange(n) % K
    return labels


def make_partitions(arm: np.ndarray, coded: np.ndarray, K: int, seed: int | np.random.Generator | None) -> np.ndarray:
    """Shuffle within each (arm x coded) stratum and deal round-robin into K partitions."""
    rng = _rng(seed)
    labels = np.empty(arm.shape[0], dtype=np.int64)
    offset = 0
    for z in (1, 0):
        for s in (True, False):
            idx = np.flatnonzero((arm == z) & (coded == s))
            idx = idx[rng.permutation(idx.shape[0])]
            labels[idx] = (offset + np.arange(idx.shape[0])) % K
            offset += idx.shape[0]
    return labels


def oof_predictions(grid: Sequence[PredictorSpec], X: np.ndarray, y: np.ndarray, folds: np.ndarray) -> np.ndarray:
    """Out-of-fold predictions, one column per grid point."""
    out = np.empty((X.shape[0], len(grid)))
    for f in np.unique(folds):
        test = folds == f
        train = ~test
        if train.sum() < 2:
            raise DegenerateTraining(f"fold {f} leaves fewer than 2 training rows")
        for g, spec in enumerate(grid):
            out[test, g] = predict(fit(spec, X[train], y[train]), X[test])
    return out


def _best(grid: Sequence[PredictorSpec], y: np.ndarray, oof: np.ndarray) -> tuple[int, float]:
    best, best_r2 = 0, -math.inf
    for g in range(len(grid)):
        r2 = r2_score(y, oof[:, g])
        if math.isnan(r2):
            r2 = 0.0 if np.allclose(oof[:, g], y) else -math.inf
        if r2 > best_r2:  # strict: ties go to the earlier grid point
            best, best_r2 = g, r2
    return best, best_r2


def tune_cv(
    spec_grid: Sequence[PredictorSpec],
    X: np.ndarray,
    y: np.ndarray,
    folds: int = 5,
    seed: int | np.random.Generator | None = None,
) -> tuple[PredictorSpec, float]:
    """Pick the grid point with the highest out-of-fold R^2."""
    if not spec_grid:
        raise EmptyGrid("tuning grid is empty")
    if folds < 2:
        raise TextImpactError(f"need folds >= 2, got {folds}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.shape[0] < folds:
        raise DegenerateTraining(f"{X.shape[0]} rows cannot fill {folds} folds")
    oof = oof_predictions(spec_grid, X, y, deal_folds(X.shape[0], folds, seed))
    g, r2 = _best(spec_grid, y, oof)
    return spec_grid[g], r2


def read_external_predictions(path: str | Path, ids: Sequence[str]) -> np.ndarray:
    """Load an (id, predicted_score) file aligned to ``ids``; every id exactly once."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"predictions file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not reader.fieldnames or not {"id", "predicted_score"} <= set(reader.fieldnames):
            raise TextImpactError(f"{path.name}: expected columns 'id' and 'predicted_score'")
        rows = [(r["id"], r["predicted_score"]) for r in reader]
    if len(rows) != len(ids):
        raise LengthMismatch(f"{path.name} has {len(rows)} predictions for {len(ids)} documents")
    by_id: dict[str, float] = {}
    for doc_id, value in rows:
        if doc_id in by_id:
            raise LengthMismatch(f"{path.name}: id {doc_id!r} appears more than once")
        by_id[doc_id] = float(value)
    missing = [i for i in ids if i not in by_id]
    if missing:
        raise LengthMismatch(f"{path.name}: no prediction for id {missing[0]!r}")
    out = np.array([by_id[i] for i in ids])
    if not np.isfinite(out).all():
        raise TextImpactError(f"{path.name}: predictions must be finite")
    return out


def _design(exp: Experiment, use_covariates: bool) -> np.ndarray:
    if not use_covariates:
        return exp.X
    if exp.covariates is None:
        raise TextImpactError("use_covariates requested but the experiment has no baseline covariates")
    return np.hstack([exp.X, exp.covariates])


def cross_fit(
    exp: Experiment,
    spec: PredictorSpec,
    plan: CrossFitPlan = CrossFitPlan(),
    grid: Sequence[PredictorSpec] | None = None,
    use_covariates: bool = False,
) -> CrossFitResult:
    """Predictions for all N documents plus the fold bookkeeping behind them.

    ``grid`` (optional) is tuned by K-fold CV inside each training set
    (pure_crossfit) or once per model group (cv_departure); ``spec`` is then ignored.
    """
    N = exp.N
    rng = np.random.default_rng(plan.seed)
    part = make_partitions(exp.arm, exp.coded, plan.K, rng)
    if spec.kind == "external":
        return CrossFitResult(read_external_predictions(spec.hyperparams["path"], exp.ids), part)

    X = _design(exp, use_covariates)
    y = exp.human_score
    coded = exp.coded
    groups = [exp.arm == 1, exp.arm == 0] if plan.per_arm_models else [np.ones(N, dtype=bool)]
    labels = ["treated", "control"] if plan.per_arm_models else ["pooled"]
    for g, name in zip(groups, labels):
        if g.any() and (coded & g).sum() < plan.K:
            raise InsufficientCoded(f"{name} model group has {(coded & g).sum()} coded documents; need at least K={plan.K}")

    preds = np.full(N, np.nan)
    models: list[FoldModel] = []
    chosen: list[PredictorSpec] = []

    def train(rows: np.ndarray) -> FittedPredictor:
        if rows.sum() < 2:
            raise InsufficientCoded(f"a training fold has {rows.sum()} coded documents")
        Xt, yt = X[rows], y[rows]
        if grid:
            best, _ = tune_cv(grid, Xt, yt, folds=min(plan.K, int(rows.sum())), seed=rng)
            chosen.append(best)
            return fit(best, Xt, yt)
        return fit(spec, Xt, yt)

    if plan.mode == "pure_crossfit":
        for r in range(plan.K):
            for g in groups:
                target = g & (part == r)
                if not target.any():
                    continue
                rows = coded & g & (part != r)
                model = train(rows)
                preds[target] = predict(model, X[target])
                models.append(FoldModel(model, np.flatnonzero(rows), np.flatnonzero(target), r))
    else:
        for g in groups:
            cg = coded & g
            if grid:
                idx = np.flatnonzero(cg)
                oof = oof_predictions(grid, X[idx], y[idx], part[idx])
                b, _ = _best(grid, y[idx], oof)
                best = grid[b]
                chosen.append(best)
                preds[idx] = oof[:, b]
                final = fit(best, X[idx], y[idx])
            else:
                for r in range(plan.K):
                    target = cg & (part == r)
                    if not target.any():
                        continue
                    rows = cg & (part != r)
                    model = train(rows)
                    preds[target] = predict(model, X[target])
                    models.append(FoldModel(model, np.flatnonzero(rows), np.flatnonzero(target), r))
                final = train(cg)
            uncoded = g & ~coded
            if uncoded.any():
                preds[uncoded] = predict(final, X[uncoded])
            models.append(FoldModel(final, np.flatnonzero(cg), np.flatnonzero(uncoded), None))

    if np.isnan(preds).any():
        raise InsufficientCoded("some documents received no prediction")
    return CrossFitResult(preds, part, models, chosen)


def cross_fit_predict(
    exp: Experiment,
    spec: PredictorSpec,
    plan: CrossFitPlan = CrossFitPlan(),
    grid: Sequence[PredictorSpec] | None = None,
    use_covariates: bool = False,
) -> np.ndarray:
    return cross_fit(exp, spec, plan, grid=grid, use_covariates=use_covariates).predictions
