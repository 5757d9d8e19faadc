"""Experiment data model, delimited-file ingestion and the arm-stratified coding design.

An :class:`Experiment` is stored column-wise (numpy arrays) because every
estimator works on whole columns; :attr:`Experiment.documents` gives the
row-wise :class:`Document` view when one is needed.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CodedWithoutScore,
    InvalidArm,
    MissingFeature,
    NonPositiveSample,
    SampleTooLarge,
    SchemaMismatch,
    TextImpactError,
)

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n", ""}


@dataclass(frozen=True)
class Document:
    id: str
    arm: int
    features: np.ndarray
    human_score: float | None = None
    predicted_score: float | None = None
    coded: bool = False
    inclusion_prob: float | None = None
    raw_text: str | None = None


@dataclass(frozen=True)
class Schema:
    """Column-name mapping for a delimited experiment file.

    ``features`` lists feature columns explicitly; when empty, every column
    not claimed by another role (and not starting with ``covariate_prefix``)
    is a feature.
    """

    id: str = "id"
    arm: str = "arm"
    features: tuple[str, ...] = ()
    score: str | None = "score"
    coded: str | None = "coded"
    inclusion_prob: str | None = None
    text: str | None = None
    predicted: str | None = None
    covariates: tuple[str, ...] = ()
    covariate_prefix: str = "cov_"

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Schema":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise SchemaMismatch(f"unknown schema keys: {sorted(unknown)}")
        kw = dict(d)
        for key in ("features", "covariates"):
            if key in kw and kw[key] is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)

    @classmethod
    def from_json(cls, path: str | Path) -> "Schema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict[str, Any]:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["features"] = list(self.features)
        d["covariates"] = list(self.covariates)
        return d


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Experiment:
    """Unit-level dataset of one randomized trial.

    Scores of uncoded documents are NaN. ``inclusion_prob`` is NaN for an
    arm with no coded documents.
    """

    ids: tuple[str, ...]
    arm: np.ndarray
    X: np.ndarray
    human_score: np.ndarray
    coded: np.ndarray
    inclusion_prob: np.ndarray
    feature_names: tuple[str, ...] = ()
    covariates: np.ndarray | None = None
    covariate_names: tuple[str, ...] = ()
    raw_text: tuple[str | None, ...] | None = None
    predicted_score: np.ndarray | None = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.ids)
        set_ = object.__setattr__
        set_(self, "ids", tuple(str(i) for i in self.ids))
        arm = np.asarray(self.arm)
        if arm.shape != (n,):
            raise TextImpactError(f"arm has shape {arm.shape}, expected ({n},)")
        bad = np.flatnonzero((arm != 0) & (arm != 1))
        if bad.size:
            raise InvalidArm(f"row {bad[0]}: arm value {arm[bad[0]]!r} not in {{0, 1}}")
        set_(self, "arm", _frozen(arm.astype(np.int8)))

        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(n, -1) if n else X.reshape(0, 0)
        if X.shape[0] != n:
            raise TextImpactError(f"feature matrix has {X.shape[0]} rows, expected {n}")
        missing = np.argwhere(~np.isfinite(X))
        if missing.size:
            r, c = missing[0]
            raise MissingFeature(f"row {r}: feature column {c} is missing or non-finite")
        set_(self, "X", _frozen(X))
        if not self.feature_names:
            set_(self, "feature_names", tuple(f"x{j}" for j in range(X.shape[1])))
        elif len(self.feature_names) != X.shape[1]:
            raise TextImpactError("feature_names length does not match feature matrix width")
        else:
            set_(self, "feature_names", tuple(self.feature_names))

        y = np.asarray(self.human_score, dtype=float)
        coded = np.asarray(self.coded, dtype=bool)
        if y.shape != (n,) or coded.shape != (n,):
            raise TextImpactError("human_score and coded must have one entry per document")
        bad = np.flatnonzero(coded & ~np.isfinite(y))
        if bad.size:
            raise CodedWithoutScore(f"row {bad[0]} (id {self.ids[bad[0]]!r}) is coded but has no score")
        set_(self, "human_score", _frozen(y))
        set_(self, "coded", _frozen(coded))

        pi = np.asarray(self.inclusion_prob, dtype=float)
        if pi.shape != (n,):
            raise TextImpactError("inclusion_prob must have one entry per document")
        ok = np.isnan(pi) | ((pi > 0) & (pi <= 1))
        if not ok.all():
            r = int(np.flatnonzero(~ok)[0])
            raise TextImpactError(f"row {r}: inclusion_prob {pi[r]} outside (0, 1]")
        set_(self, "inclusion_prob", _frozen(pi))

        if self.covariates is not None:
            C = np.asarray(self.covariates, dtype=float)
            if C.ndim == 1:
                C = C.reshape(-1, 1)
            if C.shape[0] != n:
                raise TextImpactError(f"baseline covariates have {C.shape[0]} rows, expected {n}")
            if not np.isfinite(C).all():
                r = int(np.argwhere(~np.isfinite(C))[0][0])
                raise MissingFeature(f"row {r}: baseline covariate missing or non-finite")
            set_(self, "covariates", _frozen(C))
            names = tuple(self.covariate_names) or tuple(f"cov{j}" for j in range(C.shape[1]))
            if len(names) != C.shape[1]:
                raise TextImpactError("covariate_names length does not match covariate matrix")
            set_(self, "covariate_names", names)
        if self.predicted_score is not None:
            p = np.asarray(self.predicted_score, dtype=float)
            if p.shape != (n,):
                raise TextImpactError("predicted_score must have one entry per document")
            set_(self, "predicted_score", _frozen(p))
        if self.raw_text is not None:
            if len(self.raw_text) != n:
                raise TextImpactError("raw_text must have one entry per document")
            set_(self, "raw_text", tuple(self.raw_text))
        set_(self, "meta", dict(self.meta))

    @classmethod
    def build(
        cls,
        arm: Sequence[int] | np.ndarray,
        X: np.ndarray,
        human_score: Sequence[float] | np.ndarray | None = None,
        coded: Sequence[bool] | np.ndarray | None = None,
        ids: Sequence[str] | None = None,
        **kw: Any,
    ) -> "Experiment":
        """Convenience constructor: fills ids, scores, flags and inclusion probabilities.

        When ``coded`` is omitted every scored document counts as coded.
        """
        arm = np.asarray(arm)
        n = arm.shape[0]
        ids = tuple(str(i) for i in range(n)) if ids is None else tuple(ids)
        y = np.full(n, np.nan) if human_score is None else np.asarray(human_score, dtype=float)
        if coded is None:
            coded = np.isfinite(y)
        coded = np.asarray(coded, dtype=bool)
        pi = kw.pop("inclusion_prob", None)
        if pi is None:
            pi = stratified_inclusion_prob(arm, coded)
        return cls(ids=ids, arm=arm, X=X, human_score=y, coded=coded, inclusion_prob=pi, **kw)

    # counts ------------------------------------------------------------
    @property
    def N(self) -> int:
        return len(self.ids)

    @property
    def N1(self) -> int:
        return int(self.arm.sum())

    @property
    def N0(self) -> int:
        return self.N - self.N1

    @property
    def n1(self) -> int:
        return int((self.coded & (self.arm == 1)).sum())

    @property
    def n0(self) -> int:
        return int((self.coded & (self.arm == 0)).sum())

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def fully_coded(self) -> bool:
        return bool(self.coded.all())

    @property
    def documents(self) -> tuple[Document, ...]:
        docs = []
        for i, doc_id in enumerate(self.ids):
            y = self.human_score[i]
            pi = self.inclusion_prob[i]
            docs.append(
                Document(
                    id=doc_id,
                    arm=int(self.arm[i]),
                    features=self.X[i],
                    human_score=None if math.isnan(y) else float(y),
                    predicted_score=None if self.predicted_score is None else float(self.predicted_score[i]),
                    coded=bool(self.coded[i]),
                    inclusion_prob=None if math.isnan(pi) else float(pi),
                    raw_text=None if self.raw_text is None else self.raw_text[i],
                )
            )
        return tuple(docs)

    def replace(self, **changes: Any) -> "Experiment":
        kw = {k: getattr(self, k) for k in self.__dataclass_fields__}
        kw.update(changes)
        return Experiment(**kw)

    def with_coding(self, coded: np.ndarray) -> "Experiment":
        """New experiment with the given coded flags and arm-stratified inclusion probabilities."""
        coded = np.asarray(coded, dtype=bool)
        return self.replace(coded=coded, inclusion_prob=stratified_inclusion_prob(self.arm, coded))

    # serialization -----------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        def opt(a: np.ndarray) -> list[float | None]:
            return [None if math.isnan(v) else float(v) for v in a]

        d: dict[str, Any] = {
            "ids": list(self.ids),
            "arm": self.arm.tolist(),
            "feature_names": list(self.feature_names),
            "X": self.X.tolist(),
            "human_score": opt(self.human_score),
            "coded": self.coded.tolist(),
            "inclusion_prob": opt(self.inclusion_prob),
        }
        if self.covariates is not None:
            d["covariate_names"] = list(self.covariate_names)
            d["covariates"] = self.covariates.tolist()
        if self.predicted_score is not None:
            d["predicted_score"] = self.predicted_score.tolist()
        if self.raw_text is not None:
            d["raw_text"] = list(self.raw_text)
        if self.meta:
            d["meta"] = dict(self.meta)
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "Experiment":
        def arr(v: Iterable[float | None]) -> np.ndarray:
            return np.array([np.nan if x is None else x for x in v], dtype=float)

        n = len(d["ids"])
        X = np.array(d["X"], dtype=float).reshape(n, len(d["feature_names"]))
        return cls(
            ids=tuple(d["ids"]),
            arm=np.array(d["arm"]),
            X=X,
            human_score=arr(d["human_score"]),
            coded=np.array(d["coded"], dtype=bool),
            inclusion_prob=arr(d["inclusion_prob"]),
            feature_names=tuple(d["feature_names"]),
            covariates=None if "covariates" not in d else np.array(d["covariates"], dtype=float),
            covariate_names=tuple(d.get("covariate_names", ())),
            raw_text=None if "raw_text" not in d else tuple(d["raw_text"]),
            predicted_score=None if "predicted_score" not in d else np.array(d["predicted_score"], dtype=float),
            meta=d.get("meta", {}),
        )

    def save_json(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)

    @classmethod
    def load_json(cls, path: str | Path) -> "Experiment":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def stratified_inclusion_prob(arm: np.ndarray, coded: np.ndarray) -> np.ndarray:
    """n_z / N_z for every document of arm z (NaN when the arm has no coded documents)."""
    arm = np.asarray(arm)
    coded = np.asarray(coded, dtype=bool)
    pi = np.full(arm.shape[0], np.nan)
    for z in (0, 1):
        in_arm = arm == z
        N_z = int(in_arm.sum())
        n_z = int((coded & in_arm).sum())
        if N_z and n_z:
            pi[in_arm] = n_z / N_z
    return pi


# ---------------------------------------------------------------------------
# delimited-text ingestion


def _parse_bool(value: str, row: int, column: str) -> bool:
    v = value.strip().lower()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise SchemaMismatch(f"row {row}: column {column!r} value {value!r} is not a boolean")


def _parse_float(value: str) -> float:
    v = value.strip()
    if v == "" or v.lower() in {"na", "nan", "null", "none"}:
        return math.nan
    return float(v)


def load_experiment(data_path: str | Path, schema: Schema | Mapping[str, Any] | None = None) -> Experiment:
    """Read a comma-separated file (UTF-8, header row) into a validated Experiment.

    Row indices in error messages are 0-based data rows (header excluded).
    """
    if schema is None:
        schema = Schema()
    elif not isinstance(schema, Schema):
        schema = Schema.from_dict(schema)
    path = Path(data_path)
    if not path.exists():
        raise FileNotFoundError(f"experiment file not found: {path}")

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)

    def need(col: str | None, role: str, optional: bool = False) -> str | None:
        if col is None:
            return None
        if col not in header:
            if optional:
                return None
            raise SchemaMismatch(f"{role} column {col!r} not found in {path.name}")
        return col

    id_col = need(schema.id, "id")
    arm_col = need(schema.arm, "arm")
    # score/coded default names are optional; explicitly configured ones are not
    default = Schema()
    score_col = need(schema.score, "score", optional=schema.score == default.score)
    coded_col = need(schema.coded, "coded", optional=schema.coded == default.coded)
    pi_col = need(schema.inclusion_prob, "inclusion_prob")
    text_col = need(schema.text, "text")
    pred_col = need(schema.predicted, "predicted")
    cov_cols = list(schema.covariates)
    for c in cov_cols:
        need(c, "covariate")
    if not cov_cols and schema.covariate_prefix:
        cov_cols = [c for c in header if c.startswith(schema.covariate_prefix)]

    claimed = {c for c in (id_col, arm_col, score_col, coded_col, pi_col, text_col, pred_col) if c}
    claimed.update(cov_cols)
    if schema.features:
        feat_cols = list(schema.features)
        for c in feat_cols:
            need(c, "feature")
    else:
        feat_cols = [c for c in header if c not in claimed]
    if not feat_cols:
        raise SchemaMismatch("schema names no feature columns")

    n = len(rows)
    ids: list[str] = []
    arm = np.zeros(n, dtype=np.int8)
    X = np.empty((n, len(feat_cols)))
    y = np.full(n, np.nan)
    coded = np.zeros(n, dtype=bool)
    pi = np.full(n, np.nan)
    C = np.empty((n, len(cov_cols))) if cov_cols else None
    pred = np.full(n, np.nan) if pred_col else None
    texts: list[str | None] | None = [] if text_col else None

    for r, row in enumerate(rows):
        ids.append(row[id_col])
        a = row[arm_col].strip()
        if a not in {"0", "1", "0.0", "1.0"}:
            raise InvalidArm(f"row {r}: arm value {a!r} not in {{0, 1}}")
        arm[r] = int(float(a))
        for j, c in enumerate(feat_cols):
            try:
                v = _parse_float(row[c])
            except ValueError:
                raise MissingFeature(f"row {r}: feature {c!r} value {row[c]!r} is not numeric") from None
            if not math.isfinite(v):
                raise MissingFeature(f"row {r}: feature {c!r} is missing")
            X[r, j] = v
        if score_col:
            y[r] = _parse_float(row[score_col])
        if coded_col:
            coded[r] = _parse_bool(row[coded_col], r, coded_col)
        elif score_col:
            coded[r] = math.isfinite(y[r])
        if coded[r] and not math.isfinite(y[r]):
            raise CodedWithoutScore(f"row {r} (id {row[id_col]!r}) is coded but has no score")
        if pi_col:
            pi[r] = _parse_float(row[pi_col])
        if C is not None:
            for j, c in enumerate(cov_cols):
                v = _parse_float(row[c])
                if not math.isfinite(v):
                    raise MissingFeature(f"row {r}: covariate {c!r} is missing")
                C[r, j] = v
        if pred is not None:
            pred[r] = _parse_float(row[pred_col])
        if texts is not None:
            texts.append(row[text_col])

    if not pi_col:
        pi = stratified_inclusion_prob(arm, coded)
    return Experiment(
        ids=tuple(ids),
        arm=arm,
        X=X,
        human_score=y,
        coded=coded,
        inclusion_prob=pi,
        feature_names=tuple(feat_cols),
        covariates=C,
        covariate_names=tuple(cov_cols),
        raw_text=None if texts is None else tuple(texts),
        predicted_score=pred,
        meta={"source": path.name},
    )


def write_experiment_csv(exp: Experiment, path: str | Path) -> Schema:
    """Write ``exp`` as a delimited file; returns the schema that reloads it."""
    cov_names = list(exp.covariate_names) if exp.covariates is not None else []
    header = ["id", "arm", *exp.feature_names, "score", "coded", "inclusion_prob", *cov_names]
    if exp.predicted_score is not None:
        header.append("predicted")
    if exp.raw_text is not None:
        header.append("text")

    def fmt(v: float) -> str:
        return "" if math.isnan(v) else repr(float(v))

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(exp.N):
            row = [exp.ids[i], int(exp.arm[i]), *(repr(float(v)) for v in exp.X[i])]
            row += [fmt(exp.human_score[i]), int(exp.coded[i]), fmt(exp.inclusion_prob[i])]
            if exp.covariates is not None:
                row += [repr(float(v)) for v in exp.covariates[i]]
            if exp.predicted_score is not None:
                row.append(fmt(exp.predicted_score[i]))
            if exp.raw_text is not None:
                row.append(exp.raw_text[i] or "")
            w.writerow(row)
    return Schema(
        features=tuple(exp.feature_names),
        inclusion_prob="inclusion_prob",
        covariates=tuple(cov_names),
        covariate_prefix="" if not cov_names else "cov_",
        predicted="predicted" if exp.predicted_score is not None else None,
        text="text" if exp.raw_text is not None else None,
    )


# ---------------------------------------------------------------------------
# coding design


def select_coding_sample(exp: Experiment, n1: int, n0: int, seed: int | np.random.Generator | None = None) -> Experiment:
    """Simple random sampling without replacement of ``n_z`` documents within each arm.

    Documents drawn but lacking a score (planning mode) are marked coded only
    if a score exists; the full draw is kept in ``meta["selected"]``.
    """
    counts = {1: (n1, exp.N1), 0: (n0, exp.N0)}
    for z, (n_z, N_z) in counts.items():
        if n_z < 0:
            raise NonPositiveSample(f"n{z} = {n_z} is negative")
        if n_z > N_z:
            raise SampleTooLarge(f"n{z} = {n_z} exceeds arm size N{z} = {N_z}")
    if n1 == 0 and n0 == 0:
        raise NonPositiveSample("coding sample is empty (n1 = n0 = 0)")

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    selected = np.zeros(exp.N, dtype=bool)
    for z in (1, 0):
        n_z = counts[z][0]
        members = np.flatnonzero(exp.arm == z)
        if n_z:
            selected[rng.choice(members, size=n_z, replace=False)] = True

    pi = np.full(exp.N, np.nan)
    for z, (n_z, N_z) in counts.items():
        if n_z:
            pi[exp.arm == z] = n_z / N_z
    coded = selected & np.isfinite(exp.human_score)
    meta = dict(exp.meta)
    meta["selected"] = [exp.ids[i] for i in np.flatnonzero(selected)]
    return exp.replace(coded=coded, inclusion_prob=pi, meta=meta)
