"""Impact estimators for partially human-coded text outcomes.

All estimators take an :class:`~textimpact.data.Experiment` and, where they
need them, predicted scores for all N documents. Variances are the usual
plug-ins; confidence intervals are normal-based.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Mapping

import numpy as np
from scipy.stats import norm

from .data import Experiment
from .errors import LengthMismatch, MissingCovariates, NotFullyCoded, TooFewCoded

METHODS = ("oracle", "subset", "synthetic", "model_assisted", "covariate_adjusted")
TABLE_COLUMNS = ("method", "tau_hat", "se", "ci_lo", "ci_hi", "r2_treat", "r2_control", "n1", "n0", "N1", "N0")


@dataclass(frozen=True)
class ImpactEstimate:
    method: str
    tau_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    alpha: float
    n1: int
    n0: int
    N1: int
    N0: int
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    @property
    def var(self) -> float:
        return self.se**2

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["diagnostics"] = _jsonable(dict(self.diagnostics))
        return d

    def table_row(self) -> dict[str, Any]:
        r2 = self.diagnostics.get("r2", {})
        return {
            "method": self.method,
            "tau_hat": self.tau_hat,
            "se": self.se,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "r2_treat": r2.get(1, r2.get("1")),
            "r2_control": r2.get(0, r2.get("0")),
            "n1": self.n1,
            "n0": self.n0,
            "N1": self.N1,
            "N0": self.N0,
        }


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def estimates_to_json(estimates: list[ImpactEstimate], **extra: Any) -> str:
    return json.dumps({**_jsonable(extra), "estimates": [e.to_dict() for e in estimates]}, indent=2, sort_keys=True)


def estimates_to_table(estimates: list[ImpactEstimate]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=TABLE_COLUMNS, lineterminator="\n")
    w.writeheader()
    for e in estimates:
        row = e.table_row()
        w.writerow({k: ("" if v is None else (repr(v) if isinstance(v, float) else v)) for k, v in row.items()})
    return buf.getvalue()


def _make(method: str, tau: float, var: float, alpha: float, exp: Experiment, diagnostics: dict | None = None) -> ImpactEstimate:
    se = math.sqrt(max(var, 0.0))
    z = float(norm.ppf(1 - alpha / 2))
    return ImpactEstimate(
        method=method,
        tau_hat=float(tau),
        se=se,
        ci_lo=float(tau - z * se),
        ci_hi=float(tau + z * se),
        alpha=alpha,
        n1=exp.n1,
        n0=exp.n0,
        N1=exp.N1,
        N0=exp.N0,
        diagnostics=diagnostics or {},
    )


def _var(x: np.ndarray) -> float:
    return float(np.var(x, ddof=1)) if x.shape[0] > 1 else 0.0


def _check_preds(exp: Experiment, preds: np.ndarray) -> np.ndarray:
    preds = np.asarray(preds, dtype=float)
    if preds.shape != (exp.N,):
        raise LengthMismatch(f"got {preds.shape[0] if preds.ndim else 0} predictions for {exp.N} documents")
    return preds


def _need_coded(exp: Experiment, minimum: int = 2) -> None:
    for z, n_z in ((1, exp.n1), (0, exp.n0)):
        if n_z < minimum:
            raise TooFewCoded(f"arm {z} has {n_z} coded documents; need at least {minimum}")


def estimate_oracle(exp: Experiment, alpha: float = 0.05) -> ImpactEstimate:
    """Neyman difference in means under full coding."""
    if not exp.fully_coded:
        raise NotFullyCoded(f"oracle needs every document coded ({exp.n1 + exp.n0} of {exp.N} are)")
    y1 = exp.human_score[exp.arm == 1]
    y0 = exp.human_score[exp.arm == 0]
    s1, s0 = _var(y1), _var(y0)
    return _make("oracle", y1.mean() - y0.mean(), s1 / y1.size + s0 / y0.size, alpha, exp, {"s2": {1: s1, 0: s0}})


def estimate_subset(exp: Experiment, alpha: float = 0.05) -> ImpactEstimate:
    _need_coded(exp)
    y1 = exp.human_score[exp.coded & (exp.arm == 1)]
    y0 = exp.human_score[exp.coded & (exp.arm == 0)]
    s1, s0 = _var(y1), _var(y0)
    return _make("subset", y1.mean() - y0.mean(), s1 / y1.size + s0 / y0.size, alpha, exp, {"s2": {1: s1, 0: s0}})


def estimate_synthetic(exp: Experiment, preds: np.ndarray, alpha: float = 0.05) -> ImpactEstimate:
    """Difference in mean predictions. The naive variance ignores prediction error."""
    preds = _check_preds(exp, preds)
    p1 = preds[exp.arm == 1]
    p0 = preds[exp.arm == 0]
    v = _var(p1) / p1.size + _var(p0) / p0.size
    return _make("synthetic", p1.mean() - p0.mean(), v, alpha, exp, {"anti_conservative": True})


def _arm_pieces(exp: Experiment, preds: np.ndarray, z: int) -> dict[str, float]:
    in_arm = exp.arm == z
    cz = exp.coded & in_arm
    y = exp.human_score[cz]
    e = y - preds[cz]
    s2, se2 = _var(y), _var(e)
    return {
        "N": float(in_arm.sum()),
        "n": float(cz.sum()),
        "pred_mean": float(preds[in_arm].mean()),
        "resid_mean": float(e.mean()),
        "s2": s2,
        "se2": se2,
        "r2": (1.0 - se2 / s2) if s2 > 0 else math.nan,
    }


def bias_decomposition(exp: Experiment, preds: np.ndarray) -> tuple[float, float]:
    """Split the model-assisted estimate into (synthetic part, residual correction)."""
    preds = _check_preds(exp, preds)
    _need_coded(exp)
    a1, a0 = _arm_pieces(exp, preds, 1), _arm_pieces(exp, preds, 0)
    return a1["pred_mean"] - a0["pred_mean"], a1["resid_mean"] - a0["resid_mean"]


def estimate_model_assisted(exp: Experiment, preds: np.ndarray, alpha: float = 0.05) -> ImpactEstimate:
    """Predicted arm means plus the mean coded residual, differenced across arms."""
    preds = _check_preds(exp, preds)
    _need_coded(exp)
    a = {z: _arm_pieces(exp, preds, z) for z in (1, 0)}
    mean = {z: a[z]["pred_mean"] + a[z]["resid_mean"] for z in (1, 0)}
    experiment_part = sum(a[z]["s2"] / a[z]["N"] for z in (1, 0))
    coding_part = sum((a[z]["N"] - a[z]["n"]) / a[z]["N"] * a[z]["se2"] / a[z]["n"] for z in (1, 0))
    diag = {
        "s2": {z: a[z]["s2"] for z in (1, 0)},
        "se2": {z: a[z]["se2"] for z in (1, 0)},
        "r2": {z: a[z]["r2"] for z in (1, 0)},
        "arm_means": mean,
        "var_experiment": experiment_part,
        "var_coding": coding_part,
    }
    return _make("model_assisted", mean[1] - mean[0], experiment_part + coding_part, alpha, exp, diag)


def empirical_r2(exp: Experiment, preds: np.ndarray) -> dict[int, float]:
    """Per-arm 1 - s_e^2 / s^2 on coded documents (can be negative)."""
    preds = _check_preds(exp, preds)
    _need_coded(exp)
    return {z: _arm_pieces(exp, preds, z)["r2"] for z in (1, 0)}


@dataclass(frozen=True)
class CoefficientTable:
    names: tuple[str, ...]
    estimate: np.ndarray
    se: np.ndarray

    def as_dict(self) -> dict[str, dict[str, float]]:
        return {n: {"estimate": float(b), "se": float(s)} for n, b, s in zip(self.names, self.estimate, self.se)}


def pseudo_outcomes(exp: Experiment, preds: np.ndarray) -> np.ndarray:
    """Per-document Y_hat + (S / pi)(Y - Y_hat); equals Y_hat for uncoded documents."""
    preds = _check_preds(exp, preds)
    out = preds.copy()
    c = exp.coded
    pi = exp.inclusion_prob[c]
    if not (np.isfinite(pi) & (pi > 0)).all():
        raise TooFewCoded("coded documents need an inclusion probability")
    out[c] += (exp.human_score[c] - preds[c]) / pi
    return out


def ols_hc1(y: np.ndarray, D: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares coefficients and HC1 sandwich standard errors."""
    n, k = D.shape
    XtX_inv = np.linalg.pinv(D.T @ D)
    beta = XtX_inv @ (D.T @ y)
    e = y - D @ beta
    meat = (D * (e**2)[:, None]).T @ D
    V = XtX_inv @ meat @ XtX_inv * (n / (n - k))
    return beta, np.sqrt(np.clip(np.diag(V), 0.0, None))


def estimate_covariate_adjusted(
    exp: Experiment,
    preds: np.ndarray,
    alpha: float = 0.05,
    use_covariates: bool = True,
) -> tuple[ImpactEstimate, CoefficientTable]:
    """Regress pseudo-outcomes on an intercept, the treatment indicator and baseline covariates.

    ``use_covariates=False`` runs the same regression on the indicator alone.
    """
    preds = _check_preds(exp, preds)
    _need_coded(exp)
    if use_covariates and exp.covariates is None:
        raise MissingCovariates("covariate-adjusted estimate needs baseline covariates")
    ystar = pseudo_outcomes(exp, preds)
    cols = [np.ones(exp.N), exp.arm.astype(float)]
    names = ["intercept", "treatment"]
    if use_covariates:
        cols.extend(exp.covariates.T)
        names.extend(exp.covariate_names)
    D = np.column_stack(cols)
    beta, se = ols_hc1(ystar, D)
    table = CoefficientTable(tuple(names), beta, se)
    diag = {"coefficients": table.as_dict(), "r2": empirical_r2(exp, preds)}
    est = _make("covariate_adjusted", beta[1], se[1] ** 2, alpha, exp, diag)
    return est, table
