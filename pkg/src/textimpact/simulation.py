"""Monte Carlo evaluation of the impact estimators on populations with known effects.

Each replication draws a fresh population (synthetic, or resampled from a
scored corpus), randomizes treatment, draws an arm-stratified coding sample,
cross-fits predictions and runs every estimator. Replication ``r`` always
uses the same population across conditions (common random numbers), and all
seeds are derived from ``DGPSpec.seed`` by counter so serial and parallel runs
give identical reports.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.stats import norm

from .data import Experiment, Schema, load_experiment, select_coding_sample
from .errors import InvalidDGP, TextImpactError
from .estimators import (
    _jsonable,
    estimate_covariate_adjusted,
    estimate_model_assisted,
    estimate_oracle,
    estimate_subset,
    estimate_synthetic,
)
from .learners import CrossFitPlan, PredictorSpec, cross_fit

N_LINEAR = 10
TARGET_EFFECT = 0.25  # in outcome standard deviations


@dataclass(frozen=True)
class DGPSpec:
    """Data-generating process.

    Synthetic mode: Y(0) = c * g(X) + eps (+ covariate_effect * pretest), with
    g a linear index on the first 10 features plus ``nonlinear``-weighted
    quadratic and interaction terms, and c chosen so that var(c g) / (var(c g)
    + var(eps)) = ``signal``. Y(0) is standardized (sd 1, pretest term
    included) unless ``noise_sd`` fixes the noise scale instead.
    """

    mode: str = "synthetic"
    N: int = 1000
    p: float = 0.5
    p_features: int = 20
    signal: float = 0.6
    tau: float = 0.0
    noise_sd: float | None = None
    effect_mode: str = "constant_shift"
    nonlinear: float = 0.15
    covariate_effect: float | None = None
    corpus_path: str | None = None
    corpus_schema: dict | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("synthetic", "resample_file"):
            raise InvalidDGP(f"unknown DGP mode {self.mode!r}")
        if self.effect_mode not in ("constant_shift", "feature_shift"):
            raise InvalidDGP(f"unknown effect_mode {self.effect_mode!r}")
        if self.N < 4:
            raise InvalidDGP(f"N must be at least 4 (got {self.N})")
        if not 0 < self.p < 1:
            raise InvalidDGP(f"p must satisfy 0 < p < 1 (got {self.p})")
        if self.mode == "synthetic":
            if self.p_features < 1:
                raise InvalidDGP("p_features must be >= 1")
            if not 0 <= self.signal < 1:
                raise InvalidDGP(f"signal must lie in [0, 1) (got {self.signal})")
            if self.noise_sd is not None and self.noise_sd <= 0:
                raise InvalidDGP("noise_sd must be > 0")
            if self.noise_sd is None and self.covariate_effect is not None and abs(self.covariate_effect) >= 1:
                raise InvalidDGP("standardized outcomes need |covariate_effect| < 1 (or set noise_sd)")
            if self.effect_mode == "feature_shift" and self.signal == 0 and self.tau != 0:
                raise InvalidDGP("feature_shift cannot carry an effect when signal = 0")
        elif not self.corpus_path:
            raise InvalidDGP("resample_file mode needs corpus_path")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class Population:
    """A fully scored experiment with both potential outcomes (when known)."""

    experiment: Experiment
    y0: np.ndarray | None
    y1: np.ndarray | None
    sigma: float

    @property
    def tau(self) -> float:
        if self.y0 is None or self.y1 is None:
            return math.nan
        return float(np.mean(self.y1 - self.y0))

    @classmethod
    def from_experiment(cls, exp: Experiment) -> "Population":
        if not np.isfinite(exp.human_score).all():
            raise TextImpactError("population needs a score for every document")
        full = exp.replace(coded=np.ones(exp.N, dtype=bool), inclusion_prob=np.ones(exp.N))
        return cls(full, None, None, float(np.std(exp.human_score, ddof=1)))


def _assign(rng: np.random.Generator, N: int, p: float) -> np.ndarray:
    N1 = int(round(p * N))
    if not 0 < N1 < N:
        raise InvalidDGP(f"p = {p} leaves an empty arm at N = {N}")
    z = np.zeros(N, dtype=np.int8)
    z[rng.permutation(N)[:N1]] = 1
    return z


def _signal_parts(dgp: DGPSpec) -> tuple[np.ndarray, float, float, float]:
    """Linear weights, nonlinear weight, scale c and noise sd."""
    k = min(N_LINEAR, dgp.p_features)
    w = np.full(k, 1 / math.sqrt(k))
    gamma = dgp.nonlinear if dgp.p_features >= 3 else 0.0
    var_g = 1.0 + 2 * gamma**2
    if dgp.noise_sd is None:
        # the pretest term takes its share of the unit total variance
        noise_var = (1 - dgp.signal) * (1 - (dgp.covariate_effect or 0.0) ** 2)
    else:
        noise_var = dgp.noise_sd**2
    signal_var = dgp.signal / (1 - dgp.signal) * noise_var
    return w, gamma, math.sqrt(signal_var / var_g), math.sqrt(noise_var)


def _g(X: np.ndarray, w: np.ndarray, gamma: float) -> np.ndarray:
    out = X[:, : w.shape[0]] @ w
    if gamma:
        out = out + gamma * ((X[:, 0] ** 2 - 1) / math.sqrt(2) + X[:, 1] * X[:, 2])
    return out


_corpus_cache: dict[tuple, Experiment] = {}


def _load_corpus(dgp: DGPSpec) -> Experiment:
    key = (dgp.corpus_path, json.dumps(dgp.corpus_schema, sort_keys=True))
    if key not in _corpus_cache:
        corpus = load_experiment(dgp.corpus_path, Schema.from_dict(dgp.corpus_schema) if dgp.corpus_schema else None)
        if not np.isfinite(corpus.human_score).all():
            raise InvalidDGP("resample corpus must carry a score for every document")
        _corpus_cache[key] = corpus
    return _corpus_cache[key]


def generate_population(dgp: DGPSpec, seed: int | np.random.Generator | None = None) -> Population:
    """Draw one population; ``seed`` overrides ``dgp.seed`` when given."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(dgp.seed if seed is None else seed)
    N = dgp.N

    if dgp.mode == "resample_file":
        corpus = _load_corpus(dgp)
        if corpus.N < N:
            raise InvalidDGP(f"corpus has {corpus.N} documents, fewer than N = {N}")
        rows = np.sort(rng.choice(corpus.N, size=N, replace=False))
        sigma = float(np.std(corpus.human_score, ddof=1))
        y0 = corpus.human_score[rows]
        y1 = y0 + dgp.tau * sigma
        z = _assign(rng, N, dgp.p)
        exp = Experiment.build(
            z,
            corpus.X[rows],
            np.where(z == 1, y1, y0),
            coded=np.ones(N, dtype=bool),
            ids=[corpus.ids[i] for i in rows],
            feature_names=corpus.feature_names,
            covariates=None if corpus.covariates is None else corpus.covariates[rows],
            covariate_names=corpus.covariate_names,
        )
        return Population(exp, y0, y1, sigma)

    w, gamma, c, noise_sd = _signal_parts(dgp)
    X0 = rng.standard_normal((N, dgp.p_features))
    eps = rng.standard_normal(N) * noise_sd
    y0 = c * _g(X0, w, gamma) + eps
    sigma2 = c * c * (1 + 2 * gamma**2) + noise_sd**2
    pre = None
    if dgp.covariate_effect is not None:
        pre = rng.standard_normal(N)
        y0 = y0 + dgp.covariate_effect * pre
        sigma2 += dgp.covariate_effect**2
    sigma = math.sqrt(sigma2)
    shift = dgp.tau * sigma

    if dgp.effect_mode == "constant_shift":
        X1 = X0
        y1 = y0 + shift
    else:
        u = np.zeros(dgp.p_features)
        u[: w.shape[0]] = w / float(w @ w)
        X1 = X0 + (shift / c) * u
        y1 = y0 + c * (_g(X1, w, gamma) - _g(X0, w, gamma))

    z = _assign(rng, N, dgp.p)
    X = np.where(z[:, None] == 1, X1, X0)
    exp = Experiment.build(
        z,
        X,
        np.where(z == 1, y1, y0),
        coded=np.ones(N, dtype=bool),
        ids=[f"d{i:05d}" for i in range(N)],
        covariates=None if pre is None else pre[:, None],
        covariate_names=("pretest",) if pre is not None else (),
    )
    return Population(exp, y0, y1, sigma)


@dataclass(frozen=True)
class SimCondition:
    n: int
    learner: PredictorSpec = field(default_factory=lambda: PredictorSpec("ridge", {"lambda": 0.1}))
    crossfit: CrossFitPlan = field(default_factory=CrossFitPlan)
    replications: int = 2000
    grid: tuple[PredictorSpec, ...] | None = None
    use_covariates: bool = False

    def __post_init__(self) -> None:
        if self.n < 1:
            raise TextImpactError(f"coding budget n must be >= 1 (got {self.n})")
        if self.replications < 2:
            raise TextImpactError(f"need at least 2 replications (got {self.replications})")

    def label(self) -> str:
        name = "tuned-" + self.grid[0].kind if self.grid else self.learner.label()
        return f"n={self.n} {name} {self.crossfit.mode}{'' if self.crossfit.per_arm_models else ' pooled'}"

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "learner": self.learner.to_dict(),
            "crossfit": self.crossfit.to_dict(),
            "replications": self.replications,
            "grid": None if not self.grid else [g.to_dict() for g in self.grid],
            "use_covariates": self.use_covariates,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SimCondition":
        cf = d.get("crossfit", {})
        return cls(
            n=int(d["n"]),
            learner=PredictorSpec.from_dict(d["learner"]) if "learner" in d else PredictorSpec("ridge"),
            crossfit=CrossFitPlan(**cf),
            replications=int(d.get("replications", 2000)),
            grid=tuple(PredictorSpec.from_dict(g) for g in d["grid"]) if d.get("grid") else None,
            use_covariates=bool(d.get("use_covariates", False)),
        )


def derive_seed(root: int, *key: int) -> int:
    """Counter-based child seed: independent of execution order."""
    state = np.random.SeedSequence(root, spawn_key=tuple(int(k) for k in key)).generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])


@dataclass(frozen=True)
class ReplicationResult:
    tau_true: float
    estimates: dict[str, tuple[float, float]]
    r2: tuple[float, float]  # (treated, control) empirical R^2 of the predictions


def split_budget(n: int, N1: int, N: int) -> tuple[int, int]:
    """Allocate n coded documents across arms in proportion to arm size."""
    n1 = int(round(n * N1 / N))
    n1 = min(max(n1, 0), N1)
    n0 = min(n - n1, N - N1)
    return n1, n0


def run_replication(pop: Population, condition: SimCondition, seed: int) -> ReplicationResult:
    """Sample, train, predict and estimate once."""
    exp_full = pop.experiment
    if condition.n > exp_full.N:
        raise TextImpactError(f"coding budget n = {condition.n} exceeds N = {exp_full.N}")
    rng = np.random.default_rng(seed)
    n1, n0 = split_budget(condition.n, exp_full.N1, exp_full.N)
    exp = select_coding_sample(exp_full, n1, n0, rng)
    plan = replace(condition.crossfit, seed=int(rng.integers(2**62)))
    learner = condition.learner
    if "seed" in learner.hyperparams:
        learner = learner.with_params(seed=int(rng.integers(2**31)))
    preds = cross_fit(exp, learner, plan, grid=condition.grid, use_covariates=condition.use_covariates).predictions

    ests = [estimate_oracle(exp_full), estimate_subset(exp), estimate_synthetic(exp, preds)]
    ma = estimate_model_assisted(exp, preds)
    ests.append(ma)
    if exp.covariates is not None:
        ests.append(estimate_covariate_adjusted(exp, preds)[0])
    r2 = ma.diagnostics["r2"]
    tau = pop.tau
    return ReplicationResult(
        tau_true=tau,
        estimates={e.method: (e.tau_hat, e.se) for e in ests},
        r2=(r2[1], r2[0]),
    )


def _run_tasks(dgp: DGPSpec, conditions: Sequence[SimCondition], tasks: Sequence[tuple[int, int]]) -> list[ReplicationResult]:
    out = []
    pop_cache: tuple[int, Population] | None = None
    for c, r in tasks:
        if pop_cache is None or pop_cache[0] != r:
            pop_cache = (r, generate_population(dgp, derive_seed(dgp.seed, 0, r)))
        out.append(run_replication(pop_cache[1], conditions[c], derive_seed(dgp.seed, 1, c, r)))
    return out


@dataclass
class SimulationReport:
    dgp: dict
    conditions: list[dict]
    rows: list[dict]
    sigma: float
    replications: dict[int, dict[str, np.ndarray]] = field(default_factory=dict, repr=False)

    def row(self, condition: int, method: str) -> dict:
        for r in self.rows:
            if r["condition"] == condition and r["method"] == method:
                return r
        raise KeyError((condition, method))

    def to_json(self) -> str:
        d = {"dgp": self.dgp, "conditions": self.conditions, "sigma": self.sigma, "rows": self.rows}
        return json.dumps(_jsonable(d), indent=2, sort_keys=True)

    def to_table(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r.get(k)) for k in REPORT_COLUMNS})
        return buf.getvalue()

    def replications_table(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["condition", "replication", "method", "tau_hat", "se", "tau_true"])
        for c in sorted(self.replications):
            arrays = self.replications[c]
            for m in METHOD_ORDER:
                if f"{m}_tau" not in arrays:
                    continue
                for r, (t, s) in enumerate(zip(arrays[f"{m}_tau"], arrays[f"{m}_se"])):
                    w.writerow([c, r, m, repr(float(t)), repr(float(s)), repr(float(arrays["tau_true"][r]))])
        return buf.getvalue()


METHOD_ORDER = ("oracle", "subset", "synthetic", "model_assisted", "covariate_adjusted")
REPORT_COLUMNS = (
    "condition", "label", "n", "h", "learner", "mode", "per_arm_models", "method", "replications",
    "mean_estimate", "bias", "bias_mcse", "emp_var", "emp_var_mcse", "mean_var_hat", "mean_se",
    "power", "power_mcse", "re", "re_mcse", "rb", "rb_mcse", "coverage", "coverage_mcse",
    "rejection_rate", "rejection_rate_mcse", "mean_r2",
)


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def power_from_variance(var: float, effect: float, alpha: float = 0.05) -> float:
    """Two-sided normal-approximation power for a true effect ``effect``."""
    if var <= 0:
        return 1.0 if effect else alpha
    z = norm.ppf(1 - alpha / 2)
    d = effect / math.sqrt(var)
    return float(norm.cdf(d - z) + norm.cdf(-d - z))


def _ratio_mcse(a: np.ndarray, b: np.ndarray) -> float:
    """Delta-method standard error of mean(a) / mean(b)."""
    R = a.shape[0]
    A, B = a.mean(), b.mean()
    if B == 0:
        return math.nan
    C = np.cov(a, b, ddof=1)
    v = (C[0, 0] / B**2 + A**2 * C[1, 1] / B**4 - 2 * A * C[0, 1] / B**3) / R
    return math.sqrt(max(v, 0.0))


def summarize(tau_hat: np.ndarray, se: np.ndarray, tau_true: np.ndarray, oracle_tau: np.ndarray, sigma: float, alpha: float = 0.05) -> dict[str, float]:
    """Monte Carlo metrics for one estimator, with their Monte Carlo standard errors."""
    R = tau_hat.shape[0]
    err = tau_hat - tau_true
    mean = float(tau_hat.mean())
    emp_var = float(np.mean((tau_hat - mean) ** 2))
    sd = math.sqrt(emp_var)
    var_hat = se**2
    effect = TARGET_EFFECT * sigma
    z = norm.ppf(1 - alpha / 2)

    power = power_from_variance(emp_var, effect, alpha)
    if sd > 0:
        d = effect / sd
        dpow = -(d / sd) * (norm.pdf(d - z) - norm.pdf(-d - z))
        power_mcse = abs(dpow) * sd / math.sqrt(2 * (R - 1))
    else:
        power_mcse = 0.0

    sq = err**2
    sq_oracle = (oracle_tau - tau_true) ** 2
    re = 100 * float(sq.mean() / sq_oracle.mean()) if sq_oracle.mean() > 0 else math.nan
    re_mcse = 0.0 if np.array_equal(sq, sq_oracle) else 100 * _ratio_mcse(sq, sq_oracle)

    if emp_var > 0:
        ratio = float(var_hat.mean()) / emp_var
        rb = 100 * (ratio - 1)
        cv2 = float(np.var(var_hat, ddof=1)) / (R * var_hat.mean() ** 2) if var_hat.mean() > 0 else 0.0
        rb_mcse = 100 * ratio * math.sqrt(cv2 + 2 / (R - 1))
    else:
        rb, rb_mcse = math.nan, math.nan

    covered = (tau_hat - z * se <= tau_true) & (tau_true <= tau_hat + z * se)
    coverage = float(covered.mean())
    reject = np.abs(tau_hat) > z * se
    rej = float(reject.mean())
    return {
        "replications": R,
        "mean_estimate": mean,
        "bias": float(err.mean()),
        "bias_mcse": float(err.std(ddof=1) / math.sqrt(R)),
        "emp_var": emp_var,
        "emp_var_mcse": emp_var * math.sqrt(2 / (R - 1)),
        "mean_var_hat": float(var_hat.mean()),
        "mean_se": float(se.mean()),
        "power": power,
        "power_mcse": power_mcse,
        "re": re,
        "re_mcse": re_mcse,
        "rb": rb,
        "rb_mcse": rb_mcse,
        "coverage": coverage,
        "coverage_mcse": math.sqrt(coverage * (1 - coverage) / R),
        "rejection_rate": rej,
        "rejection_rate_mcse": math.sqrt(rej * (1 - rej) / R),
    }


def run_simulation(dgp: DGPSpec, conditions: Sequence[SimCondition], parallelism: int = 1) -> SimulationReport:
    conditions = list(conditions)
    if not conditions:
        raise TextImpactError("no simulation conditions given")
    tasks = [(c, r) for r in range(max(cd.replications for cd in conditions)) for c, cd in enumerate(conditions) if r < cd.replications]
    if parallelism > 1:
        chunks = [tasks[i::parallelism] for i in range(parallelism)]
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            parts = list(pool.map(_run_tasks, [dgp] * len(chunks), [conditions] * len(chunks), chunks))
        results_by_task = {}
        for chunk, part in zip(chunks, parts):
            results_by_task.update(zip(chunk, part))
        results = [results_by_task[t] for t in tasks]
    else:
        results = _run_tasks(dgp, conditions, tasks)

    sigma = generate_population(dgp, derive_seed(dgp.seed, 0, 0)).sigma
    per_cond: dict[int, list[ReplicationResult]] = {c: [] for c in range(len(conditions))}
    for (c, _), res in zip(tasks, results):
        per_cond[c].append(res)

    rows: list[dict] = []
    raw: dict[int, dict[str, np.ndarray]] = {}
    for c, cond in enumerate(conditions):
        reps = per_cond[c]
        tau_true = np.array([r.tau_true for r in reps])
        arrays: dict[str, np.ndarray] = {"tau_true": tau_true, "r2": np.array([r.r2 for r in reps])}
        methods = [m for m in METHOD_ORDER if m in reps[0].estimates]
        for m in methods:
            arrays[f"{m}_tau"] = np.array([r.estimates[m][0] for r in reps])
            arrays[f"{m}_se"] = np.array([r.estimates[m][1] for r in reps])
        raw[c] = arrays
        mean_r2 = float(np.nanmean(arrays["r2"]))
        for m in methods:
            row = {
                "condition": c,
                "label": cond.label(),
                "n": cond.n,
                "h": cond.n / dgp.N,
                "learner": "tuned-" + cond.grid[0].kind if cond.grid else cond.learner.label(),
                "mode": cond.crossfit.mode,
                "per_arm_models": cond.crossfit.per_arm_models,
                "method": m,
            }
            row.update(summarize(arrays[f"{m}_tau"], arrays[f"{m}_se"], tau_true, arrays["oracle_tau"], sigma))
            row["mean_r2"] = mean_r2 if m in ("synthetic", "model_assisted", "covariate_adjusted") else None
            rows.append(row)
    return SimulationReport(dgp.to_dict(), [c.to_dict() for c in conditions], rows, sigma, raw)


@dataclass(frozen=True)
class SensitivityResult:
    estimates: dict[str, np.ndarray]
    ses: dict[str, np.ndarray]
    rejection_rate: dict[str, float]

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            m: {
                "mean": float(self.estimates[m].mean()),
                "sd": float(self.estimates[m].std(ddof=1)) if self.estimates[m].size > 1 else 0.0,
                "mean_se": float(self.ses[m].mean()),
                "rejection_rate": self.rejection_rate[m],
            }
            for m in self.estimates
        }


def sensitivity_resample(
    exp: Experiment,
    n: int,
    learner: PredictorSpec,
    B: int,
    plan: CrossFitPlan = CrossFitPlan(),
    seed: int = 0,
    alpha: float = 0.05,
) -> SensitivityResult:
    """Repeat coding-sample selection and estimation B times on one fully scored experiment.

    Draw b uses ``derive_seed(seed, b)`` as its replication seed.
    """
    if B < 1:
        raise TextImpactError("B must be >= 1")
    pop = Population.from_experiment(exp)
    cond = SimCondition(n=n, learner=learner, crossfit=plan, replications=2)
    reps = [run_replication(pop, cond, derive_seed(seed, b)) for b in range(B)]
    z = norm.ppf(1 - alpha / 2)
    est, ses, rej = {}, {}, {}
    for m in ("subset", "model_assisted"):
        t = np.array([r.estimates[m][0] for r in reps])
        s = np.array([r.estimates[m][1] for r in reps])
        est[m], ses[m] = t, s
        rej[m] = float(np.mean(np.abs(t) > z * s))
    return SensitivityResult(est, ses, rej)


def load_config(path: str | Path) -> tuple[DGPSpec, list[SimCondition]]:
    """Read a JSON simulation config: {"dgp": {...}, "conditions": [...]}."""
    with open(path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    return config_from_dict(cfg)


def config_from_dict(cfg: dict) -> tuple[DGPSpec, list[SimCondition]]:
    try:
        dgp = DGPSpec(**cfg.get("dgp", {}))
        conditions = [SimCondition.from_dict(c) for c in cfg["conditions"]]
    except (KeyError, TypeError) as exc:
        raise TextImpactError(f"invalid simulation config: {exc}") from exc
    return dgp, conditions
