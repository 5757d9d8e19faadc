"""Command-line interface: plan | sample | estimate | simulate | extract.

Every command writes its outputs plus ``manifest.json`` (all resolved
parameters and the seed) into ``--out``. Exit codes: 0 success, 2 user or
configuration error, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .data import Schema, load_experiment, select_coding_sample
from .errors import InvariantError, TextImpactError
from .estimators import (
    _jsonable,
    estimate_covariate_adjusted,
    estimate_model_assisted,
    estimate_oracle,
    estimate_subset,
    estimate_synthetic,
    estimates_to_json,
    estimates_to_table,
)
from .features import extract_corpus, merge_into_csv, write_feature_table
from .learners import KINDS, CrossFitPlan, PredictorSpec, cross_fit
from .planner import DesignPlan, default_h_grid, mdes_curve, normal_multiplier, required_fraction
from .simulation import DGPSpec, SimCondition, config_from_dict, run_simulation, split_budget

DEFAULT_SIM_GRID = list(range(100, 1000, 50))


class UsageError(TextImpactError):
    pass


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _manifest(out: Path, command: str, params: dict, seed: int | None, outputs: list[str]) -> None:
    params = {k: v for k, v in params.items() if not callable(v) and k not in ("out",)}
    m = {"command": command, "version": __version__, "seed": seed, "params": params, "outputs": sorted(outputs)}
    _write(out / "manifest.json", json.dumps(_jsonable(m), indent=2, sort_keys=True) + "\n")


def _parse_value(v: str) -> Any:
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v.lower() in ("none", "null"):
        return None
    return v


def _learner(args: argparse.Namespace) -> PredictorSpec:
    if getattr(args, "learner_spec", None):
        return PredictorSpec.from_json(Path(args.learner_spec).read_text(encoding="utf-8"))
    hp: dict[str, Any] = {}
    for item in args.param or []:
        if "=" not in item:
            raise UsageError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        hp[k] = _parse_value(v)
    return PredictorSpec(args.learner, hp, standardize=not args.no_standardize)


def _schema(args: argparse.Namespace) -> Schema:
    return Schema.from_json(args.schema) if args.schema else Schema()


def _h_grid(text: str | None) -> list[float]:
    if not text:
        return default_h_grid()
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        k = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(k + 1)]
    return [float(x) for x in text.split(",")]


# ---------------------------------------------------------------------------
# commands


def cmd_plan(args: argparse.Namespace) -> int:
    multiplier = args.multiplier
    if multiplier is None:
        default = args.alpha == 0.05 and args.power == 0.80
        multiplier = 2.80 if default else normal_multiplier(args.alpha, args.power)
    plan = DesignPlan(
        N=args.N, p=args.p, h=args.h if args.h is not None else 1.0, r2=args.r2,
        sigma2=args.sigma2, alpha=args.alpha, power=args.power, mdes_multiplier=multiplier,
    )
    grid = [args.h] if args.h is not None else _h_grid(args.h_grid)
    rows = mdes_curve(plan, grid)
    result: dict[str, Any] = {"plan": plan.to_dict(), "curve": [r.__dict__ for r in rows]}
    if args.target_mdes is not None:
        req = required_fraction(plan, args.target_mdes)
        result["target_mdes"] = args.target_mdes
        result["required_fraction"] = req.h
        result["feasible"] = req.feasible
        result["full_coding_mdes"] = req.full_coding_mdes

    out = Path(args.out)
    outputs = ["plan.json"]
    _write(out / "plan.json", json.dumps(_jsonable(result), indent=2, sort_keys=True) + "\n")
    if args.format == "table":
        cols = ["h", "se", "mdes", "inflation", "variance_inflation", "relative_variance"]
        lines = [",".join(cols)] + [",".join(repr(getattr(r, c)) for c in cols) for r in rows]
        _write(out / "plan_curve.csv", "\n".join(lines) + "\n")
        outputs.append("plan_curve.csv")
    _manifest(out, "plan", {**vars(args), "mdes_multiplier": multiplier, "h_grid_resolved": grid}, args.seed, outputs)

    print(f"{'h':>6} {'se':>8} {'mdes':>8} {'inflation':>9}")
    for r in rows:
        print(f"{r.h:6.2f} {r.se:8.4f} {r.mdes:8.4f} {r.inflation:9.3f}")
    if args.target_mdes is not None:
        if result["feasible"]:
            print(f"required coded fraction for MDES <= {args.target_mdes:g}: h = {result['required_fraction']:.4f}")
        else:
            print(f"target MDES {args.target_mdes:g} is infeasible: full coding gives {result['full_coding_mdes']:.4f}")
    return 0


def cmd_sample(args: argparse.Namespace) -> int:
    exp = load_experiment(args.data, _schema(args))
    if args.n is not None:
        if args.n1 is not None or args.n0 is not None:
            raise UsageError("give either --n or --n1/--n0, not both")
        n1, n0 = split_budget(args.n, exp.N1, exp.N)
    else:
        if args.n1 is None or args.n0 is None:
            raise UsageError("--n1 and --n0 (or --n) are required")
        n1, n0 = args.n1, args.n0
    drawn = select_coding_sample(exp, n1, n0, args.seed)
    selected = set(drawn.meta["selected"])
    out = Path(args.out)
    lines = ["id,arm,inclusion_prob"]
    for i, doc_id in enumerate(drawn.ids):
        if doc_id in selected:
            lines.append(f"{doc_id},{int(drawn.arm[i])},{float(drawn.inclusion_prob[i])!r}")
    _write(out / "coding_sample.csv", "\n".join(lines) + "\n")
    _manifest(out, "sample", {**vars(args), "n1": n1, "n0": n0}, args.seed, ["coding_sample.csv"])
    print(f"selected {len(selected)} documents (n1={n1}, n0={n0}) -> {out / 'coding_sample.csv'}")
    return 0


def _estimate_rows(exp, spec: PredictorSpec, plan: CrossFitPlan, alpha: float, use_cov: bool):
    preds = cross_fit(exp, spec, plan, use_covariates=use_cov).predictions
    rows = []
    if exp.fully_coded:
        rows.append(estimate_oracle(exp, alpha))
    rows.append(estimate_subset(exp, alpha))
    rows.append(estimate_synthetic(exp, preds, alpha))
    rows.append(estimate_model_assisted(exp, preds, alpha))
    coefs = None
    if exp.covariates is not None:
        est, table = estimate_covariate_adjusted(exp, preds, alpha)
        rows.append(est)
        coefs = table.as_dict()
    return rows, preds, coefs


def cmd_estimate(args: argparse.Namespace) -> int:
    exp = load_experiment(args.data, _schema(args))
    plan = CrossFitPlan(K=args.K, mode=args.mode, per_arm_models=not args.pooled, seed=args.seed)
    if args.predictions:
        specs = [PredictorSpec("external", {"path": args.predictions})]
    else:
        specs = [_learner(args)]
    if args.compare_learners:
        specs += [PredictorSpec(k.strip()) for k in args.compare_learners.split(",") if k.strip()]
    exploratory = len(specs) > 1
    use_cov = args.covariates_in_model and exp.covariates is not None

    out = Path(args.out)
    outputs: list[str] = []
    results = []
    for spec in specs:
        rows, preds, coefs = _estimate_rows(exp, spec, plan, args.alpha, use_cov)
        tag = spec.kind if exploratory else ""
        results.append({"learner": spec.to_dict(), "estimates": rows, "coefficients": coefs})
        suffix = f"_{tag}" if tag else ""
        pred_lines = ["id,predicted_score"] + [f"{i},{p!r}" for i, p in zip(exp.ids, preds.tolist())]
        _write(out / f"predictions{suffix}.csv", "\n".join(pred_lines) + "\n")
        outputs.append(f"predictions{suffix}.csv")
        if args.format == "table":
            _write(out / f"estimates{suffix}.csv", estimates_to_table(rows))
            outputs.append(f"estimates{suffix}.csv")

    doc = {
        "label": "exploratory" if exploratory else "primary",
        "crossfit": plan.to_dict(),
        "results": [
            {"learner": r["learner"], "coefficients": r["coefficients"], **json.loads(estimates_to_json(r["estimates"]))}
            for r in results
        ],
    }
    _write(out / "estimates.json", json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    outputs.append("estimates.json")
    _manifest(out, "estimate", vars(args), args.seed, outputs)

    if exploratory:
        print("EXPLORATORY: several learners compared; pre-specify one learner for confirmatory results")
    for r in results:
        print(f"learner: {PredictorSpec.from_dict(r['learner']).label()}")
        print(f"  {'method':<20} {'tau_hat':>9} {'se':>8} {'ci_lo':>8} {'ci_hi':>8}")
        for e in r["estimates"]:
            print(f"  {e.method:<20} {e.tau_hat:9.4f} {e.se:8.4f} {e.ci_lo:8.4f} {e.ci_hi:8.4f}")
    return 0


def _sim_config(args: argparse.Namespace) -> tuple[DGPSpec, list[SimCondition]]:
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            cfg = json.load(fh)
        cfg.setdefault("dgp", {})
        if args.seed is not None:
            cfg["dgp"]["seed"] = args.seed
        return config_from_dict(cfg)
    dgp = DGPSpec(
        mode="resample_file" if args.corpus else "synthetic",
        N=args.N,
        p=args.p,
        p_features=args.p_features,
        signal=args.signal,
        tau=args.tau,
        effect_mode=args.effect_mode,
        nonlinear=args.nonlinear,
        corpus_path=args.corpus,
        corpus_schema=None if not args.corpus_schema else Schema.from_json(args.corpus_schema).to_dict(),
        seed=args.seed if args.seed is not None else 0,
    )
    spec = _learner(args)
    plan = CrossFitPlan(K=args.K, mode=args.mode, per_arm_models=not args.pooled)
    grid = args.n or DEFAULT_SIM_GRID
    return dgp, [SimCondition(n=n, learner=spec, crossfit=plan, replications=args.replications) for n in grid]


def cmd_simulate(args: argparse.Namespace) -> int:
    dgp, conditions = _sim_config(args)
    report = run_simulation(dgp, conditions, parallelism=args.jobs)
    out = Path(args.out)
    outputs = ["report.json"]
    _write(out / "report.json", report.to_json() + "\n")
    if args.format == "table":
        _write(out / "report.csv", report.to_table())
        outputs.append("report.csv")
    if args.write_replications:
        _write(out / "replications.csv", report.replications_table())
        outputs.append("replications.csv")
    params = {"dgp": dgp.to_dict(), "conditions": [c.to_dict() for c in conditions], "jobs": args.jobs}
    _manifest(out, "simulate", params, dgp.seed, outputs)
    print(f"{'n':>5} {'method':<16} {'bias':>8} {'power':>6} {'RE':>7} {'RB%':>7} {'cover':>6}")
    for r in report.rows:
        print(f"{r['n']:5d} {r['method']:<16} {r['bias']:8.4f} {r['power']:6.3f} {r['re']:7.1f} {r['rb']:7.1f} {r['coverage']:6.3f}")
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    rows = extract_corpus(args.input, id_rule=args.id_rule, id_column=args.id_column, text_column=args.text_column, pattern=args.pattern)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.merge:
        merge_into_csv(rows, args.merge, out / "experiment_features.csv", id_column=args.id_column)
        name = "experiment_features.csv"
    else:
        write_feature_table(rows, out / "features.csv")
        name = "features.csv"
    _manifest(out, "extract", vars(args), None, [name])
    print(f"extracted features for {len(rows)} documents -> {out / name}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _common(p: argparse.ArgumentParser, seed_default: int | None = 0) -> None:
    p.add_argument("--seed", type=int, default=seed_default, help="root seed for all randomness")
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--format", choices=("json", "table"), default="table", help="add delimited tables to the JSON output")


def _learner_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--learner", choices=[k for k in KINDS if k != "external"], default="ridge")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="learner hyperparameter (repeatable)")
    p.add_argument("--learner-spec", help="JSON file holding a learner spec")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--K", type=int, default=5, help="cross-fitting partitions")
    p.add_argument("--mode", choices=("pure_crossfit", "cv_departure"), default="pure_crossfit")
    p.add_argument("--pooled", action="store_true", help="one model for both arms instead of one per arm")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="textimpact", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("plan", help="MDES and coding-fraction planning")
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--p", type=float, default=0.5, help="treated fraction")
    p.add_argument("--r2", type=float, default=0.0, help="assumed predictive R^2")
    p.add_argument("--sigma2", type=float, default=1.0)
    p.add_argument("--h", type=float, help="single coded fraction (otherwise a grid)")
    p.add_argument("--h-grid", help="lo:hi:step or comma list (default 0.05:1:0.05)")
    p.add_argument("--target-mdes", type=float)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--power", type=float, default=0.80)
    p.add_argument("--multiplier", type=float, help="MDES multiplier (default 2.80, or derived from alpha/power)")
    _common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("sample", help="draw the documents to hand-code")
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.add_argument("--n1", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--n", type=int, help="total budget split across arms by arm size")
    _common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("estimate", help="impact estimates from a partially coded experiment")
    p.add_argument("--data", required=True)
    p.add_argument("--schema")
    p.add_argument("--predictions", help="external (id, predicted_score) file instead of a learner")
    p.add_argument("--compare-learners", help="comma list of extra learner kinds; output is labelled exploratory")
    p.add_argument("--covariates-in-model", action="store_true", help="also feed baseline covariates to the learner")
    p.add_argument("--alpha", type=float, default=0.05)
    _learner_args(p)
    _common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("simulate", help="Monte Carlo evaluation of the estimators")
    p.add_argument("--config", help="JSON config {dgp: {...}, conditions: [...]}")
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--p-features", type=int, default=20)
    p.add_argument("--signal", type=float, default=0.6)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--effect-mode", choices=("constant_shift", "feature_shift"), default="constant_shift")
    p.add_argument("--nonlinear", type=float, default=0.15)
    p.add_argument("--corpus", help="scored corpus to resample instead of the synthetic generator")
    p.add_argument("--corpus-schema")
    p.add_argument("--n", type=int, action="append", help="coding budget (repeatable; default 100..950 by 50)")
    p.add_argument("--replications", type=int, default=2000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--write-replications", action="store_true")
    _learner_args(p)
    _common(p, seed_default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("extract", help="text statistics as txt_* feature columns")
    p.add_argument("--input", required=True, help="directory of text files or a delimited file")
    p.add_argument("--id-rule", choices=("stem", "name"), default="stem")
    p.add_argument("--id-column", default="id")
    p.add_argument("--text-column", default="text")
    p.add_argument("--pattern", default="*.txt")
    p.add_argument("--merge", help="experiment file to append the features to")
    _common(p, seed_default=None)
    p.set_defaults(func=cmd_extract)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TextImpactError, FileNotFoundError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # noqa: BLE001 - any other failure is a bug
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
