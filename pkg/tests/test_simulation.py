import json
import math

import numpy as np
import pytest

from textimpact.data import write_experiment_csv
from textimpact.errors import InvalidDGP, TextImpactError
from textimpact.estimators import empirical_r2
from textimpact.learners import CrossFitPlan, PredictorSpec, cross_fit
from textimpact.simulation import (
    DGPSpec,
    Population,
    SimCondition,
    _g,
    _signal_parts,
    derive_seed,
    generate_population,
    load_config,
    power_from_variance,
    run_replication,
    run_simulation,
    sensitivity_resample,
    split_budget,
    summarize,
)

from conftest import make_experiment


def _mean_oof_r2(dgp, spec, reps=50, grid=None):
    out = []
    for s in range(reps):
        exp = generate_population(dgp, s).experiment
        preds = cross_fit(exp, spec, CrossFitPlan(seed=s), grid=grid).predictions
        out.append(np.mean(list(empirical_r2(exp, preds).values())))
    return float(np.mean(out))


# ---------------------------------------------------------------- generator


def test_null_effect_means_identical_potential_outcomes():
    pop = generate_population(DGPSpec(tau=0.0), 1)
    assert np.array_equal(pop.y1, pop.y0)
    assert pop.tau == 0.0


def test_population_shape_and_balance():
    pop = generate_population(DGPSpec(N=301, p=0.4, tau=0.25), 2)
    exp = pop.experiment
    assert exp.N == 301 and exp.N1 == round(0.4 * 301)
    assert exp.fully_coded
    np.testing.assert_allclose(exp.human_score, np.where(exp.arm == 1, pop.y1, pop.y0))
    assert pop.tau == pytest.approx(0.25 * pop.sigma)
    assert pop.sigma == pytest.approx(1.0)


def test_signal_zero_leaves_nothing_to_learn():
    grid = [PredictorSpec("ridge", {"lambda": lam}) for lam in (0.1, 10.0, 1000.0)]
    r2 = _mean_oof_r2(DGPSpec(signal=0.0), PredictorSpec("ridge"), grid=grid)
    assert abs(r2) < 0.05


def test_signal_calibration_for_ridge():
    assert _mean_oof_r2(DGPSpec(signal=0.6), PredictorSpec("ridge")) == pytest.approx(0.6, abs=0.08)


def test_well_specified_r2_hits_signal():
    # population R^2 of the true regression function, averaged over draws
    vals = []
    for s in range(20):
        dgp = DGPSpec(signal=0.6, N=5000)
        pop = generate_population(dgp, s)
        w, gamma, c, _ = _signal_parts(dgp)
        X = pop.experiment.X
        f = c * _g(X, w, gamma)
        vals.append(1 - np.var(pop.y0 - f) / np.var(pop.y0))
    assert np.mean(vals) == pytest.approx(0.6, abs=0.01)


def test_feature_shift_effect():
    pop = generate_population(DGPSpec(tau=0.25, effect_mode="feature_shift", nonlinear=0.0), 3)
    np.testing.assert_allclose(pop.y1 - pop.y0, 0.25 * pop.sigma, atol=1e-12)


def test_covariate_effect_keeps_unit_variance():
    ys = np.concatenate([generate_population(DGPSpec(covariate_effect=0.5, N=2000), s).y0 for s in range(5)])
    assert np.var(ys) == pytest.approx(1.0, abs=0.05)


def test_resample_file_mode(tmp_path):
    corpus = make_experiment(N=120)
    schema = write_experiment_csv(corpus, tmp_path / "c.csv")
    dgp = DGPSpec(mode="resample_file", N=80, tau=0.25, corpus_path=str(tmp_path / "c.csv"), corpus_schema=schema.to_dict())
    pop = generate_population(dgp, 4)
    assert pop.experiment.N == 80 and len(set(pop.experiment.ids)) == 80
    assert pop.tau == pytest.approx(0.25 * np.std(corpus.human_score, ddof=1))
    with pytest.raises(InvalidDGP):
        generate_population(DGPSpec(mode="resample_file", N=500, corpus_path=str(tmp_path / "c.csv"), corpus_schema=schema.to_dict()))


@pytest.mark.parametrize(
    "kw",
    [{"mode": "other"}, {"p": 1.0}, {"signal": 1.0}, {"N": 2}, {"mode": "resample_file"}, {"covariate_effect": 1.2}],
)
def test_invalid_dgp(kw):
    with pytest.raises(InvalidDGP):
        DGPSpec(**kw)


# ---------------------------------------------------------------- replication


def test_full_budget_gives_oracle():
    pop = generate_population(DGPSpec(N=200), 5)
    res = run_replication(pop, SimCondition(n=200), 9)
    assert res.estimates["model_assisted"][0] == pytest.approx(res.estimates["oracle"][0], abs=1e-12)


def test_replication_deterministic():
    pop = generate_population(DGPSpec(N=200), 6)
    for learner in (PredictorSpec("ridge"), PredictorSpec("bagged_forest", {"n_trees": 10})):
        cond = SimCondition(n=60, learner=learner)
        assert run_replication(pop, cond, 17) == run_replication(pop, cond, 17)


def test_null_envelope():
    for s in range(20):
        pop = generate_population(DGPSpec(), s)
        res = run_replication(pop, SimCondition(n=100), s)
        n1, n0 = split_budget(100, pop.experiment.N1, pop.experiment.N)
        assert abs(res.estimates["model_assisted"][0]) < 4 * math.sqrt(1 / n1 + 1 / n0)


def test_split_budget():
    assert split_budget(454, 722, 1361) == (241, 213)
    assert split_budget(100, 500, 1000) == (50, 50)


def test_derive_seed_is_counter_based():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    assert len({derive_seed(1, 0, r) for r in range(100)}) == 100
    assert derive_seed(1, 0, 1) != derive_seed(2, 0, 1)


# ---------------------------------------------------------------- aggregation


def test_power_formula():
    assert power_from_variance(1.0, 0.0) == pytest.approx(0.05)
    se = 0.25 / 2.80
    assert power_from_variance(se**2, 0.25) == pytest.approx(0.80, abs=0.002)


def test_summarize_oracle_is_reference_and_order_free():
    rng = np.random.default_rng(0)
    t = rng.normal(0, 0.1, 500)
    se = np.full(500, 0.1)
    truth = np.zeros(500)
    m = summarize(t, se, truth, t, 1.0)
    assert m["re"] == 100.0 and m["re_mcse"] == 0.0
    perm = rng.permutation(500)
    m2 = summarize(t[perm], se[perm], truth, t[perm], 1.0)
    for k in m:
        assert m2[k] == pytest.approx(m[k], rel=1e-12, abs=1e-15)


def test_smoke_report():
    rep = run_simulation(DGPSpec(N=200), [SimCondition(n=100, replications=2)])
    methods = [r["method"] for r in rep.rows]
    assert methods == ["oracle", "subset", "synthetic", "model_assisted"]
    for r in rep.rows:
        assert r["replications"] == 2 and math.isfinite(r["bias_mcse"])
    assert next(r for r in rep.rows if r["method"] == "oracle")["re"] == 100.0
    json.loads(rep.to_json())
    lines = rep.to_table().splitlines()
    assert len(lines) == 5


def test_serial_parallel_identical():
    dgp = DGPSpec(N=150, seed=3)
    conds = [SimCondition(n=40, replications=6), SimCondition(n=80, replications=4, crossfit=CrossFitPlan(mode="cv_departure"))]
    a = run_simulation(dgp, conds, parallelism=1)
    b = run_simulation(dgp, conds, parallelism=3)
    assert a.to_json() == b.to_json()
    assert a.to_table() == b.to_table()


def test_subset_variance_matches_analytic():
    R = 1500
    rep = run_simulation(DGPSpec(N=1000, seed=11), [SimCondition(n=100, replications=R)])
    row = next(r for r in rep.rows if r["method"] == "subset")
    analytic = 1 / 50 + 1 / 50
    assert abs(row["emp_var"] - analytic) < 3 * analytic * math.sqrt(2 / (R - 1))


def test_power_non_decreasing_in_n():
    conds = [SimCondition(n=n, replications=300) for n in (100, 250, 500, 900)]
    rep = run_simulation(DGPSpec(N=1000, seed=5), conds)
    rows = [r for r in rep.rows if r["method"] == "model_assisted"]
    for a, b in zip(rows, rows[1:]):
        assert b["power"] >= a["power"] - a["power_mcse"] - b["power_mcse"]


def test_config_file(tmp_path):
    cfg = {"dgp": {"N": 100, "tau": 0.2}, "conditions": [{"n": 40, "replications": 3, "learner": {"kind": "lasso"}}]}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    dgp, conds = load_config(tmp_path / "c.json")
    assert dgp.tau == 0.2 and conds[0].learner.kind == "lasso"
    (tmp_path / "c.json").write_text(json.dumps({"dgp": {"bogus": 1}, "conditions": []}))
    with pytest.raises(TextImpactError):
        load_config(tmp_path / "c.json")


# ---------------------------------------------------------------- sensitivity


def test_sensitivity_single_draw_matches_replication():
    exp = generate_population(DGPSpec(N=300), 7).experiment
    res = sensitivity_resample(exp, 90, PredictorSpec("ridge"), B=1, seed=4)
    rep = run_replication(Population.from_experiment(exp), SimCondition(n=90), derive_seed(4, 0))
    assert res.estimates["model_assisted"][0] == rep.estimates["model_assisted"][0]
    assert res.estimates["subset"][0] == rep.estimates["subset"][0]


def test_sensitivity_full_budget_has_no_spread():
    exp = generate_population(DGPSpec(N=120), 8).experiment
    res = sensitivity_resample(exp, 120, PredictorSpec("ridge"), B=5, seed=1)
    assert np.ptp(res.estimates["model_assisted"]) < 1e-12
    assert np.ptp(res.estimates["subset"]) == 0.0


def test_sensitivity_model_assisted_rejects_more_often():
    exp = generate_population(DGPSpec(N=1000, tau=0.25, signal=0.6), 9).experiment
    res = sensitivity_resample(exp, 330, PredictorSpec("ridge"), B=300, seed=2)
    assert res.rejection_rate["model_assisted"] > res.rejection_rate["subset"]
    assert set(res.summary()) == {"subset", "model_assisted"}
