import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textimpact.data import Experiment, Schema, load_experiment, select_coding_sample, write_experiment_csv
from textimpact.errors import (
    CodedWithoutScore,
    InvalidArm,
    MissingFeature,
    NonPositiveSample,
    SampleTooLarge,
    SchemaMismatch,
)

from conftest import make_experiment


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_four_row_file_counts(tmp_path):
    f = _write(tmp_path / "e.csv", "id,arm,a,b\n1,1,0.1,2\n2,1,0.3,1\n3,0,0.5,0\n4,0,0.7,-1\n")
    exp = load_experiment(f, Schema())
    assert (exp.N, exp.N1, exp.N0, exp.n1, exp.n0) == (4, 2, 2, 0, 0)
    assert exp.feature_names == ("a", "b")


def test_coded_without_score_names_row(tmp_path):
    f = _write(tmp_path / "e.csv", "id,arm,a,score,coded\nx,1,0.1,3,1\ny,0,0.2,,true\n")
    with pytest.raises(CodedWithoutScore, match="row 1"):
        load_experiment(f)


def test_study_sized_arms(tmp_path):
    rows = ["id,arm,f"] + [f"s{i},{int(i < 722)},{i % 7}" for i in range(1361)]
    exp = load_experiment(_write(tmp_path / "e.csv", "\n".join(rows) + "\n"))
    assert (exp.N1, exp.N0) == (722, 639)


def test_ingestion_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_experiment(tmp_path / "nope.csv")
    f = _write(tmp_path / "e.csv", "id,arm,a\n1,2,0.1\n")
    with pytest.raises(InvalidArm, match="row 0"):
        load_experiment(f)
    f = _write(tmp_path / "e.csv", "id,arm,a\n1,1,0.1\n2,0,\n")
    with pytest.raises(MissingFeature, match="row 1"):
        load_experiment(f)
    f = _write(tmp_path / "e.csv", "id,arm,a\n1,1,0.1\n")
    with pytest.raises(SchemaMismatch):
        load_experiment(f, Schema(features=("zz",)))
    with pytest.raises(SchemaMismatch):
        load_experiment(f, Schema(arm="treat"))


def test_schema_json_and_covariate_prefix(tmp_path):
    f = _write(tmp_path / "e.csv", "doc,z,a,cov_pre,score\n1,1,0.1,2,5\n2,0,0.2,3,\n")
    sf = tmp_path / "s.json"
    sf.write_text(json.dumps({"id": "doc", "arm": "z"}))
    exp = load_experiment(f, Schema.from_json(sf))
    assert exp.covariate_names == ("cov_pre",)
    assert exp.feature_names == ("a",)
    assert exp.coded.tolist() == [True, False]


def test_full_sample_inclusion_one():
    exp = make_experiment(N=20)
    s = select_coding_sample(exp, exp.N1, exp.N0, 1)
    assert s.coded.all()
    assert np.all(s.inclusion_prob == 1.0)


def test_inclusion_frequency_monte_carlo():
    arm = np.r_[np.ones(500), np.zeros(500)].astype(int)
    exp = Experiment.build(arm, np.zeros((1000, 1)), np.zeros(1000))
    rng = np.random.default_rng(123)
    hits = np.zeros(1000)
    for _ in range(10_000):
        hits += select_coding_sample(exp, 250, 100, rng).coded
    freq = hits[:500] / 10_000
    assert abs(freq.mean() - 0.5) < 0.015
    # every single document, not just the average, should be near n1/N1
    assert np.all(np.abs(freq - 0.5) < 0.06)


def test_same_seed_same_sample():
    exp = make_experiment(N=60)
    a = select_coding_sample(exp, 5, 7, 42)
    b = select_coding_sample(exp, 5, 7, 42)
    assert a.meta["selected"] == b.meta["selected"]
    assert np.array_equal(a.coded, b.coded)


def test_sample_errors():
    exp = make_experiment(N=10)
    with pytest.raises(SampleTooLarge):
        select_coding_sample(exp, exp.N1 + 1, 1, 0)
    with pytest.raises(NonPositiveSample):
        select_coding_sample(exp, 0, 0, 0)


def test_planning_mode_without_scores():
    exp = Experiment.build([1, 1, 0, 0], np.eye(4))
    s = select_coding_sample(exp, 1, 1, 0)
    assert len(s.meta["selected"]) == 2
    assert not s.coded.any()
    assert s.inclusion_prob.tolist() == [0.5] * 4


@settings(max_examples=40, deadline=None)
@given(
    N1=st.integers(1, 30),
    N0=st.integers(1, 30),
    f1=st.floats(0, 1),
    f0=st.floats(0, 1),
    seed=st.integers(0, 2**32 - 1),
)
def test_exact_counts_and_equal_probabilities(N1, N0, f1, f0, seed):
    n1, n0 = int(f1 * N1), int(f0 * N0)
    if n1 == n0 == 0:
        n1 = 1
    arm = np.r_[np.ones(N1), np.zeros(N0)].astype(int)
    exp = Experiment.build(arm, np.ones((N1 + N0, 1)), np.arange(N1 + N0, dtype=float))
    s = select_coding_sample(exp, n1, n0, seed)
    assert (s.n1, s.n0) == (n1, n0)
    if n1:
        assert np.all(s.inclusion_prob[arm == 1] == n1 / N1)
    if n0:
        assert np.all(s.inclusion_prob[arm == 0] == n0 / N0)


def test_round_trip_csv_and_json(tmp_path):
    exp = make_experiment(N=30, coded_frac=0.4, covariates=True)
    schema = write_experiment_csv(exp, tmp_path / "e.csv")
    back = load_experiment(tmp_path / "e.csv", schema)
    for name in ("ids", "feature_names", "covariate_names"):
        assert getattr(back, name) == getattr(exp, name)
    for name in ("arm", "X", "coded", "covariates"):
        assert np.array_equal(getattr(back, name), getattr(exp, name))
    for name in ("human_score", "inclusion_prob"):
        assert np.array_equal(getattr(back, name), getattr(exp, name), equal_nan=True)

    exp.save_json(tmp_path / "e.json")
    again = Experiment.load_json(tmp_path / "e.json")
    assert np.array_equal(again.human_score, exp.human_score, equal_nan=True)
    assert again.ids == exp.ids


def test_experiment_is_immutable():
    exp = make_experiment(N=10)
    with pytest.raises(ValueError):
        exp.X[0, 0] = 5.0
    assert len(exp.documents) == 10
    assert exp.documents[0].coded
