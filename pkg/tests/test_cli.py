import json
import subprocess
import sys

import numpy as np
import pytest

from textimpact import cli
from textimpact.errors import InvariantError


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def hand_files(tmp_path):
    data = tmp_path / "hand.csv"
    data.write_text("id,arm,f,score\nt1,1,0,2\nt2,1,1,4\nt3,1,2,\nc1,0,0,\nc2,0,1,2\nc3,0,2,3\n")
    preds = tmp_path / "preds.csv"
    preds.write_text("id,predicted_score\nt1,1\nt2,3\nt3,5\nc1,2\nc2,2\nc3,2\n")
    return data, preds


def _study_file(path, scored=False):
    rng = np.random.default_rng(0)
    lines = ["id,arm,f1,f2" + (",score" if scored else "")]
    for i in range(1361):
        row = f"s{i:04d},{int(i < 722)},{rng.normal():.6f},{rng.normal():.6f}"
        lines.append(row + (f",{rng.normal():.6f}" if scored else ""))
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------- plan


def test_plan_target(tmp_path, capsys):
    code, out, _ = run(capsys, "plan", "--N", 1361, "--p", 0.5305, "--r2", 0.62, "--target-mdes", 0.20, "--out", tmp_path)
    assert code == 0
    result = json.loads((tmp_path / "plan.json").read_text())
    assert result["required_fraction"] == pytest.approx(0.33, abs=0.02)
    assert "h = 0.34" in out
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["params"]["target_mdes"] == 0.20 and manifest["seed"] == 0


def test_plan_full_coding_row(tmp_path, capsys):
    code, _, _ = run(capsys, "plan", "--N", 1361, "--p", 0.5305, "--r2", 0.62, "--h", 1.0, "--out", tmp_path)
    assert code == 0
    (row,) = json.loads((tmp_path / "plan.json").read_text())["curve"]
    assert row["h"] == 1.0 and row["inflation"] == 1.0


def test_plan_invalid_bound(tmp_path, capsys):
    code, _, err = run(capsys, "plan", "--N", 100, "--p", 1.5, "--out", tmp_path)
    assert code == 2
    assert "0 < p < 1" in err


# ---------------------------------------------------------------- sample


def test_sample_study_sizes(tmp_path, capsys):
    data = _study_file(tmp_path / "study.csv")
    code, _, _ = run(capsys, "sample", "--data", data, "--n1", 241, "--n0", 213, "--seed", 4, "--out", tmp_path / "a")
    assert code == 0
    lines = (tmp_path / "a" / "coding_sample.csv").read_text().splitlines()
    assert len(lines) - 1 == 454
    arms = [ln.split(",")[1] for ln in lines[1:]]
    assert arms.count("1") == 241
    run(capsys, "sample", "--data", data, "--n1", 241, "--n0", 213, "--seed", 4, "--out", tmp_path / "b")
    assert (tmp_path / "a" / "coding_sample.csv").read_bytes() == (tmp_path / "b" / "coding_sample.csv").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()


def test_sample_errors(tmp_path, capsys):
    data = _study_file(tmp_path / "study.csv")
    assert run(capsys, "sample", "--data", data, "--n1", 0, "--n0", 0, "--out", tmp_path)[0] == 2
    assert run(capsys, "sample", "--data", data, "--n1", 800, "--n0", 1, "--out", tmp_path)[0] == 2
    assert run(capsys, "sample", "--data", tmp_path / "missing.csv", "--n", 5, "--out", tmp_path)[0] == 2


# ---------------------------------------------------------------- estimate


def test_estimate_hand_instance(hand_files, tmp_path, capsys):
    data, preds = hand_files
    code, out, _ = run(capsys, "estimate", "--data", data, "--predictions", preds, "--out", tmp_path / "o")
    assert code == 0
    line = next(ln for ln in out.splitlines() if "model_assisted" in ln)
    assert float(line.split()[1]) == 1.5
    doc = json.loads((tmp_path / "o" / "estimates.json").read_text())
    ma = next(e for e in doc["results"][0]["estimates"] if e["method"] == "model_assisted")
    assert ma["tau_hat"] == 1.5


def test_estimate_zero_predictions_equal_subset(hand_files, tmp_path, capsys):
    data, preds = hand_files
    preds.write_text("id,predicted_score\n" + "".join(f"{i},0\n" for i in ("t1", "t2", "t3", "c1", "c2", "c3")))
    run(capsys, "estimate", "--data", data, "--predictions", preds, "--out", tmp_path / "o")
    rows = {e["method"]: e for e in json.loads((tmp_path / "o" / "estimates.json").read_text())["results"][0]["estimates"]}
    assert rows["model_assisted"]["tau_hat"] == rows["subset"]["tau_hat"]


def test_estimate_fully_coded(tmp_path, capsys):
    data = _study_file(tmp_path / "study.csv", scored=True)
    code, _, _ = run(capsys, "estimate", "--data", data, "--out", tmp_path / "o")
    assert code == 0
    rows = {e["method"]: e for e in json.loads((tmp_path / "o" / "estimates.json").read_text())["results"][0]["estimates"]}
    assert rows["oracle"]["tau_hat"] == pytest.approx(rows["model_assisted"]["tau_hat"], abs=1e-12)
    table = (tmp_path / "o" / "estimates.csv").read_text().splitlines()
    assert table[0].startswith("method,tau_hat,se")


def test_estimate_covariates_and_exploratory(tmp_path, capsys):
    rng = np.random.default_rng(1)
    lines = ["id,arm,f1,f2,cov_pre,score"]
    for i in range(80):
        score = f"{rng.normal():.5f}" if i % 2 == 0 else ""
        lines.append(f"d{i},{i % 4 < 2:d},{rng.normal():.5f},{rng.normal():.5f},{rng.normal():.5f},{score}")
    data = tmp_path / "e.csv"
    data.write_text("\n".join(lines) + "\n")
    code, out, _ = run(capsys, "estimate", "--data", data, "--compare-learners", "lasso", "--out", tmp_path / "o")
    assert code == 0
    assert "EXPLORATORY" in out
    doc = json.loads((tmp_path / "o" / "estimates.json").read_text())
    assert doc["label"] == "exploratory" and len(doc["results"]) == 2
    assert "cov_pre" in doc["results"][0]["coefficients"]
    assert any(e["method"] == "covariate_adjusted" for e in doc["results"][0]["estimates"])


def test_estimate_precondition_failure(hand_files, tmp_path, capsys):
    data, _ = hand_files
    # two coded documents per arm cannot fill five partitions
    code, _, err = run(capsys, "estimate", "--data", data, "--out", tmp_path)
    assert code == 2 and "coded" in err


# ---------------------------------------------------------------- simulate


def test_simulate_smoke_and_determinism(tmp_path, capsys):
    args = ["simulate", "--N", 200, "--n", 100, "--replications", 2, "--seed", 7]
    assert run(capsys, *args, "--out", tmp_path / "a")[0] == 0
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert {r["method"] for r in report["rows"]} >= {"oracle", "model_assisted"}
    assert all(r["replications"] == 2 for r in report["rows"])
    run(capsys, *args, "--out", tmp_path / "b", "--jobs", 2)
    for name in ("report.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_simulate_config_and_bad_config(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"dgp": {"N": 120}, "conditions": [{"n": 50, "replications": 2}]}))
    assert run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")[0] == 0
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["params"]["dgp"]["N"] == 120
    cfg.write_text("{not json")
    assert run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")[0] == 2
    cfg.write_text(json.dumps({"dgp": {"N": 120, "p": 2}, "conditions": [{"n": 50}]}))
    assert run(capsys, "simulate", "--config", cfg, "--out", tmp_path / "o")[0] == 2


# ---------------------------------------------------------------- extract


def test_extract_directory(tmp_path, capsys):
    docs = tmp_path / "docs"
    docs.mkdir()
    (docs / "a.txt").write_text("The cat sat.")
    (docs / "b.txt").write_text("Dogs bark. Loudly!")
    (docs / "c.txt").write_text("one two two")
    assert run(capsys, "extract", "--input", docs, "--out", tmp_path / "o")[0] == 0
    lines = (tmp_path / "o" / "features.csv").read_text().splitlines()
    assert len(lines) == 4
    assert lines[0].startswith("id,txt_word_count")
    assert lines[1] == "a,3,1,3.0,3.0,1.0"


def test_extract_merge_orphan(tmp_path, capsys):
    docs = tmp_path / "docs"
    docs.mkdir()
    (docs / "a.txt").write_text("x")
    exp = tmp_path / "e.csv"
    exp.write_text("id,arm\na,1\nghost,0\n")
    code, _, err = run(capsys, "extract", "--input", docs, "--merge", exp, "--out", tmp_path / "o")
    assert code == 2 and "ghost" in err


# ---------------------------------------------------------------- exit codes


def test_internal_error_exit_code(tmp_path, capsys, monkeypatch):
    def boom(*a, **k):
        raise InvariantError("broken invariant")

    monkeypatch.setattr(cli, "mdes_curve", boom)
    code, _, err = run(capsys, "plan", "--N", 100, "--out", tmp_path)
    assert code == 3 and "broken invariant" in err


def test_console_script_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "textimpact.cli", "plan", "--N", "100", "--p", "2", "--out", str(tmp_path)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 2
