import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from care import cli
from care.dataio import from_array, load_csv, write_csv


def run(argv):
    code = cli.main([str(a) for a in argv])
    return code


def read_scores(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["score"]) for r in rows])


def test_synth_is_byte_identical(tmp_path):
    for name in ("x", "y"):
        assert run(["synth", "--regime", "graph", "--seed", 0, "--param", "n=500",
                    "--out", tmp_path / name]) == 0
    for f in ("scores.csv", "ground_truth.json"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()
    truth = json.loads((tmp_path / "x" / "ground_truth.json").read_text())
    assert len(truth["partition"]) == 3 and len(truth["means"]) == 4


def test_synth_gaussian(tmp_path):
    assert run(["synth", "--regime", "gaussian", "--param", "n=50", "--param", "h=1",
                "--param", "d=[1.5]", "--out", tmp_path]) == 0
    m = load_csv(tmp_path / "scores.csv")
    assert (m.n, m.p) == (50, 10)


def test_avg_scores_are_row_means(tmp_path):
    x = np.random.default_rng(0).integers(1, 10, (30, 4)).astype(float)
    write_csv(from_array(x, ["a", "b", "c", "d"]), tmp_path / "in.csv")
    assert run(["aggregate", tmp_path / "in.csv", "--method", "avg", "--out", tmp_path / "o"]) == 0
    np.testing.assert_allclose(read_scores(tmp_path / "o" / "scores.csv"), x.mean(axis=1))
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    for key in ("method", "params", "metrics", "per_item_scores", "seed", "config", "schema_version"):
        assert key in rep
    assert rep["metrics"] == {}


def test_svd_on_regime_a_reports_mae_and_gamma(tmp_path):
    assert run(["synth", "--regime", "a", "--param", "n=3000", "--out", tmp_path / "d"]) == 0
    assert run(["aggregate", tmp_path / "d" / "scores.csv", "--truth-col", "truth",
                "--method", "care-svd", "--out", tmp_path / "o"]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert "mae" in rep["metrics"] and rep["metrics"]["accuracy"] > 0.9
    assert rep["grid_search"]["selected"]["gamma_n"] in cli.harness.splr.SVD_GAMMA_GRID
    assert rep["config"]["params"]["gamma_n"] == rep["grid_search"]["selected"]["gamma_n"]


def test_tensor_on_planted_graph(tmp_path):
    assert run(["synth", "--regime", "graph", "--param", "n=4000", "--out", tmp_path / "d"]) == 0
    assert run(["aggregate", tmp_path / "d" / "scores.csv", "--truth-col", "truth",
                "--method", "care-tensor", "--no-grid", "--min-view-size", 4,
                "--out", tmp_path / "o"]) == 0
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    for key in ("partition", "cross_mass", "cp_fit"):
        assert key in rep["params"]
    assert "accuracy" in rep["metrics"]
    assert sorted(len(g) for g in rep["params"]["partition"]) == [4, 4, 4]


def test_seed_from_environment(tmp_path, monkeypatch):
    x = np.random.default_rng(0).normal(size=(20, 3))
    write_csv(from_array(x), tmp_path / "in.csv")
    monkeypatch.setenv("CARE_SEED", "17")
    assert run(["aggregate", tmp_path / "in.csv", "--method", "avg", "--out", tmp_path / "o"]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["seed"] == 17
    assert run(["aggregate", tmp_path / "in.csv", "--method", "avg", "--seed", 3,
                "--out", tmp_path / "o2"]) == 0
    assert json.loads((tmp_path / "o2" / "report.json").read_text())["seed"] == 3
    monkeypatch.setenv("CARE_SEED", "abc")
    assert run(["aggregate", tmp_path / "in.csv", "--method", "avg", "--out", tmp_path / "o3"]) == 2


def test_input_errors_exit_2(tmp_path):
    assert run(["aggregate", tmp_path / "missing.csv", "--out", tmp_path / "o"]) == 2
    assert run(["synth", "--regime", "a", "--param", "bogus=1", "--out", tmp_path / "o"]) == 2
    assert run(["synth", "--regime", "a", "--param", "g=2", "--out", tmp_path / "o"]) == 2
    with pytest.raises(SystemExit) as exc:
        run(["aggregate", "x.csv", "--unknown-flag", "--out", tmp_path])
    assert exc.value.code == 2
    assert run(["bench", "--experiment", "d9", "--param", "nope=1", "--out", tmp_path]) == 2


def test_numerical_failure_exit_3(tmp_path):
    # independent judges and heavy penalties leave no low-rank structure
    x = np.random.default_rng(0).normal(size=(500, 4))
    write_csv(from_array(x), tmp_path / "in.csv")
    assert run(["aggregate", tmp_path / "in.csv", "--method", "care-svd", "--gamma-n", 10,
                "--tau", 10, "--out", tmp_path / "o"]) == 3


def test_bench_d9_reports_ratio(tmp_path, capsys):
    assert run(["bench", "--experiment", "d9", "--seeds", 1, "--param", "n=3000",
                "--out", tmp_path]) == 0
    assert "error ratio" in capsys.readouterr().out
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["extra"]["ratio"] > 1 and rep["config"]["seeds"] == [0]


def test_check_theory_names_five_checks(tmp_path, capsys):
    assert run(["check-theory", "--seeds", 1, "--out", tmp_path]) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert set(rep["extra"]["checks"]) == set(cli.harness.CHECK_NAMES)
    out = capsys.readouterr().out
    assert all(name in out for name in cli.harness.CHECK_NAMES)


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "care.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "aggregate" in res.stdout
