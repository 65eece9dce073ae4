import csv
import json
import os
import shutil
import subprocess
import sys

import numpy as np
import pytest

from stagekde import BandwidthLadder, Dictionary, FitConfig, fit, load_target
from stagekde import cli


def write_csv(path, X, header=None):
    with open(path, "w") as fh:
        if header:
            fh.write(",".join(header) + "\n")
        for row in X:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
    return str(path)


@pytest.fixture
def data_csv(tmp_path):
    X = load_target("type_c").sample(200, np.random.default_rng(4))
    return write_csv(tmp_path / "data.csv", X)


def read(path):
    with open(path, "rb") as fh:
        return fh.read()


def run(*argv):
    return cli.main([str(a) for a in argv])


class TestFit:
    def test_outputs(self, data_csv, tmp_path):
        out = tmp_path / "o"
        assert run("fit", data_csv, "--case", "e", "--stages", 100, "--out", out) == 0
        doc = json.loads(read(out / "estimate.json"))
        assert doc["condensation"]["unique_words"] <= 100
        assert len(doc["chosen"]) == 100
        assert doc["gamma"] == pytest.approx(1.0, abs=1e-6)
        rows = list(csv.DictReader(open(out / "loss_trace.csv")))
        assert len(rows) == 100
        man = json.loads(read(out / "manifest.json"))
        assert man["command"] == "fit" and man["config"]["M"] == 100
        assert set(man["outputs"]) == {"estimate.json", "loss_trace.csv"}

    def test_same_seed_same_bytes(self, data_csv, tmp_path):
        for d in ("a", "b"):
            assert run("fit", data_csv, "--case", "a", "--seed", 7, "--stages", 20, "--out", tmp_path / d) == 0
        assert read(tmp_path / "a" / "loss_trace.csv") == read(tmp_path / "b" / "loss_trace.csv")
        assert read(tmp_path / "a" / "manifest.json") == read(tmp_path / "b" / "manifest.json")

    def test_bad_cell_names_row(self, tmp_path, capsys):
        p = tmp_path / "bad.csv"
        p.write_text("1,2,3\n4,oops,6\n7,8,9\n")
        assert run("fit", p, "--out", tmp_path / "o") == 2
        assert "line 2" in capsys.readouterr().err

    def test_header_flag(self, tmp_path):
        X = np.random.default_rng(0).normal(size=(40, 2))
        p = write_csv(tmp_path / "h.csv", X, header=["x", "y"])
        assert run("fit", p, "--out", tmp_path / "o", "--stages", 5) == 2
        assert run("fit", p, "--header", "--out", tmp_path / "o", "--stages", 5) == 0

    def test_indivisible_n(self, tmp_path, capsys):
        p = write_csv(tmp_path / "x.csv", np.random.default_rng(0).normal(size=(30, 2)))
        assert run("fit", p, "--case", "a", "--out", tmp_path / "o") == 2
        assert "divisible" in capsys.readouterr().err

    def test_env_override(self, data_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("STAGEKDE_STAGES", "7")
        monkeypatch.setenv("STAGEKDE_BETA", "kl")
        assert run("fit", data_csv, "--out", tmp_path / "o") == 0
        man = json.loads(read(tmp_path / "o" / "manifest.json"))
        assert man["config"]["M"] == 7 and man["config"]["beta"] == "kl"
        # a flag beats the environment
        assert run("fit", data_csv, "--stages", 3, "--out", tmp_path / "p") == 0
        assert json.loads(read(tmp_path / "p" / "manifest.json"))["config"]["M"] == 3

    def test_bad_env_value(self, data_csv, tmp_path, monkeypatch):
        monkeypatch.setenv("STAGEKDE_THETA", "two")
        assert run("fit", data_csv, "--out", tmp_path / "o") == 2

    def test_bad_beta(self, data_csv, tmp_path):
        assert run("fit", data_csv, "--beta", "3", "--out", tmp_path / "o") == 2

    def test_missing_out(self, data_csv, monkeypatch):
        monkeypatch.delenv("STAGEKDE_OUT", raising=False)
        assert run("fit", data_csv) == 2


def scenario_file(tmp_path, **kw):
    doc = {"name": "s", "case": "E", "N": 400, "target": "type_c", "beta": 1.0, "replicates": 2, "M": 100}
    doc.update(kw)
    p = tmp_path / "scenario.json"
    p.write_text(json.dumps(doc))
    return p


class TestSimulate:
    def test_rows(self, tmp_path):
        p = scenario_file(tmp_path, M=100, N=80)
        assert run("simulate", p, "--out", tmp_path / "o") == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "results.csv")))
        assert [r["stage"] for r in rows] == ["1", "25", "50", "75", "100"]
        reps = list(csv.DictReader(open(tmp_path / "o" / "replicates.csv")))
        assert len(reps) == 2 * 5

    def test_schema_error(self, tmp_path, capsys):
        p = scenario_file(tmp_path, case="f")
        assert run("simulate", p, "--out", tmp_path / "o") == 2
        assert "case" in capsys.readouterr().err

    def test_stage_override_trims_recorded(self, tmp_path):
        p = scenario_file(tmp_path, N=40)
        assert run("simulate", p, "--stages", 30, "--replicates", 1, "--out", tmp_path / "o") == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "results.csv")))
        assert [r["stage"] for r in rows] == ["1", "25"]

    def test_replay(self, tmp_path):
        p = scenario_file(tmp_path, N=40, M=10, stages=[1, 10])
        assert run("simulate", p, "--out", tmp_path / "o") == 0
        assert run("replay", tmp_path / "o" / "manifest.json", "--out", tmp_path / "r") == 0
        for name in ("results.csv", "replicates.csv", "manifest.json"):
            assert read(tmp_path / "o" / name) == read(tmp_path / "r" / name)


class TestBounds:
    def test_single_word_table_is_zero(self, tmp_path):
        D = Dictionary([[0.0, 0.0]], BandwidthLadder.explicit([1.0]))
        est = fit(D, np.random.default_rng(0).normal(size=(10, 2)), FitConfig(M=3))
        p = tmp_path / "est.json"
        p.write_text(json.dumps(est.to_json()))
        assert run("bounds", "--estimate", p, "--out", tmp_path / "o") == 0
        rows = list(csv.DictReader(open(tmp_path / "o" / "triples.csv")))
        assert len(rows) == 1
        assert float(rows[0]["J"]) == 0.0 and abs(float(rows[0]["J_quadrature"])) < 1e-9

    def test_scenario_report_and_oracle_column(self, tmp_path):
        p = scenario_file(tmp_path, N=80, M=20, beta="kl", stages=[20])
        assert run("bounds", "--scenario", p, "--max-words", 5, "--out", tmp_path / "o") == 0
        rep = json.loads(read(tmp_path / "o" / "bounds_report.json"))
        assert rep["error_bound"]["pass"] is True
        assert {"lhs", "rhs_terms", "pass"} <= set(rep["error_bound"])
        rows = list(csv.DictReader(open(tmp_path / "o" / "triples.csv")))
        assert len(rows) == 125
        gap = max(abs(float(r["J"]) - float(r["J_quadrature"])) / max(1.0, float(r["J"])) for r in rows)
        assert gap <= 1e-6

    def test_needs_input(self, tmp_path):
        assert run("bounds", "--out", tmp_path / "o") == 2


class TestIse:
    def test_ise_json(self, data_csv, tmp_path):
        assert run("fit", data_csv, "--stages", 10, "--out", tmp_path / "f") == 0
        assert run("ise", "--estimate", tmp_path / "f" / "estimate.json", "--target", "type_c",
                   "--out", tmp_path / "o") == 0
        doc = json.loads(read(tmp_path / "o" / "ise.json"))
        assert doc["method"] == "closed_form" and doc["ise"] > 0

    def test_unknown_target(self, data_csv, tmp_path):
        assert run("fit", data_csv, "--stages", 3, "--out", tmp_path / "f") == 0
        assert run("ise", "--estimate", tmp_path / "f" / "estimate.json", "--target", "nope",
                   "--out", tmp_path / "o") == 2


def test_console_script(data_csv, tmp_path):
    exe = shutil.which("stagekde")
    cmd = [exe] if exe else [sys.executable, "-m", "stagekde.cli"]
    r = subprocess.run(cmd + ["fit", data_csv, "--stages", "5", "--out", str(tmp_path / "o")],
                       capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert os.path.exists(tmp_path / "o" / "manifest.json")
