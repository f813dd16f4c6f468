import json
import subprocess
import sys

import jsonschema
import numpy as np
import pandas as pd
import pytest

from didkit.cli import RunConfig, main, parse_args
from didkit.panel import write_csv
from didkit.pipeline import schema
from didkit.simgen import ByEventTime, Constant, DgpConfig, SimCovariate, generate_panel


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def constant_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "panel.csv"
    write_csv(generate_panel(DgpConfig(n_units=400, effect=Constant(0.05), seed=3))[0], path)
    return path


@pytest.fixture(scope="module")
def validator():
    return jsonschema.Draft202012Validator(schema())


class TestEstimate:
    def test_overall_and_schema(self, capsys, constant_csv, validator):
        code, out, _ = run(capsys, "estimate", "--input", constant_csv, "--reps", 49, "--seed", 1)
        assert code == 0
        doc = json.loads(out)
        validator.validate(doc)
        assert doc["overall"]["estimate"] == pytest.approx(0.05, abs=0.03)
        assert doc["overall"]["ci_low"] <= doc["overall"]["estimate"] <= doc["overall"]["ci_high"]
        assert len(doc["grid"]) == 9
        assert "homogeneous" in doc["diagnostics"]["twfe"]["caveat"]

    def test_echo_reproduces_document(self, capsys, constant_csv, tmp_path):
        argv = ["estimate", "--input", constant_csv, "--reps", 20, "--seed", 5, "--output", tmp_path / "a.json"]
        assert run(capsys, *argv)[0] == 0
        first = json.loads((tmp_path / "a.json").read_text())
        echoed = RunConfig.from_echo(first["config"])
        assert echoed == parse_args([str(a) for a in argv[:-2]])
        argv[-1] = tmp_path / "b.json"
        run(capsys, *argv)
        assert (tmp_path / "b.json").read_text() == (tmp_path / "a.json").read_text()

    def test_seed_from_environment(self, capsys, constant_csv, monkeypatch):
        monkeypatch.setenv("DIDKIT_SEED", "17")
        code, out, _ = run(capsys, "estimate", "--input", constant_csv, "--reps", 10)
        assert code == 0 and json.loads(out)["seed"] == 17
        code, out, _ = run(capsys, "estimate", "--input", constant_csv, "--reps", 10, "--seed", 2)
        assert json.loads(out)["seed"] == 2

    def test_csv_format(self, capsys, constant_csv):
        code, out, _ = run(capsys, "estimate", "--input", constant_csv, "--reps", 10, "--format", "csv")
        assert code == 0
        lines = out.splitlines()
        assert lines[0] == "g,t,w,estimate,ci_low,ci_high,n_treated,n_control"
        assert len(lines) == 10

    def test_plot_data(self, capsys, constant_csv, tmp_path):
        plot = tmp_path / "plot.csv"
        code, _, _ = run(capsys, "estimate", "--input", constant_csv, "--reps", 10, "--include-pre",
                         "--emit-plot-data", plot)
        assert code == 0
        frame = pd.read_csv(plot)
        assert set(frame["kind"]) == {"group_time", "event"}
        assert frame.loc[frame["kind"] == "event", "w"].min() == -3

    def test_missing_column(self, capsys, constant_csv):
        code, _, err = run(capsys, "estimate", "--input", constant_csv, "--outcome-col", "y", "--reps", 0)
        assert code == 1
        assert "'y'" in err

    def test_missing_file(self, capsys, tmp_path):
        code, _, err = run(capsys, "estimate", "--input", tmp_path / "nope.csv")
        assert code == 1 and "does not exist" in err

    def test_bad_argument_exits_one(self, capsys, constant_csv):
        code, _, _ = run(capsys, "estimate", "--input", constant_csv, "--control", "sometimes")
        assert code == 1

    def test_unwritable_output(self, capsys, constant_csv, tmp_path):
        code, _, err = run(capsys, "estimate", "--input", constant_csv, "--reps", 0,
                           "--output", tmp_path / "missing" / "out.json")
        assert code == 1 and "input error" in err

    def test_reversal(self, capsys, tmp_path):
        p = tmp_path / "rev.csv"
        p.write_text("unit,time,outcome,treated\na,1,0,0\na,2,0,1\na,3,0,0\nb,1,0,0\nb,2,0,0\nb,3,0,0\n")
        code, _, err = run(capsys, "estimate", "--input", p, "--reps", 0)
        assert code == 1 and "treatment reversal for unit a" in err

    def test_control_rules_differ_under_contamination(self, capsys, tmp_path):
        cfg = DgpConfig(n_units=600, group_shares={2014: 0.3, 2015: 0.3, 2017: 0.4},
                        effect=ByEventTime({0: 1.0, 1: 2.0, 2: 3.0, 3: 4.0}), seed=5)
        p = tmp_path / "contaminated.csv"
        write_csv(generate_panel(cfg)[0], p)
        est = {}
        for rule in ("paperliteral", "notyet"):
            code, out, _ = run(capsys, "estimate", "--input", p, "--reps", 0, "--control", rule)
            assert code == 0
            est[rule] = {(r["g"], r["t"]): r["estimate"] for r in json.loads(out)["grid"]}
        assert abs(est["paperliteral"][(2014, 2016)] - est["notyet"][(2014, 2016)]) > 0.5

    def test_warnings_reported(self, capsys, tmp_path, validator):
        p = tmp_path / "late.csv"
        write_csv(generate_panel(DgpConfig(n_units=200, group_shares={2014: 0.5, 2016: 0.5}, seed=3))[0], p)
        code, out, err = run(capsys, "estimate", "--input", p, "--reps", 0)
        assert code == 0
        doc = json.loads(out)
        validator.validate(doc)
        assert any("skipped" in w for w in doc["warnings"])
        assert len(set(doc["warnings"])) == len(doc["warnings"])
        assert "didkit: warning:" in err

    def test_regression_estimator_with_covariate(self, capsys, tmp_path, validator):
        cfg = DgpConfig(n_units=300, covariates=(SimCovariate("x", "binary"),), effect=Constant(0.1), seed=2)
        p = tmp_path / "cov.csv"
        write_csv(generate_panel(cfg)[0], p)
        code, out, _ = run(capsys, "estimate", "--input", p, "--reps", 0, "--estimator", "regression",
                           "--covariates", "x", "--categorical", "x", "--stratify", "x")
        assert code == 0
        doc = json.loads(out)
        validator.validate(doc)
        assert {r["level"] for r in doc["diagnostics"]["stratified"]} == {"0", "1"}


class TestPretest:
    def test_wald_document(self, capsys, constant_csv, validator):
        code, out, _ = run(capsys, "pretest", "--input", constant_csv, "--reps", 49, "--seed", 3)
        assert code == 0
        doc = json.loads(out)
        validator.validate(doc)
        assert 0 <= doc["wald"]["p_value"] <= 1
        assert doc["wald"]["df"] >= 1

    def test_no_pre_periods_exit_two(self, capsys, tmp_path):
        cfg = DgpConfig(n_units=100, periods=(2013, 2016), group_shares={2014: 0.5, "never": 0.5}, seed=1)
        p = tmp_path / "short.csv"
        write_csv(generate_panel(cfg)[0], p)
        code, _, err = run(capsys, "pretest", "--input", p, "--reps", 10)
        assert code == 2
        assert "no pre-periods available" in err


class TestAggregate:
    def test_from_grid_and_sizes(self, capsys, tmp_path, validator):
        grid = tmp_path / "grid.csv"
        grid.write_text("g,t,w,estimate\n2014,2014,0,1.0\n2014,2015,1,2.0\n2015,2015,0,4.0\n")
        sizes = tmp_path / "sizes.csv"
        sizes.write_text("g,size\n2014,10\n2015,30\n")
        code, out, _ = run(capsys, "aggregate", "--input", grid, "--sizes", sizes)
        assert code == 0
        doc = json.loads(out)
        validator.validate(doc)
        curve = {r["w"]: r["estimate"] for r in doc["event_curve"]}
        assert curve == {0: pytest.approx(3.25), 1: pytest.approx(2.0)}
        assert doc["overall"]["estimate"] == pytest.approx(2.625)

    def test_roundtrip_with_estimate(self, capsys, constant_csv, tmp_path):
        grid = tmp_path / "grid.csv"
        run(capsys, "estimate", "--input", constant_csv, "--reps", 0, "--format", "csv", "--output", grid)
        code, out, _ = run(capsys, "estimate", "--input", constant_csv, "--reps", 0)
        direct = json.loads(out)["overall"]["estimate"]
        code, out, _ = run(capsys, "aggregate", "--input", grid, "--panel", constant_csv)
        assert code == 0
        assert json.loads(out)["overall"]["estimate"] == pytest.approx(direct, abs=1e-12)


CONFIG = """
[dgp]
n_units = 200
seed = 11

[dgp.effect]
kind = "by_event_time"
tau = {0 = 0.1, 1 = 0.2, 2 = 0.3, 3 = 0.4}

[benchmark]
n_reps = 4
"""


class TestSimulateAndBenchmark:
    def test_simulate_writes_panel_and_truth(self, capsys, tmp_path):
        cfg = tmp_path / "dgp.toml"
        cfg.write_text(CONFIG)
        out = tmp_path / "sim" / "panel.csv"  # directory is created on demand
        code, _, _ = run(capsys, "simulate", "--config", cfg, "--output", out)
        assert code == 0
        frame = pd.read_csv(out)
        assert frame["unit"].nunique() == 200
        truth = json.loads((out.parent / "truth.json").read_text())
        assert truth["seed"] == 11
        assert {r["w"]: r["value"] for r in truth["event_curve"]}[2] == pytest.approx(0.3)

        code, _, _ = run(capsys, "simulate", "--config", cfg, "--output", tmp_path / "p2.csv", "--seed", 12,
                         "--truth", tmp_path / "t2.json")
        assert code == 0
        assert not np.array_equal(pd.read_csv(tmp_path / "p2.csv")["outcome"], frame["outcome"])

    def test_benchmark(self, capsys, tmp_path, validator):
        cfg = tmp_path / "bench.toml"
        cfg.write_text(CONFIG)
        code, out, _ = run(capsys, "benchmark", "--config", cfg, "--threads", 1)
        assert code == 0
        doc = json.loads(out)
        validator.validate(doc)
        names = {s["name"] for s in doc["statistics"]}
        assert {"overall", "twfe", "event(0)"} <= names


def test_module_entry_point(constant_csv):
    proc = subprocess.run([sys.executable, "-m", "didkit", "estimate", "--input", str(constant_csv), "--reps", "0"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["command"] == "estimate"
