import json
import subprocess
import sys
from importlib import resources

import numpy as np
import pytest

from whittlemaint.cli import main
from whittlemaint.experiment import CostCell, ScenarioConfig, Study
from whittlemaint.model import FleetSpec, MachineParams, build_machine, dump_json

from conftest import random_indexable

FIXTURE = str(resources.files("whittlemaint").joinpath("data", "illustrative_fleet.json"))


@pytest.fixture
def small_fleet(tmp_path):
    rng = np.random.default_rng(4)
    path = tmp_path / "fleet.json"
    dump_json(FleetSpec([random_indexable(rng, 5, beta=0.9) for _ in range(2)], 1), path)
    return str(path)


def test_index_csv_on_fixture(tmp_path):
    out = tmp_path / "w.csv"
    assert main(["index", "--input", FIXTURE, "--output", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 26
    cols = np.array([[float(v) for v in line.split(",")[1:]] for line in lines[1:]])
    assert cols.shape == (25, 4)
    assert np.all(np.diff(cols[1:], axis=0) > 0)


def test_index_json_writes_csv_sibling(tmp_path):
    out = tmp_path / "w.json"
    assert main(["index", "--input", FIXTURE, "--output", str(out)]) == 0
    data = json.loads(out.read_text())
    assert len(data) == 4 and all(d["indexable"] for d in data)
    assert (tmp_path / "w.csv").exists()


def test_validate_reports_violation(tmp_path, capsys):
    bundle = json.loads(open(FIXTURE).read())["machines"][0]
    m = build_machine(MachineParams(**bundle)).to_dict()
    m["intervention_kernel"][2][:2] = [0.4, 0.6]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(m))
    assert main(["validate", "--input", str(path)]) == 1
    assert "P¹(2,0) ≤ P¹(2,1)" in capsys.readouterr().err


def test_validate_ok(small_fleet, capsys):
    assert main(["validate", "--input", small_fleet]) == 0
    assert "2 machine(s) valid" in capsys.readouterr().out


def test_usage_errors(capsys):
    assert main(["frobnicate"]) == 64
    assert main(["index"]) == 64
    assert main(["simulate", "--input", "x.json", "--replicates", "0"]) == 64
    assert main(["index", "--input", "/nonexistent.json"]) == 64
    assert main(["study"]) == 64


def test_malformed_json_is_invalid_input(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("{not json")
    assert main(["validate", "--input", str(p)]) == 1


def test_budget_failure_exit_code(tmp_path):
    path = tmp_path / "big.json"
    raw = json.loads(open(FIXTURE).read())
    raw["machines"] = raw["machines"] * 2  # 25^8 joint states
    path.write_text(json.dumps(raw))
    assert main(["solve", "--input", str(path)]) == 2


def test_solve_rejects_mixed_discount(tmp_path, capsys):
    rng = np.random.default_rng(4)
    path = tmp_path / "mixed.json"
    dump_json(FleetSpec([random_indexable(rng, 4, beta=b) for b in (0.9, 0.95)], 1), path)
    assert main(["solve", "--input", str(path)]) == 1
    assert "discount" in capsys.readouterr().err


def test_solve_output(small_fleet, tmp_path):
    out = tmp_path / "s.json"
    assert main(["solve", "--input", small_fleet, "--output", str(out), "--epsilon", "1e-6"]) == 0
    d = json.loads(out.read_text())
    assert d["n_joint_states"] == 25
    assert d["index_value"] >= d["optimal_value"] * (1 - 1e-5)


def test_study_suboptimality_csv(tmp_path):
    cfg = tmp_path / "cfg.json"
    c = ScenarioConfig(study=Study.SUBOPTIMALITY, cells=(CostCell("Linear", 1),), fleet_shape=(2, 1, 5))
    cfg.write_text(json.dumps(c.to_dict()))
    out = tmp_path / "s.csv"
    assert main(["study", "--input", str(cfg), "--instances", "10", "--output", str(out)]) == 0
    header = out.read_text().splitlines()[0].split(",")
    assert header[-5:] == ["min", "q1", "median", "q3", "max"]


def test_plot_data(tmp_path):
    out = tmp_path / "p.csv"
    assert main(["plot-data", "--input", FIXTURE, "--output", str(out)]) == 0
    assert out.read_text().startswith("machine,state,H,W,bfrak_at_W")
    js = tmp_path / "p.json"
    assert main(["plot-data", "--input", FIXTURE, "--output", str(js)]) == 0
    assert len(json.loads(js.read_text())["machines"]) == 4


def test_beta_override(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["index", "--input", FIXTURE, "--output", str(a)])
    main(["index", "--input", FIXTURE, "--output", str(b), "--beta", "0.9"])
    assert a.read_text() != b.read_text()


@pytest.mark.parametrize("argv", [
    ["simulate", "--replicates", "3", "--horizon", "40", "--seed", "5", "--threshold-count", "2"],
    ["solve"],
    ["index"],
    ["plot-data"],
])
def test_byte_identical_reruns(argv, small_fleet, tmp_path):
    outs = []
    for k in range(2):
        out = tmp_path / f"o{k}.json"
        assert main(argv[:1] + ["--input", small_fleet, "--output", str(out)] + argv[1:]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_module_entry_point(small_fleet):
    cmd = [sys.executable, "-m", "whittlemaint", "simulate", "--input", small_fleet,
           "--replicates", "2", "--horizon", "30", "--policy", "naive"]
    a = subprocess.run(cmd, capture_output=True, check=True).stdout
    b = subprocess.run(cmd, capture_output=True, check=True).stdout
    assert a == b and json.loads(a)[0]["policy"] == "Naive"
