import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from robustdyn import ConvergenceError, Coupling, Grid, discretize_ar1, joint_from_chain
from robustdyn import cli
from robustdyn.bridge import PairwiseCost, PathLaw, auxiliary_endpoint, static_bridge
from robustdyn.eot import CostTensor, solve_against_scaled
from robustdyn.sensitivity import BoundCurve, SensitivityConfig

FAST = ["--mcmc-steps", "15", "--opt-steps", "1"]


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def eot_spec(tmp_path):
    ch = discretize_ar1(0.0, 0.5, 0.5, 4)
    f0 = joint_from_chain(ch)
    X, Y = np.meshgrid(ch.grid.points, ch.grid.points, indexing="ij")
    path = tmp_path / "eot.json"
    path.write_text(json.dumps({"reference": f0.to_dict(), "scalar": (X * Y).tolist(), "cost": (X * Y).tolist(),
                                "lambda_kl": 0.05}))
    return path, f0, X * Y


@pytest.fixture
def bridge_spec(tmp_path):
    spec = {"grid": [0.0, 1.0], "initial": [0.4, 0.6],
            "kernels": [[[0.7, 0.3], [0.2, 0.8]], [[0.5, 0.5], [0.1, 0.9]]],
            "costs": [[[0.0, 1.0], [1.0, 0.0]], [[0.5, -0.5], [0.0, 1.0]]], "lambda_kl": 0.5}
    path = tmp_path / "bridge.json"
    path.write_text(json.dumps(spec))
    return path, spec


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("ROBUSTDYN_SEED", raising=False)


# ---- synth

def test_synth_car_writes_panel_and_truth(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"T": 30, "n_points": 15, "seed": 1}))
    assert _run("synth", "car", "--spec", spec, "--out", tmp_path / "d") == 0
    for name in ("panel.csv", "truth.json", "manifest.json"):
        assert (tmp_path / "d" / name).is_file()
    assert len(_rows(tmp_path / "d" / "panel.csv")) == 30


def test_synth_same_seed_gives_identical_files(tmp_path):
    for d in ("a", "b"):
        assert _run("synth", "taxi", "--seed", 4, "--out", tmp_path / d) == 0
    for name in ("panel.csv", "truth.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_synth_usage_errors(tmp_path):
    assert _run("synth", "car", "--spec", tmp_path / "missing.json", "--out", tmp_path / "x") == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"gamma1": 1.5}))
    assert _run("synth", "car", "--spec", bad, "--out", tmp_path / "x") == 2
    bad.write_text(json.dumps({"no_such_field": 1}))
    assert _run("synth", "car", "--spec", bad, "--out", tmp_path / "x") == 2
    assert _run("bogus") == 2


# ---- bounds

def test_zero_radius_gives_reference(tmp_path, eot_spec):
    path, f0, s = eot_spec
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "raw-eot", "--input", path, "--radii", "0", *FAST, "--out", out) == 0
    rows = _rows(out / "bounds.csv")
    assert len(rows) == 1
    ref = f0.expect(s)
    assert float(rows[0]["lower"]) == pytest.approx(ref, abs=1e-8)
    assert float(rows[0]["upper"]) == pytest.approx(ref, abs=1e-8)
    man = json.loads((out / "manifest.json").read_text())
    assert man["reference_scalar"] == pytest.approx(ref, abs=1e-14)


def test_default_ladder_has_fourteen_rows(tmp_path, eot_spec):
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--mcmc-steps", 5, "--opt-steps", 1,
                "--out", out) == 0
    rows = _rows(out / "bounds.csv")
    assert len(rows) == 14
    deltas = [float(r["delta"]) for r in rows]
    assert np.allclose(deltas[:13], 10.0 ** (-3 + 0.25 * np.arange(13)))
    assert deltas[-1] == 1e10
    assert len(list((out / "kernels").glob("delta_*.json"))) == 28


def test_lower_direction_leaves_upper_empty(tmp_path, bridge_spec):
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "bridge", "--input", bridge_spec[0], "--radii", "0,0.1", "--direction", "lower",
                *FAST, "--out", out) == 0
    rows = _rows(out / "bounds.csv")
    assert all(r["upper"] == "" for r in rows)
    assert all(r["lower"] != "" for r in rows)
    assert float(rows[1]["lower"]) <= float(rows[0]["lower"])


def test_manifest_reruns_bit_identically(tmp_path, eot_spec):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--radii", "0,0.1,1", *FAST,
                "--out", a) == 0
    man = json.loads((a / "manifest.json").read_text())
    assert str(eot_spec[0]) in man["inputs"]
    assert man["config_hash"] == SensitivityConfig.from_dict(man["config"]).config_hash()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(man["config"]))
    assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--config", cfg, "--out", b) == 0
    assert (a / "bounds.csv").read_bytes() == (b / "bounds.csv").read_bytes()
    kernels = json.loads((a / "kernels" / "delta_01_lower.json").read_text())
    assert Coupling.from_dict(kernels["plan"]).tensor.sum() == pytest.approx(1.0)
    assert "kernel" in kernels


def test_env_seed_overrides_config(tmp_path, eot_spec, monkeypatch):
    runs = {}
    for name, env in (("a", "5"), ("b", "6")):
        monkeypatch.setenv("ROBUSTDYN_SEED", env)
        out = tmp_path / name
        assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--radii", "0.1", "--seed", 0, *FAST,
                    "--out", out) == 0
        man = json.loads((out / "manifest.json").read_text())
        assert man["seed"] == int(env) and man["seed_source"] == "env"
        runs[name] = (out / "bounds.csv").read_text()
    assert runs["a"] != runs["b"]
    monkeypatch.setenv("ROBUSTDYN_SEED", "x")
    assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--out", tmp_path / "c") == 2


def test_parallel_directions(tmp_path, eot_spec):
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--radii", "0,0.5", "--jobs", 2, *FAST,
                "--out", out) == 0
    curve = BoundCurve.from_csv(out / "bounds.csv")
    assert curve.lowers[1] <= curve.lowers[0] + 1e-8
    assert curve.uppers[1] >= curve.uppers[0] - 1e-8


def test_solver_failure_flushes_partial_results(tmp_path, eot_spec, monkeypatch):
    def failing(problem, config, direction, store=None, stream=0, callback=None):
        store.add(problem.reference())
        callback(1, config.radii[0], 0.0, store)
        raise ConvergenceError("forced")

    monkeypatch.setattr(cli, "anneal_optimize", failing)
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "raw-eot", "--input", eot_spec[0], "--radii", "0", "--out", out) == 1
    assert (out / "bounds.csv.partial").is_file()
    assert (out / "manifest.json.partial").is_file()
    assert not (out / "bounds.csv").exists()


def test_car_pipeline_at_zero_radius(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"T": 40, "n_points": 15, "seed": 2}))
    d = tmp_path / "car"
    assert _run("synth", "car", "--spec", spec, "--out", d) == 0
    assert _run("bounds", "--mode", "car", "--input", d, "--radii", "0", "--out", tmp_path / "none") == 2
    assert _run("fit-reference", "car", "--input", d, "--n-points", 15) == 0
    ref = json.loads((d / "reference.json").read_text())
    assert ref["kind"] == "car" and abs(ref["gamma1"]) < 1
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "car", "--input", d, "--radii", "0,0.01", *FAST, "--out", out) == 0
    rows = _rows(out / "bounds.csv")
    assert float(rows[0]["lower"]) == pytest.approx(float(rows[0]["upper"]), abs=1e-6)


def test_taxi_pipeline_with_fit_flag(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"days": 20, "n_xi": 9, "seed": 1}))
    d = tmp_path / "taxi"
    assert _run("synth", "taxi", "--spec", spec, "--out", d) == 0
    out = tmp_path / "b"
    assert _run("bounds", "--mode", "taxi", "--input", d, "--fit-reference", "--n-xi", 9, "--radii", "0,0.05",
                *FAST, "--out", out) == 0
    rows = _rows(out / "bounds.csv")
    assert float(rows[0]["lower"]) == pytest.approx(float(rows[0]["upper"]), abs=1e-10)
    man = json.loads((out / "manifest.json").read_text())
    assert man["problem"]["reference"]["kind"] == "taxi"


# ---- sensitivity

def _flat_curve(path):
    path.write_text("delta,lower,upper,kl_lower,kl_upper,binding_lower,binding_upper\n"
                    "0.0,1.0,1.0,0.0,0.0,false,false\n"
                    "0.1,1.0,1.0,0.0,0.0,false,false\n"
                    "1.0,1.0,1.0,0.0,0.0,false,false\n")
    (path.parent / "manifest.json").write_text(json.dumps({"config_hash": "abc123"}))


def test_local_and_global_on_flat_curve(tmp_path, capsys):
    b = tmp_path / "bounds.csv"
    _flat_curve(b)
    assert _run("sensitivity", "local", "--bounds", b) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["lower_slope"] == 0.0 and rep["upper_slope"] == 0.0
    assert rep["config_hash"] == "abc123"
    assert _run("sensitivity", "global", "--bounds", b, "--out", tmp_path / "r") == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["flattened"] is True
    assert json.loads((tmp_path / "r" / "sensitivity_global.json").read_text()) == rep


def test_global_reports_bound_with_parameters(tmp_path, capsys):
    b = tmp_path / "bounds.csv"
    _flat_curve(b)
    assert _run("sensitivity", "global", "--bounds", b, "--L", 1.0, "--C", 1.0, "--dims", "1,1", "--lambda-kl",
                0.1) == 0
    rep = json.loads(capsys.readouterr().out)
    assert any(k != "flattened" and isinstance(v, float) and v > 0 for k, v in rep.items() if k not in
               ("lower", "upper"))


def test_robustness_at_reference_threshold_is_zero(tmp_path, eot_spec, capsys):
    path, f0, s = eot_spec
    ref = f0.expect(s)
    assert _run("sensitivity", "robustness", "--mode", "raw-eot", "--input", path, "--thresholds",
                f"{ref!r},{ref - 0.05!r}", "--mcmc-steps", 40, "--opt-steps", 1) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["results"][0]["delta"] == 0.0
    assert rep["results"][1]["delta"] > 0.0
    assert rep["reference"] == pytest.approx(ref, abs=1e-14)


def test_sensitivity_usage_errors(tmp_path):
    assert _run("sensitivity", "local", "--bounds", tmp_path / "nope.csv") == 2
    assert _run("sensitivity", "robustness", "--mode", "raw-eot") == 2
    assert _run("sensitivity", "robustness", "--thresholds", "0.1") == 2


# ---- direct solvers

def test_eot_solve_matches_library(tmp_path, eot_spec, capsys):
    path, f0, s = eot_spec
    assert _run("eot-solve", "--input", path, "--out", tmp_path / "o") == 0
    val = json.loads(capsys.readouterr().out)["value"]
    direct = solve_against_scaled(CostTensor(f0.grids, s), f0, 0.05).value
    assert val == pytest.approx(direct, abs=1e-10)
    sol = json.loads((tmp_path / "o" / "eot_solution.json").read_text())
    assert Coupling.from_dict(sol["plan"]).tensor.sum() == pytest.approx(1.0)


def test_eot_solve_infeasible_is_solver_failure(tmp_path):
    g = Grid([0.0, 1.0])
    f0 = Coupling((g, g), np.array([[0.5, 0.0], [0.0, 0.5]]))
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"reference": f0.to_dict(), "cost": [[0, 1], [1, 0]],
                                "marginals": [[0.9, 0.1], [0.5, 0.5]]}))
    assert _run("eot-solve", "--input", path) == 1


def test_bridge_solve_matches_library(bridge_spec, capsys):
    path, spec = bridge_spec
    assert _run("bridge-solve", "--input", path) == 0
    val = json.loads(capsys.readouterr().out)["value"]
    g = Grid(spec["grid"])
    law = PathLaw(g, spec["initial"], tuple(np.asarray(k) for k in spec["kernels"]))
    cost = PairwiseCost(tuple(np.asarray(c) for c in spec["costs"]))
    direct = static_bridge(auxiliary_endpoint(law, cost, 0.5), law.initial, law.terminal, 0.5).value
    assert val == pytest.approx(direct, abs=1e-12)


def test_module_entry_point(tmp_path, bridge_spec):
    out = subprocess.run([sys.executable, "-m", "robustdyn", "bridge-solve", "--input", str(bridge_spec[0])],
                         capture_output=True, text=True, timeout=120)
    assert out.returncode == 0
    assert "value" in json.loads(out.stdout)
    out = subprocess.run([sys.executable, "-m", "robustdyn", "bounds"], capture_output=True, text=True, timeout=120)
    assert out.returncode == 2
