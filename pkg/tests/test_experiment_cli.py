import json
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest

from lyapmpc import cli
from lyapmpc.experiment import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    export_plots,
    incumbent_from_run,
    load_run,
    preset,
    read_history,
    simulate,
    tune,
)
from lyapmpc.mpc import OCPConfig
from lyapmpc.closed_loop import EpisodeConfig

FAST_BO = dict(n_candidates=128, n_local_candidates=32, n_refine=2, refine_steps=8, gp_restarts=2)


def smoke_config(name="unconstrained", seed=0, budget=5, n_init=3):
    cfg = preset(name, seed)
    return replace(cfg, episode=EpisodeConfig(M=10), ocp=OCPConfig(N=10),
                   bo=replace(cfg.bo, budget=budget, n_init=n_init, **FAST_BO))


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    tune(smoke_config(), out)
    return out


def test_presets_pin_experiment_values():
    u = preset("unconstrained")
    assert (u.prediction_variant, u.network.layer_sizes, u.bo.budget, u.bo.penalty_weight) == \
        ("linearized", (4, 5, 1), 400, 0.0)
    assert u.n_params == 31 and not u.bo.constrained
    c = preset("constrained")
    assert (c.prediction_variant, c.network.layer_sizes, c.bo.budget, c.bo.penalty_weight) == \
        ("mismatched", (4, 10, 1), 300, 1.0)
    assert c.bo.penalty_sharpness == 1000.0 and c.n_params == 61 and c.bo.constrained
    p = c.prediction_params
    assert (p.m1, p.m2, p.l1, p.l2) == (2.0, 0.5, 1.2, 1.2)
    for cfg in (u, c):
        assert cfg.Ts == 0.05 and cfg.episode.M == 50 and cfg.bo.n_init == 10
        assert (cfg.ocp.u_min, cfg.ocp.u_max) == (-50.0, 50.0)
        assert (cfg.plant.m1, cfg.plant.m2, cfg.plant.l1, cfg.plant.l2) == (1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ConfigError):
        preset("other")


@pytest.mark.parametrize("name", ["unconstrained", "constrained"])
def test_config_roundtrip(name, tmp_path):
    cfg = preset(name, seed=7)
    text = cfg.to_json()
    back = ExperimentConfig.from_json(text)
    assert back.to_json() == text
    assert back == cfg
    cfg.save(tmp_path / "c.json")
    assert ExperimentConfig.load(tmp_path / "c.json") == cfg


def test_config_errors():
    d = preset("unconstrained").to_dict()
    with pytest.raises(ConfigError, match="unknown"):
        ExperimentConfig.from_dict({**d, "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**d, "ocp": {"N": 0}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({**d, "prediction_model": {"variant": "foo"}})
    with pytest.raises(ConfigError, match="invalid JSON"):
        ExperimentConfig.from_json("{not json")


def test_simulate_zero_at_setpoint():
    cfg = replace(preset("unconstrained"), episode=EpisodeConfig(M=5, x0=(np.pi, np.pi, 0.0, 0.0)))
    res = simulate(cfg, np.zeros(31))
    assert abs(res.g0) <= 1e-12


def test_theta_length_error():
    with pytest.raises(ConfigError, match="n_p = 61"):
        Experiment(preset("constrained")).check_theta(np.zeros(31))


def test_tune_smoke_layout(run_dir):
    records = read_history(run_dir)
    assert len(records) == 5 + 3
    keys = {"n", "theta", "g0", "g1", "g2", "diverged", "feasible", "incumbent_index", "incumbent_value",
            "gp_hyperparameters", "wall_time"}
    assert all(set(r) == keys for r in records)
    assert [r["n"] for r in records] == list(range(8))
    summary = json.loads((run_dir / "summary.json").read_text())
    assert summary["layout_version"] == 1 and summary["n_records"] == 8
    theta = json.loads((run_dir / "incumbent_theta.json").read_text())["theta"]
    assert theta == records[summary["incumbent_index"]]["theta"]
    values = [r["incumbent_value"] for r in records]
    assert all(b <= a for a, b in zip(values, values[1:]))
    lines = (run_dir / "trajectories.csv").read_text().splitlines()
    assert len(lines) == 1 + 8 * 11


def test_replay_reproduces_logged_g0(run_dir):
    cfg, records = load_run(run_dir)
    idx = records[-1]["incumbent_index"]
    res = simulate(cfg, incumbent_from_run(run_dir))
    assert res.g0 == records[idx]["g0"]
    assert simulate(cfg, np.asarray(records[2]["theta"])).g0 == records[2]["g0"]


def test_same_seed_identical_incumbent_file(run_dir, tmp_path):
    tune(smoke_config(), tmp_path)
    assert (tmp_path / "incumbent_theta.json").read_bytes() == (run_dir / "incumbent_theta.json").read_bytes()
    a = [r["g0"] for r in read_history(tmp_path)]
    assert a == [r["g0"] for r in read_history(run_dir)]


def test_constrained_smoke_incumbent_definition(tmp_path):
    state = tune(smoke_config("constrained", budget=3, n_init=4), tmp_path)
    records = read_history(tmp_path)
    inc = records[records[-1]["incumbent_index"]]
    if any(r["feasible"] for r in records):
        assert inc["g1"] == 0.0 and inc["g2"] == 0.0
    assert len(state.history) == 7


def test_export_bundle(run_dir, tmp_path):
    paths = export_plots(run_dir, tmp_path / "plots")
    for role in ("nominal", "incumbent"):
        assert len(paths[role].read_text().splitlines()) == 1 + 11
    jstar = paths["incumbent_jstar"].read_text().splitlines()
    assert jstar[0] == "k,t,jstar" and len(jstar) == 12
    assert all(np.isfinite(float(line.split(",")[2])) for line in jstar[1:])
    cfg, _ = load_run(run_dir)
    simulate(cfg, np.zeros(31), tmp_path / "zero.csv")
    assert paths["nominal"].read_bytes() == (tmp_path / "zero.csv").read_bytes()
    assert (paths["queried"].read_bytes() == (run_dir / "trajectories.csv").read_bytes())


def test_partial_log_is_valid_prefix(run_dir, tmp_path):
    text = (run_dir / "history.jsonl").read_text().splitlines()
    (tmp_path / "history.jsonl").write_text("\n".join(text[:3]) + "\n")
    assert len(read_history(tmp_path)) == 3
    (tmp_path / "history.jsonl").write_text(text[0] + "\n{\"n\": 1, \"th")
    with pytest.raises(ConfigError, match="line 2"):
        read_history(tmp_path)


# command line -----------------------------------------------------------

def run_cli(*args):
    return subprocess.run([sys.executable, "-m", "lyapmpc.cli", *map(str, args)], capture_output=True, text=True)


def test_cli_validate_and_simulate(tmp_path):
    r = run_cli("validate-config", "--preset", "constrained", "--seed", "3")
    assert r.returncode == 0 and json.loads(r.stdout) == {"experiment": "constrained", "n_params": 61, "ok": True,
                                                          "seed": 3}
    cfg = replace(preset("unconstrained"), episode=EpisodeConfig(M=4))
    cfg.save(tmp_path / "cfg.json")
    r = run_cli("simulate", "zero", "--config", tmp_path / "cfg.json", "--out", tmp_path / "sim")
    assert r.returncode == 0, r.stderr
    out = json.loads(r.stdout)
    assert out["g0"] == simulate(cfg, np.zeros(31)).g0
    assert len((tmp_path / "sim" / "trajectory.csv").read_text().splitlines()) == 6


def test_cli_simulate_from_run(run_dir, tmp_path):
    _, records = load_run(run_dir)
    cfg_path = run_dir / "config.json"
    assert cli.main(["simulate", f"run:{run_dir}", "--config", str(cfg_path), "--out", str(tmp_path)]) == 0
    res = read_history(run_dir)[records[-1]["incumbent_index"]]
    theta_file = tmp_path / "theta.json"
    theta_file.write_text(json.dumps({"theta": res["theta"]}))
    r = run_cli("simulate", theta_file, "--config", cfg_path, "--out", tmp_path)
    assert json.loads(r.stdout)["g0"] == res["g0"]


def test_cli_tune_and_export(tmp_path):
    cfg = smoke_config(budget=1, n_init=2)
    cfg.save(tmp_path / "cfg.json")
    r = run_cli("tune", "--config", tmp_path / "cfg.json", "--seed", "5", "--out", tmp_path / "run")
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["records"] == 3
    assert json.loads((tmp_path / "run" / "config.json").read_text())["seed"] == 5
    r = run_cli("export-plots", tmp_path / "run", "--out", tmp_path / "plots")
    assert r.returncode == 0, r.stderr
    assert set(json.loads(r.stdout)) == {"queried", "nominal", "incumbent", "incumbent_jstar"}


@pytest.mark.parametrize("args, kind", [
    (["simulate", "zero"], "usage"),
    (["frobnicate"], "usage"),
    (["validate-config", "--config", "/nonexistent/cfg.json"], "io"),
    (["export-plots", "/nonexistent/run"], "config"),
])
def test_cli_errors_machine_readable(args, kind):
    r = run_cli(*args)
    assert r.returncode != 0
    err = json.loads(r.stderr.strip().splitlines()[-1])
    assert err["error"] == kind and err["message"]


def test_cli_bad_theta(tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"theta": [0.0] * 30}))
    r = run_cli("simulate", tmp_path / "t.json", "--preset", "unconstrained", "--out", tmp_path)
    assert r.returncode == cli.EXIT_CONFIG
    assert "n_p = 31" in json.loads(r.stderr)["message"]
    (tmp_path / "bad.json").write_text("{]")
    r = run_cli("validate-config", "--config", tmp_path / "bad.json")
    assert r.returncode == cli.EXIT_CONFIG and json.loads(r.stderr)["error"] == "config"
