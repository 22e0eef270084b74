"""Experiment configuration, wiring and run-log persistence.

A configuration is a JSON document (see ``ExperimentConfig.to_dict``). A run
directory holds::

    config.json           snapshot of the configuration used
    history.jsonl         one record per evaluated query
    trajectories.csv      closed-loop trajectory of every query, column ``n`` first
    incumbent_theta.json  final incumbent parameter vector
    summary.json          incumbent summary and layout version
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bayes_opt import BayesOpt, BOConfig, BOState, Observation
from .closed_loop import (
    TRAJECTORY_COLUMNS,
    EpisodeConfig,
    EpisodeResult,
    Trajectory,
    run_episode,
    write_trajectory_csv,
)
from .dynamics import (
    MISMATCHED_PARAMS,
    NOMINAL_PARAMS,
    TS_DEFAULT,
    VARIANTS,
    X_UPRIGHT,
    PendulumParams,
    linearize,
    make_model,
)
from .mpc import OCPConfig
from .neural_cost import CostWeights, NetworkShape, solve_dare

LAYOUT_VERSION = 1
PRESETS = ("unconstrained", "constrained")
DEFAULT_Q = np.diag([10.0, 10.0, 0.1, 0.1])
DEFAULT_R = np.array([[0.01]])


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    experiment: str = "custom"
    Ts: float = TS_DEFAULT
    plant: PendulumParams = NOMINAL_PARAMS
    prediction_variant: str = "linearized"
    prediction_params: PendulumParams = MISMATCHED_PARAMS
    network: NetworkShape = NetworkShape((4, 5, 1))
    Q: list = field(default_factory=lambda: DEFAULT_Q.tolist())
    R: list = field(default_factory=lambda: DEFAULT_R.tolist())
    terminal_from: str = "plant"  # linearization used for the Riccati terminal weight
    performance: dict = field(default_factory=lambda: {"V": "Q", "W": "R", "Z": "P"})
    x_d: list = field(default_factory=lambda: X_UPRIGHT.tolist())
    u_d: float = 0.0
    ocp: OCPConfig = OCPConfig()
    episode: EpisodeConfig = EpisodeConfig()
    bo: BOConfig = BOConfig()
    seed: int = 0
    output_dir: str = "runs"

    def __post_init__(self):
        if self.experiment not in PRESETS + ("custom",):
            raise ConfigError(f"unknown experiment tag {self.experiment!r}")
        if self.prediction_variant not in VARIANTS:
            raise ConfigError(f"unknown prediction model variant {self.prediction_variant!r}")
        if self.terminal_from not in ("plant", "prediction"):
            raise ConfigError("terminal_from must be 'plant' or 'prediction'")
        if self.Ts <= 0:
            raise ConfigError("Ts must be positive")
        if self.network.layer_sizes[0] != 4:
            raise ConfigError("network input size must equal the state dimension 4")
        if np.shape(self.Q) != (4, 4) or np.shape(self.R) != (1, 1):
            raise ConfigError("Q must be 4x4 and R 1x1")
        for key in ("V", "W", "Z"):
            if key not in self.performance:
                raise ConfigError(f"performance weight {key} missing")
        if self.bo.seed != self.seed:
            self.bo = replace(self.bo, seed=self.seed)

    @property
    def n_params(self) -> int:
        return self.network.n_params

    # serialization ---------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "Ts": self.Ts,
            "plant": asdict(self.plant),
            "prediction_model": {"variant": self.prediction_variant, "params": asdict(self.prediction_params)},
            "network": {"layer_sizes": list(self.network.layer_sizes), "activation": self.network.activation},
            "cost": {"Q": self.Q, "R": self.R, "terminal_from": self.terminal_from,
                     "x_d": self.x_d, "u_d": self.u_d},
            "performance": self.performance,
            "ocp": asdict(self.ocp),
            "episode": {**asdict(self.episode), "x0": list(self.episode.x0)},
            "bo": {k: v for k, v in asdict(self.bo).items() if k != "seed"},
            "seed": self.seed,
            "output_dir": self.output_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"experiment", "Ts", "plant", "prediction_model", "network", "cost",
                 "performance", "ocp", "episode", "bo", "seed", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        try:
            kw = {}
            if "experiment" in d:
                kw["experiment"] = d["experiment"]
            if "Ts" in d:
                kw["Ts"] = float(d["Ts"])
            if "plant" in d:
                kw["plant"] = PendulumParams(**d["plant"])
            if "prediction_model" in d:
                pm = d["prediction_model"]
                kw["prediction_variant"] = pm.get("variant", "linearized")
                if "params" in pm:
                    kw["prediction_params"] = PendulumParams(**pm["params"])
            if "network" in d:
                kw["network"] = NetworkShape(tuple(d["network"]["layer_sizes"]),
                                             d["network"].get("activation", "tanh"))
            if "cost" in d:
                c = d["cost"]
                for key in ("Q", "R", "terminal_from", "x_d", "u_d"):
                    if key in c:
                        kw[key] = c[key]
            if "performance" in d:
                kw["performance"] = dict(d["performance"])
            if "ocp" in d:
                kw["ocp"] = _build(OCPConfig, d["ocp"])
            if "episode" in d:
                e = dict(d["episode"])
                if "x0" in e:
                    e["x0"] = tuple(float(v) for v in e["x0"])
                kw["episode"] = _build(EpisodeConfig, e)
            if "seed" in d:
                kw["seed"] = int(d["seed"])
            if "bo" in d:
                kw["bo"] = _build(BOConfig, {**d["bo"], "seed": kw.get("seed", 0)})
            if "output_dir" in d:
                kw["output_dir"] = d["output_dir"]
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        return cls(**kw)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_json(Path(path).read_text())


def _build(klass, d: dict):
    names = {f.name for f in fields(klass)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"unknown {klass.__name__} keys: {sorted(unknown)}")
    return klass(**d)


def preset(name: str, seed: int = 0) -> ExperimentConfig:
    """The two double-pendulum experiments at their full budgets."""
    if name == "unconstrained":
        return ExperimentConfig(
            experiment="unconstrained",
            prediction_variant="linearized",
            network=NetworkShape((4, 5, 1)),
            bo=BOConfig(budget=400, n_init=10, constrained=False, penalty_weight=0.0, seed=seed),
            seed=seed,
            output_dir="runs/unconstrained",
        )
    if name == "constrained":
        return ExperimentConfig(
            experiment="constrained",
            prediction_variant="mismatched",
            prediction_params=MISMATCHED_PARAMS,
            network=NetworkShape((4, 10, 1)),
            bo=BOConfig(budget=300, n_init=10, constrained=True, penalty_weight=1.0,
                        penalty_sharpness=1000.0, seed=seed),
            seed=seed,
            output_dir="runs/constrained",
        )
    raise ConfigError(f"unknown preset {name!r}; expected one of {PRESETS}")


class Experiment:
    """Plant, prediction model, costs and controller built from a configuration."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        x_d = np.asarray(cfg.x_d, dtype=float)
        self.plant = make_model("true", cfg.plant, cfg.prediction_params, cfg.Ts)
        self.prediction = make_model(cfg.prediction_variant, cfg.plant, cfg.prediction_params, cfg.Ts,
                                     x_op=x_d, u_op=cfg.u_d)
        Q = np.asarray(cfg.Q, dtype=float)
        R = np.asarray(cfg.R, dtype=float)
        if cfg.terminal_from == "plant" or cfg.prediction_variant != "mismatched":
            base = cfg.plant
        else:
            base = cfg.prediction_params
        lin = linearize(base, x_d, cfg.u_d, cfg.Ts)
        P = solve_dare(lin.A, lin.B, Q, R)
        self.weights = CostWeights(Q, R, P, x_d, cfg.u_d)
        named = {"Q": Q, "R": R, "P": P}
        self.performance_weights = tuple(
            named[v] if isinstance(v, str) else np.asarray(v, dtype=float)
            for v in (cfg.performance["V"], cfg.performance["W"], cfg.performance["Z"])
        )
        self.shape = cfg.network

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float).ravel()
        if theta.size != self.shape.n_params:
            raise ConfigError(
                f"theta has length {theta.size}, expected n_p = {self.shape.n_params} "
                f"for network {list(self.shape.layer_sizes)}"
            )
        return theta

    def episode(self, theta) -> EpisodeResult:
        theta = self.check_theta(theta)
        return run_episode(theta, self.plant, self.prediction, self.weights, self.shape,
                           self.cfg.ocp, self.cfg.episode, self.performance_weights)

    def observe(self, theta) -> Observation:
        res = self.episode(theta)
        return Observation(res.g0, (res.g1, res.g2), res.diverged, {"trajectory": res.trajectory})


# run logs ------------------------------------------------------------

def _dump_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, allow_nan=True)


def write_theta(theta, path) -> None:
    Path(path).write_text(json.dumps({"theta": [float(v) for v in theta]}) + "\n")


def read_theta(path) -> np.ndarray:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read theta file {path}: {exc}") from exc
    values = data["theta"] if isinstance(data, dict) else data
    return np.asarray(values, dtype=float)


def _trajectory_rows(n: int, traj: Trajectory):
    for row in traj.to_rows():
        yield {"n": n, **{k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()}}


def tune(cfg: ExperimentConfig, out_dir=None, progress=None) -> BOState:
    """Run the optimization and stream the run log into ``out_dir``."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.save(out / "config.json")
    exp = Experiment(cfg)
    hist_path = out / "history.jsonl"
    traj_path = out / "trajectories.csv"
    hist = open(hist_path, "w")
    traj_fh = open(traj_path, "w", newline="")
    writer = csv.DictWriter(traj_fh, fieldnames=("n",) + TRAJECTORY_COLUMNS)
    writer.writeheader()

    def callback(n, query, state, record):
        obs = query.obs
        rec = {
            "n": n,
            "theta": record["theta"],
            "g0": obs.g0,
            "g1": obs.constraints[0],
            "g2": obs.constraints[1],
            "diverged": obs.diverged,
            "feasible": obs.feasible,
            "incumbent_index": record["incumbent_index"],
            "incumbent_value": record["incumbent_value"],
            "gp_hyperparameters": record["gp_hyperparameters"],
            "wall_time": record["wall_time"],
        }
        hist.write(_dump_line(rec) + "\n")
        hist.flush()
        writer.writerows(_trajectory_rows(n, obs.info["trajectory"]))
        traj_fh.flush()
        if progress is not None:
            progress(rec)

    try:
        bo = BayesOpt(cfg.bo, exp.shape.n_params, exp.observe, callback)
        state = bo.run()
    finally:
        hist.close()
        traj_fh.close()
    inc = state.incumbent_query
    write_theta(inc.theta, out / "incumbent_theta.json")
    summary = {
        "layout_version": LAYOUT_VERSION,
        "n_records": len(state.history),
        "incumbent_index": state.incumbent,
        "incumbent_g0": inc.obs.g0,
        "incumbent_g1": inc.obs.constraints[0],
        "incumbent_g2": inc.obs.constraints[1],
        "incumbent_feasible": inc.obs.feasible,
        "feasible_fraction": sum(q.obs.feasible for q in state.history) / len(state.history),
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return state


def read_history(run_dir) -> list[dict]:
    path = Path(run_dir) / "history.jsonl"
    records = []
    try:
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"corrupt run log {path}, line {lineno}: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read run log {path}: {exc}") from exc
    return records


def load_run(run_dir):
    """Configuration snapshot and history records of a run directory."""
    run_dir = Path(run_dir)
    try:
        cfg = ExperimentConfig.load(run_dir / "config.json")
    except OSError as exc:
        raise ConfigError(f"cannot read run config: {exc}") from exc
    records = read_history(run_dir)
    if not records:
        raise ConfigError(f"run log {run_dir} has no records")
    return cfg, records


def incumbent_from_run(run_dir) -> np.ndarray:
    _, records = load_run(run_dir)
    idx = records[-1]["incumbent_index"]
    return np.asarray(records[idx]["theta"], dtype=float)


def simulate(cfg: ExperimentConfig, theta, csv_path=None) -> EpisodeResult:
    exp = Experiment(cfg)
    res = exp.episode(theta)
    if csv_path is not None:
        write_trajectory_csv(res.trajectory, csv_path)
    return res


def export_plots(run_dir, out_dir=None) -> dict:
    """Write the plot-data bundle of a run; returns the written paths by role."""
    run_dir = Path(run_dir)
    cfg, records = load_run(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir / "plots"
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    src = run_dir / "trajectories.csv"
    if not src.exists():
        raise ConfigError(f"run {run_dir} has no trajectories.csv")
    dst = out / "queried_trajectories.csv"
    dst.write_bytes(src.read_bytes())
    paths["queried"] = dst

    exp = Experiment(cfg)
    nominal = exp.episode(np.zeros(exp.shape.n_params))
    paths["nominal"] = out / "nominal.csv"
    write_trajectory_csv(nominal.trajectory, paths["nominal"])

    idx = records[-1]["incumbent_index"]
    theta = np.asarray(records[idx]["theta"], dtype=float)
    incumbent = exp.episode(theta)
    paths["incumbent"] = out / "incumbent.csv"
    write_trajectory_csv(incumbent.trajectory, paths["incumbent"])
    paths["incumbent_jstar"] = out / "incumbent_jstar.csv"
    with open(paths["incumbent_jstar"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "t", "jstar"])
        for k, j in enumerate(incumbent.trajectory.jstar):
            w.writerow([k, repr(k * cfg.Ts), repr(float(j))])
    return paths


def ensure_writable(path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if not os.access(path, os.W_OK):
        raise ConfigError(f"output directory {path} is not writable")
