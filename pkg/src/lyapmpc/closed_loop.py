"""Closed-loop episodes under the MPC policy and their scalar observations.

An episode yields the performance ``g0`` (weighted deviation from the
set-point, lower is better) and two Lyapunov-condition constraints on the
optimal value sequence, ``g1`` (nonnegativity) and ``g2`` (decrease). Both
constraints are nonpositive and equal zero when the condition holds along
the whole trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DiscreteModel, NumericOverflowError
from .mpc import JSTAR_CAP, STATUS_DIVERGED, OCPConfig, ShootingProblem, mpc_policy, solve_ocp
from .neural_cost import CostWeights, NetworkShape

G0_CAP = 1e9
TRAJECTORY_COLUMNS = ("k", "t", "psi1", "psi2", "dpsi1", "dpsi2", "u", "jstar", "status")


@dataclass
class Trajectory:
    states: np.ndarray  # (M+1, 4)
    inputs: np.ndarray  # (M,)
    jstar: np.ndarray  # (M+1,)
    status: list[str] = field(default_factory=list)  # M+1 entries
    Ts: float = 0.05

    @property
    def M(self) -> int:
        return self.inputs.size

    def to_rows(self) -> list[dict]:
        rows = []
        for k in range(self.states.shape[0]):
            x = self.states[k]
            rows.append({
                "k": k,
                "t": k * self.Ts,
                "psi1": x[0], "psi2": x[1], "dpsi1": x[2], "dpsi2": x[3],
                "u": self.inputs[k] if k < self.M else "",
                "jstar": self.jstar[k],
                "status": self.status[k] if k < len(self.status) else "",
            })
        return rows


@dataclass
class EpisodeResult:
    g0: float
    g1: float
    g2: float
    trajectory: Trajectory
    diverged: bool = False

    @property
    def feasible(self) -> bool:
        return self.g1 == 0.0 and self.g2 == 0.0


def performance_g0(traj: Trajectory, V, W, Z, x_d, u_d) -> float:
    """Weighted state deviation over all ``M+1`` states, input deviation over
    the ``M`` applied inputs, plus a terminal state term."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    W = float(np.atleast_2d(W)[0, 0])
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    dx = traj.states - np.asarray(x_d, dtype=float)
    du = traj.inputs - float(u_d)
    state_term = np.einsum("ki,ij,kj->", dx, V, dx)
    input_term = W * float(du @ du)
    terminal = float(dx[-1] @ Z @ dx[-1])
    return float(state_term + input_term + terminal)


def lyapunov_g1(jstar_seq, margins=None) -> float:
    """Sum of negative parts of the optimal values.

    ``margins`` (same length) optionally tightens the condition to
    ``J* >= margin``.
    """
    j = np.asarray(jstar_seq, dtype=float)
    if margins is not None:
        j = j - np.asarray(margins, dtype=float)
    return float(np.minimum(0.0, j).sum())


def lyapunov_g2(jstar_seq, margins=None) -> float:
    """Sum of negative parts of the decrease ``J*(x_k) - J*(x_{k+1})``.

    ``margins`` (length ``M``) optionally requires a decrease of at least
    ``margin[k]`` per step.
    """
    j = np.asarray(jstar_seq, dtype=float)
    dec = -(j[1:] - j[:-1])
    if margins is not None:
        dec = dec - np.asarray(margins, dtype=float)
    return float(np.minimum(0.0, dec).sum())


@dataclass(frozen=True)
class EpisodeConfig:
    M: int = 50
    x0: tuple = (np.pi - 0.6, np.pi + 0.4, 0.0, 0.0)
    lyapunov_margin: float = 0.0

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("episode length M must be >= 1")
        if len(self.x0) != 4:
            raise ValueError("x0 must have four entries")
        if self.lyapunov_margin < 0:
            raise ValueError("lyapunov_margin must be >= 0")


def run_episode(
    theta,
    plant: DiscreteModel,
    prediction_model: DiscreteModel,
    weights: CostWeights,
    shape: NetworkShape,
    cfg: OCPConfig,
    episode: EpisodeConfig = EpisodeConfig(),
    performance_weights=None,
) -> EpisodeResult:
    """Simulate ``M`` steps of the plant under the MPC and score the run.

    ``performance_weights`` is ``(V, W, Z)``; it defaults to the MPC weights
    ``(Q, R, P)``. On divergence (solver or plant) the trajectory is
    truncated, ``g0`` is capped and the constraints are computed on the prefix.
    """
    V, W, Z = performance_weights if performance_weights is not None else (weights.Q, weights.R, weights.P)
    problem = ShootingProblem(prediction_model, theta, weights, shape)
    x = np.asarray(episode.x0, dtype=float)
    states, inputs, jstars, status = [x], [], [], []
    warm = None
    diverged = False
    for _ in range(episode.M):
        u, j, warm, sol = mpc_policy(x, theta, prediction_model, weights, shape, cfg, warm, problem)
        jstars.append(j)
        status.append(sol.status)
        if sol.status == STATUS_DIVERGED:
            diverged = True
            break
        try:
            x_next = plant.step(x, u)
        except NumericOverflowError:
            diverged = True
            break
        inputs.append(u)
        states.append(x_next)
        x = x_next
    if not diverged:
        sol = solve_ocp(x, theta, prediction_model, weights, shape, cfg, warm, problem)
        jstars.append(sol.j_star)
        status.append(sol.status)
        diverged = sol.status == STATUS_DIVERGED

    S = np.array(states)
    U = np.array(inputs, dtype=float)
    Jv = np.array(jstars, dtype=float)
    traj = Trajectory(S, U, Jv, status, prediction_model.Ts)
    dx2 = ((S - weights.x_d) ** 2).sum(1)
    if diverged:
        jv = Jv[: S.shape[0]]
        jv = jv[jv < JSTAR_CAP]
        n = jv.size
        margins = episode.lyapunov_margin * dx2[:n]
        g1 = lyapunov_g1(jv, margins)
        g2 = lyapunov_g2(jv, margins[:-1]) if n > 1 else 0.0
        return EpisodeResult(G0_CAP, g1, g2, traj, diverged=True)
    g0 = min(performance_g0(traj, V, W, Z, weights.x_d, weights.u_d), G0_CAP)
    margins = episode.lyapunov_margin * dx2
    g1 = lyapunov_g1(Jv, margins)
    g2 = lyapunov_g2(Jv, margins[:-1])
    return EpisodeResult(g0, g1, g2, traj)


def write_trajectory_csv(traj: Trajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        for row in traj.to_rows():
            writer.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    states = np.array([[float(r[c]) for c in ("psi1", "psi2", "dpsi1", "dpsi2")] for r in rows])
    inputs = np.array([float(r["u"]) for r in rows if r["u"] != ""])
    jstar = np.array([float(r["jstar"]) for r in rows])
    status = [r["status"] for r in rows]
    Ts = float(rows[1]["t"]) if len(rows) > 1 else 0.05
    return Trajectory(states, inputs, jstar, status, Ts)
