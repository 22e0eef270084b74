"""Constrained Bayesian optimization with expected improvement and a
softplus penalty on black-box constraints.

The objective is minimized. Constraints are feasible when equal to zero and
violated when negative, as for the Lyapunov observations of an episode.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import norm

from .gp import GPModel, fit_gp

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BOConfig:
    """Settings of the optimization loop.

    ``seed`` is split with :class:`numpy.random.SeedSequence` into three
    independent streams: initial design, acquisition search and
    hyperparameter restarts (in that order).
    """

    budget: int = 60
    n_init: int = 10
    box_halfwidth: float = 3.0
    constrained: bool = True
    penalty_weight: float = 1.0
    penalty_sharpness: float = 1000.0
    include_nominal: bool = False
    n_candidates: int = 1024
    n_local_candidates: int = 256
    n_refine: int = 8
    refine_steps: int = 32
    gp_restarts: int = 8
    nu: float = 2.5
    objective_transform: str = "none"  # "none" | "log"
    seed: int = 0

    def __post_init__(self):
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.n_init < 2:
            raise ValueError("n_init must be >= 2")
        if self.box_halfwidth <= 0:
            raise ValueError("box half-width must be positive")
        if self.penalty_weight < 0 or self.penalty_sharpness <= 0:
            raise ValueError("penalty weight must be >= 0 and sharpness > 0")
        if self.objective_transform not in ("none", "log"):
            raise ValueError(f"unknown objective transform {self.objective_transform!r}")


@dataclass
class Observation:
    g0: float
    constraints: tuple[float, ...] = ()
    diverged: bool = False
    info: dict = field(default_factory=dict)

    @property
    def feasible(self) -> bool:
        return all(c == 0.0 for c in self.constraints)

    @property
    def violation(self) -> float:
        return -float(sum(min(0.0, c) for c in self.constraints))


@dataclass
class Query:
    theta: np.ndarray
    obs: Observation


@dataclass
class BOState:
    dim: int
    history: list[Query] = field(default_factory=list)
    objective_gp: GPModel | None = None
    constraint_gps: list[GPModel] = field(default_factory=list)
    incumbent: int | None = None

    @property
    def X(self) -> np.ndarray:
        return np.array([q.theta for q in self.history])

    @property
    def incumbent_query(self) -> Query | None:
        return None if self.incumbent is None else self.history[self.incumbent]

    @property
    def incumbent_value(self) -> float:
        return self.history[self.incumbent].obs.g0


def select_incumbent(history: list[Query], constrained: bool) -> int | None:
    """Index of the best query.

    Unconstrained: lowest ``g0``. Constrained: lowest ``g0`` among feasible
    queries, or if there is none the least total violation, ties broken by
    ``g0``. Earlier queries win exact ties.
    """
    if not history:
        return None
    idx = range(len(history))
    if not constrained:
        return min(idx, key=lambda i: history[i].obs.g0)
    feasible = [i for i in idx if history[i].obs.feasible]
    if feasible:
        return min(feasible, key=lambda i: history[i].obs.g0)
    return min(idx, key=lambda i: (history[i].obs.violation, history[i].obs.g0))


def expected_improvement(mean, std, incumbent_value) -> np.ndarray:
    """Expected improvement below ``incumbent_value`` of a Gaussian ``N(mean, std^2)``."""
    mean, std = np.broadcast_arrays(np.asarray(mean, dtype=float), np.asarray(std, dtype=float))
    delta = incumbent_value - mean
    out = np.maximum(delta, 0.0)
    pos = std > 0
    if np.any(pos):
        # cdf and pdf are saturated in double precision beyond |z| = 40
        z = np.clip(np.where(pos, delta / np.where(pos, std, 1.0), 0.0), -40.0, 40.0)
        ei = delta * norm.cdf(z) + std * norm.pdf(z)
        out = np.where(pos, ei, out)
    return np.maximum(out, 0.0)


def penalty_beta(constraint_means, sharpness: float = 1000.0) -> np.ndarray:
    """Softplus penalty ``-sum_i log(exp(-sharpness * mu_i) + 1)``.

    ``constraint_means`` has shape ``(n_constraints,)`` or
    ``(n_constraints, n_points)``.
    """
    mu = np.asarray(constraint_means, dtype=float)
    return -np.logaddexp(0.0, -sharpness * mu).sum(axis=0)


class Acquisition:
    """``EI(theta) + weight * beta(theta)`` on the current surrogates.

    EI is computed in the standardized units of the objective surrogate.
    """

    def __init__(self, state: BOState, cfg: BOConfig):
        self.gp = state.objective_gp
        self.constraint_gps = state.constraint_gps if cfg.constrained else []
        self.weight = cfg.penalty_weight if cfg.constrained else 0.0
        self.sharpness = cfg.penalty_sharpness
        target = _transform(np.array([state.incumbent_value]), cfg.objective_transform)[0]
        self.best = (target - self.gp.y_mean) / self.gp.y_scale

    def __call__(self, X) -> np.ndarray:
        X = np.atleast_2d(X)
        mean, var = self.gp.predict_standardized(X)
        value = expected_improvement(mean, np.sqrt(var), self.best)
        if self.weight > 0 and self.constraint_gps:
            mus = np.array([gp.predict(X)[0] for gp in self.constraint_gps])
            value = value + self.weight * penalty_beta(mus, self.sharpness)
        return value


def _transform(g0, how: str) -> np.ndarray:
    g0 = np.asarray(g0, dtype=float)
    if how == "log":
        return np.log(np.maximum(g0, 0.0) + 1e-12)
    return g0


def pattern_search(fun, x0, f0, lo, hi, step, n_steps):
    """Compass search: poll ``x +/- step e_j`` in one batch, move to the best
    improving point, otherwise halve the step."""
    x, f = x0.copy(), f0
    d = x.size
    for _ in range(n_steps):
        polls = np.repeat(x[None, :], 2 * d, axis=0)
        polls[np.arange(d), np.arange(d)] += step
        polls[d + np.arange(d), np.arange(d)] -= step
        polls = np.clip(polls, lo, hi)
        vals = fun(polls)
        j = int(np.argmax(vals))
        if vals[j] > f:
            x, f = polls[j], vals[j]
        else:
            step *= 0.5
    return x, f


def propose_next(state: BOState, cfg: BOConfig, rng: np.random.Generator,
                 acquisition: Acquisition | None = None) -> np.ndarray:
    """Maximize the acquisition over the parameter box.

    Candidates are uniform draws over the box plus Gaussian perturbations of
    the incumbent at log-spaced scales; the best few are refined by compass
    search and the best refined point is returned.
    """
    acq = acquisition if acquisition is not None else Acquisition(state, cfg)
    c = cfg.box_halfwidth
    d = state.dim
    cands = rng.uniform(-c, c, size=(cfg.n_candidates, d))
    if cfg.n_local_candidates > 0 and state.incumbent is not None:
        scales = c * np.exp(rng.uniform(np.log(1e-3), np.log(0.3), size=(cfg.n_local_candidates, 1)))
        local = state.history[state.incumbent].theta + scales * rng.standard_normal((cfg.n_local_candidates, d))
        cands = np.vstack([cands, np.clip(local, -c, c)])
    vals = acq(cands)
    order = np.argsort(-vals, kind="stable")[: cfg.n_refine]
    best_x, best_f = cands[order[0]], vals[order[0]]
    for i in order:
        x, f = pattern_search(acq, cands[i], vals[i], -c, c, 0.1 * c, cfg.refine_steps)
        if f > best_f:
            best_x, best_f = x, f
    return np.clip(best_x, -c, c)


Evaluator = Callable[[np.ndarray], Observation]


class BayesOpt:
    """Stateful driver of the optimization loop.

    ``evaluate`` maps a parameter vector to an :class:`Observation`.
    ``callback``, if given, is called with ``(n, query, state, record)``
    after every evaluation (initial design included).
    """

    def __init__(self, cfg: BOConfig, dim: int, evaluate: Evaluator, callback=None):
        self.cfg = cfg
        self.state = BOState(dim)
        self.evaluate = evaluate
        self.callback = callback
        ss = np.random.SeedSequence(cfg.seed)
        init_ss, acq_ss, hyp_ss = ss.spawn(3)
        self.rng_init = np.random.default_rng(init_ss)
        self.rng_acq = np.random.default_rng(acq_ss)
        self.rng_hyp = np.random.default_rng(hyp_ss)
        self._prev_hyper: list = [None, None, None]

    # bookkeeping -----------------------------------------------------
    def _append(self, theta, obs: Observation):
        st = self.state
        st.history.append(Query(np.array(theta, dtype=float), obs))
        st.incumbent = select_incumbent(st.history, self.cfg.constrained)

    def _emit(self, t0: float):
        if self.callback is None:
            return
        st = self.state
        q = st.history[-1]
        record = {
            "n": len(st.history) - 1,
            "theta": [float(v) for v in q.theta],
            "g0": q.obs.g0,
            "constraints": list(q.obs.constraints),
            "diverged": q.obs.diverged,
            "feasible": q.obs.feasible,
            "incumbent_index": st.incumbent,
            "incumbent_value": st.incumbent_value,
            "gp_hyperparameters": self._hyper_summary(),
            "wall_time": time.perf_counter() - t0,
        }
        self.callback(len(st.history) - 1, q, st, record)

    def _hyper_summary(self):
        st = self.state
        out = {}
        if st.objective_gp is not None:
            out["objective"] = st.objective_gp.hyperparameters()
        for i, gp in enumerate(st.constraint_gps, start=1):
            out[f"constraint_{i}"] = gp.hyperparameters()
        return out

    def refit(self):
        st = self.state
        X = st.X
        g0 = _transform([q.obs.g0 for q in st.history], self.cfg.objective_transform)
        st.objective_gp = fit_gp(X, g0, self.cfg.nu, self.cfg.gp_restarts, self.rng_hyp, self._prev_hyper[0])
        self._prev_hyper[0] = (st.objective_gp.kernel, st.objective_gp.noise_var)
        st.constraint_gps = []
        if self.cfg.constrained:
            n_c = len(st.history[0].obs.constraints)
            for i in range(n_c):
                y = [q.obs.constraints[i] for q in st.history]
                prev = self._prev_hyper[1 + i] if 1 + i < len(self._prev_hyper) else None
                gp = fit_gp(X, y, self.cfg.nu, self.cfg.gp_restarts, self.rng_hyp, prev)
                if 1 + i >= len(self._prev_hyper):
                    self._prev_hyper.append(None)
                self._prev_hyper[1 + i] = (gp.kernel, gp.noise_var)
                st.constraint_gps.append(gp)

    # loop ------------------------------------------------------------
    def initialize(self):
        c = self.cfg.box_halfwidth
        design = [self.rng_init.uniform(-c, c, self.state.dim) for _ in range(self.cfg.n_init)]
        if self.cfg.include_nominal:
            design.insert(0, np.zeros(self.state.dim))
        for theta in design:
            t0 = time.perf_counter()
            self._append(theta, self.evaluate(theta))
            self._emit(t0)
        self.refit()

    def step(self) -> Query:
        t0 = time.perf_counter()
        theta = propose_next(self.state, self.cfg, self.rng_acq)
        self._append(theta, self.evaluate(theta))
        self.refit()
        self._emit(t0)
        return self.state.history[-1]

    def run(self) -> BOState:
        if not self.state.history:
            self.initialize()
        for _ in range(self.cfg.budget):
            self.step()
        return self.state


def bo_step(bo: BayesOpt) -> BOState:
    bo.step()
    return bo.state


def run_bo(cfg: BOConfig, dim: int, evaluate: Evaluator, callback=None) -> BOState:
    return BayesOpt(cfg, dim, evaluate, callback).run()
