"""Finite-horizon optimal control by single shooting over the input sequence.

The problem is solved with a projected BFGS method on the input box; the
gradient comes from an adjoint sweep through the prediction model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .dynamics import U_MAX, U_MIN, DiscreteModel
from .neural_cost import CostWeights, NetworkShape, nn_forward

JSTAR_CAP = 1e9

STATUS_CONVERGED = "converged"
STATUS_MAX_ITER = "max-iter"
STATUS_DIVERGED = "diverged"


@dataclass(frozen=True)
class OCPConfig:
    N: int = 20
    u_min: float = U_MIN
    u_max: float = U_MAX
    tol_kkt: float = 1e-6
    max_iter: int = 200
    warm_start: str = "shift"  # "shift" | "cold"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be >= 1")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be < u_max")
        if self.tol_kkt <= 0:
            raise ValueError("tol_kkt must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.warm_start not in ("shift", "cold"):
            raise ValueError(f"unknown warm-start policy {self.warm_start!r}")


@dataclass
class OCPSolution:
    u_seq: np.ndarray
    x_pred: np.ndarray
    j_star: float
    status: str
    stationarity: float
    iterations: int = 0


class ShootingProblem:
    """The prediction model, cost and network packed into kernel arguments."""

    def __init__(self, model: DiscreteModel, theta, weights: CostWeights, shape: NetworkShape):
        theta = np.ascontiguousarray(theta, dtype=float)
        if theta.size != shape.n_params:
            raise ValueError(f"theta has length {theta.size}, expected n_p = {shape.n_params}")
        if weights.R.shape != (1, 1):
            raise ValueError("only scalar inputs are supported")
        self.model = model
        self.weights = weights
        self.shape = shape
        self.theta = theta
        if model.is_linear:
            lin = model.linear
            self._kind = _kernels.KIND_LINEAR
            self._phys = np.ones(5)
            self._A = np.ascontiguousarray(lin.A, dtype=float)
            self._B = np.ascontiguousarray(lin.B, dtype=float).reshape(4, 1)
            self._x_op = np.ascontiguousarray(lin.x_op, dtype=float)
            self._u_op = float(lin.u_op)
        else:
            self._kind = _kernels.KIND_RK4
            self._phys = model.params.as_array()
            self._A = np.zeros((4, 4))
            self._B = np.zeros((4, 1))
            self._x_op = np.zeros(4)
            self._u_op = 0.0
        self._sizes = np.asarray(shape.layer_sizes, dtype=np.int64)
        self._Q = np.ascontiguousarray(weights.Q)
        self._R = float(weights.R[0, 0])
        self._P = np.ascontiguousarray(weights.P)
        self._x_d = np.ascontiguousarray(weights.x_d)
        self._u_d = float(weights.u_d)
        self._y_d = nn_forward(weights.x_d, theta, shape)

    def _args(self):
        return (
            self._kind, self._phys, float(self.model.Ts), self._A, self._B, self._x_op, self._u_op,
            self.theta, self._sizes, self._Q, self._R, self._P, self._x_d, self._u_d, self._y_d,
        )

    def cost(self, x0, u_seq) -> tuple[float, np.ndarray]:
        u_seq = np.ascontiguousarray(u_seq, dtype=float)
        xs = np.empty((u_seq.size + 1, 4))
        c = _kernels.rollout(np.ascontiguousarray(x0, dtype=float), u_seq, *self._args(), xs)
        return c, xs

    def cost_and_gradient(self, x0, u_seq) -> tuple[float, np.ndarray, np.ndarray]:
        u_seq = np.ascontiguousarray(u_seq, dtype=float)
        xs = np.empty((u_seq.size + 1, 4))
        grad = np.empty(u_seq.size)
        c = _kernels.rollout_with_gradient(
            np.ascontiguousarray(x0, dtype=float), u_seq, *self._args(), xs, grad
        )
        return c, grad, xs

    def gauss_newton_hessian(self, x0, u_seq) -> np.ndarray:
        u_seq = np.ascontiguousarray(u_seq, dtype=float)
        c, xs = self.cost(x0, u_seq)
        H = np.empty((u_seq.size, u_seq.size))
        a = self._args()
        _kernels.gauss_newton_hessian(
            np.ascontiguousarray(x0, dtype=float), u_seq, *a[:7], self._Q, self._R, self._P, xs, H
        )
        return H


def rollout_cost(x_k, u_seq, model, theta, weights, shape) -> tuple[float, np.ndarray]:
    """Total predicted cost of ``u_seq`` from ``x_k`` and the predicted states.

    The cost is ``inf`` when the prediction leaves the finite range.
    """
    return ShootingProblem(model, theta, weights, shape).cost(x_k, u_seq)


def rollout_gradient(x_k, u_seq, model, theta, weights, shape) -> np.ndarray:
    c, grad, _ = ShootingProblem(model, theta, weights, shape).cost_and_gradient(x_k, u_seq)
    if not np.isfinite(c):
        raise FloatingPointError("rollout diverged; gradient undefined")
    return grad


def _projected_gradient(u, g, lo, hi):
    return u - np.clip(u - g, lo, hi)


def _minimize_box(fun, fun_grad, hess, u0, lo, hi, tol, max_iter, history=None):
    """Projected quasi-Newton minimization over the box ``[lo, hi]``.

    The Hessian model starts from ``hess(u)`` and is refined by damped BFGS
    updates; search directions solve the model on the free variables and are
    projected, with Armijo backtracking along the projection arc.

    Returns ``(u, f, status, pg_norm, iterations)``. If ``history`` is a
    list, every accepted objective value is appended to it.
    """
    n = u0.size
    u = np.clip(u0, lo, hi)
    f, g = fun_grad(u)
    if not np.isfinite(f):
        return u, np.inf, STATUS_DIVERGED, np.inf, 0
    if history is not None:
        history.append(f)
    Bk = hess(u)
    fresh = True
    pg = np.abs(_projected_gradient(u, g, lo, hi)).max()
    it = 0
    while it < max_iter:
        if pg <= tol:
            return u, f, STATUS_CONVERGED, pg, it
        it += 1
        eps = min(1e-3 * (hi - lo), pg)
        active = ((u <= lo + eps) & (g > 0)) | ((u >= hi - eps) & (g < 0))
        free = ~active
        d = -g.copy()
        if free.any():
            try:
                L = np.linalg.cholesky(Bk[np.ix_(free, free)])
                d[free] = -np.linalg.solve(L.T, np.linalg.solve(L, g[free]))
            except np.linalg.LinAlgError:
                d[free] = -g[free]
        if active.any():
            d[active] = -g[active] / np.diag(Bk)[active]
        alpha = 1.0
        accepted = False
        for _ in range(50):
            u_new = np.clip(u + alpha * d, lo, hi)
            f_new = fun(u_new)
            if np.isfinite(f_new) and f_new <= f + 1e-4 * (g @ (u_new - u)):
                accepted = True
                break
            alpha *= 0.5
        if not accepted or f_new > f or np.array_equal(u_new, u):
            if fresh:
                status = STATUS_CONVERGED if pg <= tol else STATUS_MAX_ITER
                return u, f, status, pg, it
            Bk = hess(u)
            fresh = True
            continue
        f_new, g_new = fun_grad(u_new)
        s = u_new - u
        y = g_new - g
        Bs = Bk @ s
        sBs = s @ Bs
        sy = s @ y
        if sBs > 0:
            # Powell damping keeps the model positive definite
            if sy < 0.2 * sBs:
                phi = 0.8 * sBs / (sBs - sy)
                y = phi * y + (1.0 - phi) * Bs
                sy = s @ y
            Bk = Bk - np.outer(Bs, Bs) / sBs + np.outer(y, y) / sy
            fresh = False
        u, f, g = u_new, f_new, g_new
        if history is not None:
            history.append(f)
        pg = np.abs(_projected_gradient(u, g, lo, hi)).max()
    status = STATUS_CONVERGED if pg <= tol else STATUS_MAX_ITER
    return u, f, status, pg, it


def solve_ocp(x_k, theta, model, weights, shape, cfg: OCPConfig = OCPConfig(), warm=None,
              problem: ShootingProblem | None = None, history=None) -> OCPSolution:
    """Locally optimal input sequence from state ``x_k``.

    ``warm`` is used as the start point when given (already shifted);
    otherwise the sequence starts at the set-point input. A rollout that is
    non-finite at the start point yields status ``diverged`` and
    ``j_star = JSTAR_CAP``.
    """
    prob = problem if problem is not None else ShootingProblem(model, theta, weights, shape)
    x_k = np.asarray(x_k, dtype=float)
    if warm is None:
        u0 = np.full(cfg.N, weights.u_d)
    else:
        u0 = np.asarray(warm, dtype=float)
        if u0.size != cfg.N:
            raise ValueError(f"warm start has length {u0.size}, expected {cfg.N}")

    def fun(u):
        return prob.cost(x_k, u)[0]

    def fun_grad(u):
        c, grad, _ = prob.cost_and_gradient(x_k, u)
        return c, grad

    def hess(u):
        return prob.gauss_newton_hessian(x_k, u)

    u, f, status, pg, it = _minimize_box(
        fun, fun_grad, hess, u0, cfg.u_min, cfg.u_max, cfg.tol_kkt, cfg.max_iter, history
    )
    if status == STATUS_DIVERGED:
        return OCPSolution(u, np.full((cfg.N + 1, 4), np.nan), JSTAR_CAP, status, np.inf, 0)
    j_star, x_pred = prob.cost(x_k, u)
    return OCPSolution(u, x_pred, float(j_star), status, float(pg), it)


def shift_warm_start(u_seq) -> np.ndarray:
    u_seq = np.asarray(u_seq, dtype=float)
    return np.concatenate([u_seq[1:], u_seq[-1:]])


def mpc_policy(x_k, theta, model, weights, shape, cfg: OCPConfig = OCPConfig(), warm=None,
               problem: ShootingProblem | None = None):
    """First optimal input, optimal value and the warm start for the next step."""
    sol = solve_ocp(x_k, theta, model, weights, shape, cfg, warm, problem)
    new_warm = shift_warm_start(sol.u_seq) if cfg.warm_start == "shift" else None
    return float(sol.u_seq[0]), sol.j_star, new_warm, sol
