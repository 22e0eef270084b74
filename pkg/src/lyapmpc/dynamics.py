"""Double pendulum dynamics, RK4 discretization and linearization.

Angles are measured from the hanging position, so ``(0, 0, 0, 0)`` is the
stable rest pose and ``(pi, pi, 0, 0)`` the upright one. Angles are never
wrapped. The scalar input is the base acceleration and is held constant over
a sampling period.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_X = 4
N_U = 1
U_MIN = -50.0
U_MAX = 50.0
TS_DEFAULT = 0.05

X_UPRIGHT = np.array([np.pi, np.pi, 0.0, 0.0])
X_HANGING = np.zeros(4)

VARIANTS = ("true", "linearized", "mismatched")


class NumericOverflowError(ArithmeticError):
    """Raised when a dynamics evaluation produces non-finite values."""


@dataclass(frozen=True)
class PendulumParams:
    m1: float = 1.0
    m2: float = 1.0
    l1: float = 1.0
    l2: float = 1.0
    g: float = 9.81

    def __post_init__(self):
        for name in ("m1", "m2", "l1", "l2", "g"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise ValueError(f"pendulum parameter {name} must be positive, got {value}")

    def as_array(self) -> np.ndarray:
        return np.array([self.m1, self.m2, self.l1, self.l2, self.g], dtype=float)


NOMINAL_PARAMS = PendulumParams()
MISMATCHED_PARAMS = PendulumParams(m1=2.0, m2=0.5, l1=1.2, l2=1.2)


def _accelerations(psi1, psi2, dpsi1, dpsi2, u, p: PendulumParams):
    m1, m2, l1, l2, g = p.m1, p.m2, p.l1, p.l2, p.g
    s1, s2 = np.sin(psi1), np.sin(psi2)
    delta = psi2 - psi1
    s21, c21 = np.sin(delta), np.cos(delta)
    den1 = (m1 + m2) * l1 - m2 * l1 * c21 * c21
    den2 = (l2 / l1) * den1
    dd1 = (
        m2 * l1 * dpsi1**2 * s21 * c21
        + m2 * g * s2 * c21
        + m2 * l2 * dpsi2**2 * s21
        - (m1 + m2) * g * s1
    ) / den1 + u
    dd2 = (
        -m2 * l2 * dpsi2**2 * s21 * c21
        + (m1 + m2) * (g * s1 * c21 - l1 * dpsi1**2 * s21 - g * s2)
    ) / den2
    return dd1, dd2


def continuous_dynamics(x, u, p: PendulumParams = NOMINAL_PARAMS) -> np.ndarray:
    """Time derivative ``(dpsi1, dpsi2, ddpsi1, ddpsi2)`` of the state."""
    x = np.asarray(x, dtype=float)
    dd1, dd2 = _accelerations(x[0], x[1], x[2], x[3], float(u), p)
    out = np.array([x[2], x[3], dd1, dd2])
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"non-finite state derivative at x={x}, u={u}")
    return out


def rk4_step(x, u, p: PendulumParams = NOMINAL_PARAMS, Ts: float = TS_DEFAULT) -> np.ndarray:
    """One classical Runge-Kutta step of length ``Ts`` with zero-order hold on ``u``."""
    if Ts <= 0:
        raise ValueError("Ts must be positive")
    x = np.asarray(x, dtype=float)
    k1 = continuous_dynamics(x, u, p)
    k2 = continuous_dynamics(x + 0.5 * Ts * k1, u, p)
    k3 = continuous_dynamics(x + 0.5 * Ts * k2, u, p)
    k4 = continuous_dynamics(x + Ts * k3, u, p)
    out = x + (Ts / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError(f"non-finite RK4 successor from x={x}, u={u}")
    return out


def energy(x, p: PendulumParams = NOMINAL_PARAMS) -> float:
    """Total mechanical energy of the unforced point-mass pendulum."""
    psi1, psi2, w1, w2 = np.asarray(x, dtype=float)
    kinetic = (
        0.5 * (p.m1 + p.m2) * p.l1**2 * w1**2
        + 0.5 * p.m2 * p.l2**2 * w2**2
        + p.m2 * p.l1 * p.l2 * w1 * w2 * np.cos(psi1 - psi2)
    )
    potential = -(p.m1 + p.m2) * p.g * p.l1 * np.cos(psi1) - p.m2 * p.g * p.l2 * np.cos(psi2)
    return float(kinetic + potential)


@dataclass(frozen=True)
class LinearModel:
    """Affine model ``x+ = x_op + A (x - x_op) + B (u - u_op)``."""

    A: np.ndarray
    B: np.ndarray
    x_op: np.ndarray
    u_op: float = 0.0

    def step(self, x, u) -> np.ndarray:
        dx = np.asarray(x, dtype=float) - self.x_op
        return self.x_op + self.A @ dx + self.B[:, 0] * (float(u) - self.u_op)


def _central_jacobian(fun, z0: np.ndarray, h: float) -> np.ndarray:
    cols = []
    for i in range(z0.size):
        e = np.zeros_like(z0)
        e[i] = h
        cols.append((fun(z0 + e) - fun(z0 - e)) / (2.0 * h))
    return np.column_stack(cols)


def linearize(
    p: PendulumParams = NOMINAL_PARAMS,
    x_op=X_UPRIGHT,
    u_op: float = 0.0,
    Ts: float = TS_DEFAULT,
    h: float = 1e-6,
) -> LinearModel:
    """Jacobians of the RK4 step map at an equilibrium by central differences.

    Raises
    ------
    ValueError
        If ``(x_op, u_op)`` is not a fixed point of the step map.
    """
    x_op = np.asarray(x_op, dtype=float)
    residual = np.linalg.norm(rk4_step(x_op, u_op, p, Ts) - x_op)
    if residual > 1e-10:
        raise ValueError(f"operating point is not an equilibrium (residual {residual:.3e})")
    z0 = np.concatenate([x_op, [u_op]])
    jac = _central_jacobian(lambda z: rk4_step(z[:N_X], z[N_X], p, Ts), z0, h)
    return LinearModel(A=jac[:, :N_X], B=jac[:, N_X:], x_op=x_op.copy(), u_op=float(u_op))


@dataclass(frozen=True)
class DiscreteModel:
    """Discrete-time step map, either RK4 on pendulum parameters or affine.

    ``params`` is set for the ``true`` and ``mismatched`` variants and
    ``linear`` for the ``linearized`` one.
    """

    variant: str
    Ts: float
    params: PendulumParams | None = None
    linear: LinearModel | None = field(default=None, repr=False)

    def step(self, x, u) -> np.ndarray:
        if self.linear is not None:
            return self.linear.step(x, u)
        return rk4_step(x, u, self.params, self.Ts)

    @property
    def is_linear(self) -> bool:
        return self.linear is not None


def make_model(
    variant: str,
    p_true: PendulumParams = NOMINAL_PARAMS,
    p_estimate: PendulumParams = MISMATCHED_PARAMS,
    Ts: float = TS_DEFAULT,
    x_op=X_UPRIGHT,
    u_op: float = 0.0,
) -> DiscreteModel:
    if variant == "true":
        return DiscreteModel("true", Ts, params=p_true)
    if variant == "mismatched":
        return DiscreteModel("mismatched", Ts, params=p_estimate)
    if variant == "linearized":
        return DiscreteModel("linearized", Ts, linear=linearize(p_true, x_op, u_op, Ts))
    raise ValueError(f"unknown model variant {variant!r}; expected one of {VARIANTS}")
