"""Quadratic stage cost with a feedforward-network correction, and the
Riccati terminal weight.

Parameter vectors are flat and ordered layer by layer: for each layer the
weight matrix in row-major order (shape ``(n_out, n_in)``), then its bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class NetworkShape:
    layer_sizes: tuple[int, ...] = (4, 5, 1)
    activation: str = "tanh"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        object.__setattr__(self, "layer_sizes", sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"invalid layer sizes {sizes}")
        if sizes[-1] != 1:
            raise ValueError("network output size must be 1")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    @property
    def n_params(self) -> int:
        return count_params(self)


def count_params(shape: NetworkShape) -> int:
    s = shape.layer_sizes
    return sum((s[i - 1] + 1) * s[i] for i in range(1, len(s)))


def unflatten(theta, shape: NetworkShape) -> list[tuple[np.ndarray, np.ndarray]]:
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size != shape.n_params:
        raise ValueError(
            f"parameter vector has length {theta.size}, expected n_p = {shape.n_params} "
            f"for layers {shape.layer_sizes}"
        )
    layers, pos = [], 0
    s = shape.layer_sizes
    for i in range(1, len(s)):
        n_in, n_out = s[i - 1], s[i]
        W = theta[pos : pos + n_in * n_out].reshape(n_out, n_in)
        pos += n_in * n_out
        b = theta[pos : pos + n_out]
        pos += n_out
        layers.append((W, b))
    return layers


def flatten(layers) -> np.ndarray:
    parts = []
    for W, b in layers:
        parts.append(np.asarray(W, dtype=float).ravel())
        parts.append(np.asarray(b, dtype=float).ravel())
    return np.concatenate(parts)


def nn_forward(x, theta, shape: NetworkShape) -> float:
    """Network output: tanh on hidden layers, affine output layer."""
    z = np.asarray(x, dtype=float)
    layers = unflatten(theta, shape)
    for W, b in layers[:-1]:
        z = np.tanh(W @ z + b)
    W, b = layers[-1]
    return float((W @ z + b)[0])


def nn_param_gradient(x, theta, shape: NetworkShape) -> np.ndarray:
    """Gradient of :func:`nn_forward` with respect to the flat parameters."""
    z = np.asarray(x, dtype=float)
    layers = unflatten(theta, shape)
    acts = [z]
    for W, b in layers[:-1]:
        z = np.tanh(W @ z + b)
        acts.append(z)
    grads = []
    delta = np.ones(1)
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        grads.append((np.outer(delta, acts[i]), delta.copy()))
        if i > 0:
            delta = (W.T @ delta) * (1.0 - acts[i] ** 2)
    return flatten(grads[::-1])


@dataclass(frozen=True)
class CostWeights:
    """Stage weights ``Q``, ``R``, terminal weight ``P`` and the set-point."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    x_d: np.ndarray
    u_d: float = 0.0

    def __post_init__(self):
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "x_d", np.asarray(self.x_d, dtype=float))
        object.__setattr__(self, "u_d", float(self.u_d))
        tol = 1e-10
        for name, M in (("Q", Q), ("P", P)):
            if np.linalg.eigvalsh(0.5 * (M + M.T)).min() < -tol * max(1.0, np.abs(M).max()):
                raise ValueError(f"{name} must be positive semidefinite")
        try:
            np.linalg.cholesky(0.5 * (R + R.T))
        except np.linalg.LinAlgError:
            raise ValueError("R must be positive definite") from None


def stage_cost_quadratic(x, u, w: CostWeights) -> float:
    dx = np.asarray(x, dtype=float) - w.x_d
    du = np.atleast_1d(float(u) - w.u_d)
    return float(dx @ w.Q @ dx + du @ w.R @ du)


def stage_cost_param(x, u, theta, w: CostWeights, shape: NetworkShape) -> float:
    """Quadratic cost plus the network correction, zero at the set-point."""
    return (
        stage_cost_quadratic(x, u, w)
        + nn_forward(x, theta, shape)
        - nn_forward(w.x_d, theta, shape)
    )


def terminal_cost(x_N, P, x_d) -> float:
    dx = np.asarray(x_N, dtype=float) - np.asarray(x_d, dtype=float)
    return float(dx @ np.atleast_2d(P) @ dx)


class RiccatiError(RuntimeError):
    pass


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 10000) -> np.ndarray:
    """Solve the discrete algebraic Riccati equation by value iteration from ``P = Q``.

    Raises
    ------
    RiccatiError
        If the sup-norm change does not fall below ``tol`` within ``max_iter``.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    P = Q.copy()
    for _ in range(max_iter):
        BtP = B.T @ P
        gain = np.linalg.solve(R + BtP @ B, BtP @ A)
        P_next = A.T @ P @ A - A.T @ P @ B @ gain + Q
        P_next = 0.5 * (P_next + P_next.T)
        if not np.all(np.isfinite(P_next)):
            raise RiccatiError("Riccati iteration diverged")
        if np.abs(P_next - P).max() < tol:
            return P_next
        P = P_next
    raise RiccatiError(f"Riccati iteration did not converge in {max_iter} iterations")


def dare_residual(P, A, B, Q, R) -> np.ndarray:
    A, B, Q, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, Q, R))
    BtPA = B.T @ P @ A
    return A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q - P


def lqr_gain(A, B, R, P) -> np.ndarray:
    """State-feedback gain ``K = (R + B'PB)^-1 B'PA``."""
    A, B, R = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (A, B, R))
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
