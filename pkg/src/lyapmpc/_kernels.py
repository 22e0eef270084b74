"""Compiled inner loops for the MPC rollout and its adjoint gradient.

Model kinds: 0 = RK4 on pendulum parameters ``phys = (m1, m2, l1, l2, g)``,
1 = affine model ``(A, B, x_op, u_op)``. The network is described by the
flat parameter vector and an integer array of layer sizes.
"""

import numpy as np
from numba import njit

KIND_RK4 = 0
KIND_LINEAR = 1
FD_STEP = 1e-6


@njit(cache=True)
def pendulum_rhs(x, u, phys, out):
    m1, m2, l1, l2, g = phys[0], phys[1], phys[2], phys[3], phys[4]
    psi1, psi2, w1, w2 = x[0], x[1], x[2], x[3]
    s1 = np.sin(psi1)
    s2 = np.sin(psi2)
    s21 = np.sin(psi2 - psi1)
    c21 = np.cos(psi2 - psi1)
    den1 = (m1 + m2) * l1 - m2 * l1 * c21 * c21
    den2 = (l2 / l1) * den1
    out[0] = w1
    out[1] = w2
    out[2] = (
        m2 * l1 * w1 * w1 * s21 * c21 + m2 * g * s2 * c21 + m2 * l2 * w2 * w2 * s21 - (m1 + m2) * g * s1
    ) / den1 + u
    out[3] = (-m2 * l2 * w2 * w2 * s21 * c21 + (m1 + m2) * (g * s1 * c21 - l1 * w1 * w1 * s21 - g * s2)) / den2


@njit(cache=True)
def rk4(x, u, phys, Ts, out):
    k1 = np.empty(4)
    k2 = np.empty(4)
    k3 = np.empty(4)
    k4 = np.empty(4)
    tmp = np.empty(4)
    pendulum_rhs(x, u, phys, k1)
    for i in range(4):
        tmp[i] = x[i] + 0.5 * Ts * k1[i]
    pendulum_rhs(tmp, u, phys, k2)
    for i in range(4):
        tmp[i] = x[i] + 0.5 * Ts * k2[i]
    pendulum_rhs(tmp, u, phys, k3)
    for i in range(4):
        tmp[i] = x[i] + Ts * k3[i]
    pendulum_rhs(tmp, u, phys, k4)
    for i in range(4):
        out[i] = x[i] + (Ts / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


@njit(cache=True)
def model_step(x, u, kind, phys, Ts, A, B, x_op, u_op, out):
    if kind == KIND_RK4:
        rk4(x, u, phys, Ts, out)
    else:
        for i in range(4):
            acc = x_op[i] + B[i, 0] * (u - u_op)
            for j in range(4):
                acc += A[i, j] * (x[j] - x_op[j])
            out[i] = acc


@njit(cache=True)
def step_jacobian(x, u, kind, phys, Ts, A, B, x_op, u_op, Ax, Bu):
    """Jacobians of the step map; central differences for the RK4 kind."""
    if kind == KIND_LINEAR:
        for i in range(4):
            Bu[i] = B[i, 0]
            for j in range(4):
                Ax[i, j] = A[i, j]
        return
    h = FD_STEP
    xp = np.empty(4)
    fp = np.empty(4)
    fm = np.empty(4)
    for j in range(4):
        for i in range(4):
            xp[i] = x[i]
        xp[j] = x[j] + h
        rk4(xp, u, phys, Ts, fp)
        xp[j] = x[j] - h
        rk4(xp, u, phys, Ts, fm)
        for i in range(4):
            Ax[i, j] = (fp[i] - fm[i]) / (2.0 * h)
    rk4(x, u + h, phys, Ts, fp)
    rk4(x, u - h, phys, Ts, fm)
    for i in range(4):
        Bu[i] = (fp[i] - fm[i]) / (2.0 * h)


@njit(cache=True)
def nn_value_and_input_grad(x, theta, sizes, want_grad, grad_out):
    """Network output at ``x``; writes d(output)/dx into ``grad_out`` if asked."""
    n_layers = sizes.shape[0] - 1
    width = 0
    for i in range(sizes.shape[0]):
        if sizes[i] > width:
            width = sizes[i]
    acts = np.zeros((n_layers + 1, width))
    offsets = np.zeros(n_layers + 1, dtype=np.int64)
    for i in range(sizes[0]):
        acts[0, i] = x[i]
    pos = 0
    for layer in range(n_layers):
        n_in = sizes[layer]
        n_out = sizes[layer + 1]
        offsets[layer] = pos
        for r in range(n_out):
            acc = theta[pos + n_in * n_out + r]
            for c in range(n_in):
                acc += theta[pos + r * n_in + c] * acts[layer, c]
            if layer < n_layers - 1:
                acc = np.tanh(acc)
            acts[layer + 1, r] = acc
        pos += (n_in + 1) * n_out
    y = acts[n_layers, 0]
    if want_grad:
        delta = np.zeros(width)
        delta[0] = 1.0
        for layer in range(n_layers - 1, -1, -1):
            n_in = sizes[layer]
            n_out = sizes[layer + 1]
            base = offsets[layer]
            back = np.zeros(width)
            for c in range(n_in):
                acc = 0.0
                for r in range(n_out):
                    acc += theta[base + r * n_in + c] * delta[r]
                back[c] = acc
            if layer > 0:
                for c in range(n_in):
                    a = acts[layer, c]
                    back[c] *= 1.0 - a * a
            delta = back
        for i in range(sizes[0]):
            grad_out[i] = delta[i]
    return y


@njit(cache=True)
def rollout(x0, u_seq, kind, phys, Ts, A, B, x_op, u_op, theta, sizes, Q, R, P, x_d, u_d, y_d, xs):
    """Simulate the prediction model and return the total cost; ``xs`` gets the states.

    Returns ``inf`` if a predicted state becomes non-finite.
    """
    N = u_seq.shape[0]
    dummy = np.empty(4)
    dx = np.empty(4)
    for i in range(4):
        xs[0, i] = x0[i]
    cost = 0.0
    for k in range(N):
        for i in range(4):
            dx[i] = xs[k, i] - x_d[i]
        q = 0.0
        for i in range(4):
            for j in range(4):
                q += dx[i] * Q[i, j] * dx[j]
        du = u_seq[k] - u_d
        cost += q + R * du * du + nn_value_and_input_grad(xs[k], theta, sizes, False, dummy) - y_d
        model_step(xs[k], u_seq[k], kind, phys, Ts, A, B, x_op, u_op, xs[k + 1])
        for i in range(4):
            if not np.isfinite(xs[k + 1, i]):
                return np.inf
    for i in range(4):
        dx[i] = xs[N, i] - x_d[i]
    for i in range(4):
        for j in range(4):
            cost += dx[i] * P[i, j] * dx[j]
    if not np.isfinite(cost):
        return np.inf
    return cost


@njit(cache=True)
def rollout_with_gradient(x0, u_seq, kind, phys, Ts, A, B, x_op, u_op, theta, sizes, Q, R, P, x_d, u_d, y_d, xs, grad):
    """Cost as in :func:`rollout` plus its gradient w.r.t. ``u_seq`` by a reverse sweep."""
    N = u_seq.shape[0]
    cost = rollout(x0, u_seq, kind, phys, Ts, A, B, x_op, u_op, theta, sizes, Q, R, P, x_d, u_d, y_d, xs)
    if not np.isfinite(cost):
        return np.inf
    lam = np.empty(4)
    new_lam = np.empty(4)
    dx = np.empty(4)
    gy = np.empty(4)
    Ax = np.empty((4, 4))
    Bu = np.empty(4)
    for i in range(4):
        dx[i] = xs[N, i] - x_d[i]
    for i in range(4):
        acc = 0.0
        for j in range(4):
            acc += (P[i, j] + P[j, i]) * dx[j]
        lam[i] = acc
    for k in range(N - 1, -1, -1):
        step_jacobian(xs[k], u_seq[k], kind, phys, Ts, A, B, x_op, u_op, Ax, Bu)
        acc = 2.0 * R * (u_seq[k] - u_d)
        for i in range(4):
            acc += Bu[i] * lam[i]
        grad[k] = acc
        nn_value_and_input_grad(xs[k], theta, sizes, True, gy)
        for i in range(4):
            dx[i] = xs[k, i] - x_d[i]
        for j in range(4):
            acc = gy[j]
            for i in range(4):
                acc += (Q[j, i] + Q[i, j]) * dx[i] + Ax[i, j] * lam[i]
            new_lam[j] = acc
        for j in range(4):
            lam[j] = new_lam[j]
    for k in range(N):
        if not np.isfinite(grad[k]):
            return np.inf
    return cost


@njit(cache=True)
def gauss_newton_hessian(x0, u_seq, kind, phys, Ts, A, B, x_op, u_op, Q, R, P, xs, H):
    """Gauss-Newton Hessian of the quadratic part of the cost w.r.t. ``u_seq``.

    ``xs`` must hold the predicted states of ``u_seq``. Network curvature and
    second derivatives of the step map are left out, so ``H`` is positive
    definite whenever ``R > 0``.
    """
    N = u_seq.shape[0]
    S = np.zeros((4, N))
    S_next = np.zeros((4, N))
    Ax = np.empty((4, 4))
    Bu = np.empty(4)
    for a in range(N):
        for b in range(N):
            H[a, b] = 0.0
        H[a, a] = 2.0 * R
    for k in range(N):
        step_jacobian(xs[k], u_seq[k], kind, phys, Ts, A, B, x_op, u_op, Ax, Bu)
        for i in range(4):
            for c in range(N):
                acc = 0.0
                for j in range(4):
                    acc += Ax[i, j] * S[j, c]
                S_next[i, c] = acc
            S_next[i, k] += Bu[i]
        W = P if k == N - 1 else Q
        # accumulate 2 S' W S for the successor state
        for a in range(k + 1):
            for b in range(a, k + 1):
                acc = 0.0
                for i in range(4):
                    for j in range(4):
                        acc += S_next[i, a] * W[i, j] * S_next[j, b]
                H[a, b] += 2.0 * acc
        for i in range(4):
            for c in range(N):
                S[i, c] = S_next[i, c]
    for a in range(N):
        for b in range(a):
            H[a, b] = H[b, a]
