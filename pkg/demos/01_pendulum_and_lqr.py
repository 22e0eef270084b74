"""Upright double pendulum: open-loop instability, Riccati feedback, and an
MPC with the quadratic cost that reproduces it."""

import numpy as np

from lyapmpc.dynamics import X_UPRIGHT, linearize, make_model
from lyapmpc.mpc import OCPConfig, mpc_policy
from lyapmpc.neural_cost import CostWeights, NetworkShape, lqr_gain, solve_dare

lin = linearize()
print("open-loop spectral radius at the upright pose:", np.abs(np.linalg.eigvals(lin.A)).max())

Q = np.diag([10.0, 10.0, 0.1, 0.1])
R = np.array([[0.01]])
P = solve_dare(lin.A, lin.B, Q, R)
K = lqr_gain(lin.A, lin.B, R, P)
print("LQR gain:", K.round(3))
print("closed-loop spectral radius:", np.abs(np.linalg.eigvals(lin.A - lin.B @ K)).max())

# with a zero network and the Riccati terminal weight the MPC is the LQR
model = make_model("linearized")
w = CostWeights(Q, R, P, X_UPRIGHT)
shape = NetworkShape((4, 5, 1))
x = X_UPRIGHT + np.array([0.08, -0.05, 0.0, 0.1])
u_mpc, j_star, _, _ = mpc_policy(x, np.zeros(shape.n_params), model, w, shape, OCPConfig(N=30))
print(f"MPC input {u_mpc:.6f}  LQR input {float((-K @ (x - X_UPRIGHT))[0]):.6f}  J* {j_star:.4f}")

# the same controller on the nonlinear plant
plant = make_model("true")
warm = None
for k in range(40):
    u, j, warm, _ = mpc_policy(x, np.zeros(shape.n_params), model, w, shape, OCPConfig(), warm)
    x = plant.step(x, u)
    if k % 10 == 9:
        print(f"k={k + 1:2d}  |x - x_d|_inf = {np.abs(x - X_UPRIGHT).max():.2e}  J* = {j:.4f}")
