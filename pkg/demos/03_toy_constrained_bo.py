"""Constrained BO on a two-dimensional toy: minimize |theta|^2 subject to
theta_1 >= 0, observed through min(0, theta_1)."""

import numpy as np

from lyapmpc.bayes_opt import BOConfig, Observation, run_bo


def evaluate(theta):
    return Observation(float(theta @ theta), (min(0.0, float(theta[0])),))


def show(n, query, state, record):
    if n % 10 == 0:
        inc = state.incumbent_query.theta
        print(f"n={n:3d}  incumbent {np.round(inc, 3)}  value {state.incumbent_value:.4f}")


for sharpness in (1000.0, 10.0):
    print(f"penalty sharpness {sharpness}")
    state = run_bo(BOConfig(budget=40, penalty_sharpness=sharpness, seed=0), 2, evaluate, show)
    print("  distance to the optimum:", np.linalg.norm(state.incumbent_query.theta))
