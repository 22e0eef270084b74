"""Model predictive control with a learned neural stage cost, tuned by
constrained Bayesian optimization on closed-loop double-pendulum episodes."""

from .bayes_opt import BayesOpt, BOConfig, Observation, expected_improvement, penalty_beta, run_bo
from .closed_loop import EpisodeConfig, EpisodeResult, Trajectory, lyapunov_g1, lyapunov_g2, performance_g0, run_episode
from .dynamics import (
    MISMATCHED_PARAMS,
    NOMINAL_PARAMS,
    X_UPRIGHT,
    DiscreteModel,
    PendulumParams,
    continuous_dynamics,
    energy,
    linearize,
    make_model,
    rk4_step,
)
from .experiment import Experiment, ExperimentConfig, preset, simulate, tune
from .gp import GPModel, KernelSpec, fit_gp
from .mpc import OCPConfig, OCPSolution, mpc_policy, solve_ocp
from .neural_cost import CostWeights, NetworkShape, nn_forward, solve_dare

__version__ = "0.1.0"
