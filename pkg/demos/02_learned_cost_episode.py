"""One closed-loop episode of the constrained experiment: nominal cost vs a
random network correction, with the Lyapunov observations."""

import numpy as np

from lyapmpc.closed_loop import write_trajectory_csv
from lyapmpc.experiment import Experiment, preset

exp = Experiment(preset("constrained"))
n_p = exp.shape.n_params
print("network", exp.shape.layer_sizes, "with", n_p, "parameters")

for label, theta in (("nominal", np.zeros(n_p)), ("random", np.random.default_rng(0).uniform(-3, 3, n_p))):
    res = exp.episode(theta)
    j = res.trajectory.jstar
    print(f"{label:8s} g0={res.g0:10.3f}  g1={res.g1:9.3f}  g2={res.g2:9.3f}  "
          f"diverged={res.diverged}  J*(x0)={j[0]:.2f}  J*(x_M)={j[-1]:.3g}")

write_trajectory_csv(exp.episode(np.zeros(n_p)).trajectory, "nominal_episode.csv")
print("wrote nominal_episode.csv")
