"""Reduced-budget run of the unconstrained experiment, then the plot-data
bundle. Takes a couple of minutes."""

import json
import sys
from dataclasses import replace

from lyapmpc.experiment import export_plots, preset, tune

budget = int(sys.argv[1]) if len(sys.argv) > 1 else 20
cfg = preset("unconstrained", seed=0)
cfg = replace(cfg, bo=replace(cfg.bo, budget=budget, include_nominal=True))


def progress(rec):
    print(f"n={rec['n']:3d}  g0={rec['g0']:9.3f}  incumbent={rec['incumbent_value']:9.3f}  "
          f"{rec['wall_time']:.1f}s")


state = tune(cfg, "runs/demo_unconstrained", progress)
print("nominal g0:", state.history[0].obs.g0, " incumbent g0:", state.incumbent_value)
print(json.dumps({k: str(v) for k, v in export_plots("runs/demo_unconstrained").items()}, indent=1))
