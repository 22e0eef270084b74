"""Command-line entry point.

Subcommands::

    lyapmpc validate-config  (--config PATH | --preset NAME) [--seed N]
    lyapmpc simulate THETA   (--config PATH | --preset NAME) [--seed N] [--out DIR]
    lyapmpc tune             (--config PATH | --preset NAME) [--seed N] [--out DIR]
    lyapmpc export-plots RUN_DIR [--out DIR]

``THETA`` is ``zero``, a JSON file holding ``{"theta": [...]}`` or
``run:DIR`` for the incumbent of a finished run. On success a JSON summary
is printed on stdout and the exit code is 0; on failure a single JSON line
``{"error": ..., "message": ...}`` goes to stderr and the exit code is
nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .experiment import (
    PRESETS,
    ConfigError,
    Experiment,
    ExperimentConfig,
    ensure_writable,
    export_plots,
    incumbent_from_run,
    load_run,
    preset,
    read_theta,
    simulate,
    tune,
)

EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_NUMERIC = 5


class _Parser(argparse.ArgumentParser):
    """Usage errors become a JSON error line as well."""

    def error(self, message):
        print(json.dumps({"error": "usage", "message": message}, sort_keys=True), file=sys.stderr)
        self.exit(EXIT_USAGE)


def _parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lyapmpc", description="Learned-cost MPC tuned by constrained BO.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, out=True):
        g = sp.add_mutually_exclusive_group(required=True)
        g.add_argument("--config", type=Path, help="experiment configuration (JSON)")
        g.add_argument("--preset", choices=PRESETS, help="built-in experiment")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides the configuration)")
        if out:
            sp.add_argument("--out", type=Path, default=None, help="output directory")

    common(sub.add_parser("validate-config", help="parse and check a configuration"), out=False)
    sp = sub.add_parser("simulate", help="run one closed-loop episode")
    sp.add_argument("theta", help="'zero', a theta JSON file, or run:DIR")
    common(sp)
    common(sub.add_parser("tune", help="run Bayesian optimization"))
    sp = sub.add_parser("export-plots", help="write the plot-data CSV bundle of a run")
    sp.add_argument("run_dir", type=Path)
    sp.add_argument("--out", type=Path, default=None, help="bundle directory (default RUN_DIR/plots)")
    return p


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config is not None else preset(args.preset)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed, bo=replace(cfg.bo, seed=args.seed))
    return cfg


def _theta(source: str, exp: Experiment) -> np.ndarray:
    if source == "zero":
        return np.zeros(exp.shape.n_params)
    if source.startswith("run:"):
        return exp.check_theta(incumbent_from_run(source[4:]))
    return exp.check_theta(read_theta(source))


def _emit(payload: dict) -> None:
    print(json.dumps(payload, sort_keys=True))


def cmd_validate(args) -> int:
    cfg = _config(args)
    Experiment(cfg)
    _emit({"ok": True, "experiment": cfg.experiment, "n_params": cfg.n_params, "seed": cfg.seed})
    return 0


def cmd_simulate(args) -> int:
    cfg = _config(args)
    exp = Experiment(cfg)
    theta = _theta(args.theta, exp)
    out = args.out if args.out is not None else Path(cfg.output_dir)
    ensure_writable(out)
    csv_path = out / "trajectory.csv"
    res = simulate(cfg, theta, csv_path)
    _emit({"g0": res.g0, "g1": res.g1, "g2": res.g2, "diverged": res.diverged,
           "feasible": res.feasible, "trajectory": str(csv_path)})
    return 0


def cmd_tune(args) -> int:
    cfg = _config(args)
    out = args.out if args.out is not None else Path(cfg.output_dir)
    ensure_writable(out)
    state = tune(cfg, out)
    inc = state.incumbent_query
    _emit({"run_dir": str(out), "records": len(state.history), "incumbent_index": state.incumbent,
           "incumbent_g0": inc.obs.g0, "incumbent_feasible": inc.obs.feasible})
    return 0


def cmd_export(args) -> int:
    load_run(args.run_dir)
    if args.out is not None:
        ensure_writable(args.out)
    paths = export_plots(args.run_dir, args.out)
    _emit({k: str(v) for k, v in paths.items()})
    return 0


COMMANDS = {
    "validate-config": cmd_validate,
    "simulate": cmd_simulate,
    "tune": cmd_tune,
    "export-plots": cmd_export,
}


def _fail(kind: str, exc: BaseException, code: int) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except OSError as exc:
        return _fail("io", exc, EXIT_IO)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    except ValueError as exc:
        return _fail("config", exc, EXIT_CONFIG)


if __name__ == "__main__":
    sys.exit(main())
