"""Command-line front end: ``solve``, ``sweep`` and ``gramian`` on a config file.

Exit status: 0 on success, 1 if the continuation failed (files written so
far are kept), 2 on configuration or output-directory errors.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import RunConfig, parse_config
from .continuation import ContinuationStep, ContinuationTrace, continuation_solve
from .endpoint import controllability_gramian
from .errors import ConfigError
from .extremal import ExtremalLift

log = logging.getLogger(__name__)

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _fmt(x) -> str:
    return "%.17g" % x


def _write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def trajectory_filename(tau: float) -> str:
    return f"trajectory_tau{tau:g}.csv"


def write_trajectory(path: str, lift: ExtremalLift) -> None:
    n = lift.state.values.shape[1]
    header = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"p{i + 1}" for i in range(n)] + ["u"]
    table = np.column_stack([lift.grid.times, lift.state.values, lift.adjoint.values,
                             lift.control.values])
    _write_rows(path, header, ([_fmt(v) for v in row] for row in table))


def _bool(flag: bool) -> str:
    return "true" if flag else "false"


def write_summary(path: str, steps: Sequence[ContinuationStep], n: int) -> None:
    header = ["tau", "cost", "converged", "newton_iters"] + [f"p0_{i + 1}" for i in range(n)]
    rows = ([_fmt(s.tau), _fmt(s.result.lift.cost), _bool(s.result.converged),
             str(s.total_iterations)] + [_fmt(v) for v in s.result.p0] for s in steps)
    _write_rows(path, header, rows)


def _prepare_output(config: RunConfig) -> str:
    out = config.output_dir
    os.makedirs(out, exist_ok=True)
    if not os.access(out, os.W_OK | os.X_OK):
        raise PermissionError(f"output directory {out!r} is not writable")
    return out


def _run(config: RunConfig, taus: Sequence[float]):
    problem = config.build_problem()
    out = _prepare_output(config)
    target = max(taus)

    def on_step(step: ContinuationStep):
        log.info("tau=%g cost=%.6e converged=%s newton=%d", step.tau, step.result.lift.cost,
                 step.result.converged, step.total_iterations)

    trace = continuation_solve(problem, target, None, config.continuation_options(),
                               waypoints=taus, on_step=on_step)
    return problem, out, trace


def _requested(trace: ContinuationTrace, taus: Sequence[float]):
    found = []
    for tau in taus:
        try:
            found.append((tau, trace.at(tau)))
        except KeyError:
            pass
    return found


def run_solve(config: RunConfig) -> int:
    """Continuation to ``tau_target``: summary of every step, trajectory at the end."""
    problem, out, trace = _run(config, [config.tau_target])
    write_summary(os.path.join(out, "summary.csv"), trace.steps, problem.n)
    if trace.steps:
        last = trace.steps[-1]
        write_trajectory(os.path.join(out, trajectory_filename(last.tau)), last.result.lift)
    if not trace.succeeded:
        log.error("continuation failed (reached tau=%s)", trace.taus[-1] if trace.steps else "none")
        return EXIT_FAILED
    return EXIT_OK


def run_sweep(config: RunConfig) -> int:
    """One continuation to max(sweep), recording rows and trajectories at each swept tau."""
    taus = list(config.targets)
    problem, out, trace = _run(config, taus)
    hits = _requested(trace, taus)
    steps = [s for s in trace.steps if any(s.tau == tau for tau, _ in hits)]
    write_summary(os.path.join(out, "summary.csv"), steps, problem.n)
    for s in steps:
        write_trajectory(os.path.join(out, trajectory_filename(s.tau)), s.result.lift)
    if not trace.succeeded:
        log.error("sweep failed before reaching tau=%g", max(taus))
        return EXIT_FAILED
    return EXIT_OK


def run_gramian_check(config: RunConfig) -> int:
    """Controllability Gramian of the converged lift at each swept tau (default: tau = 0)."""
    taus = list(config.sweep) if config.sweep is not None else [0.0]
    problem, out, trace = _run(config, taus)
    rows = []
    for tau, result in _requested(trace, taus):
        lift = result.lift
        rep = controllability_gramian(problem, tau, lift, lift.grid)
        log.info("tau=%g lambda_min=%.6e scaled=%.3e surjective=%s", tau, rep.min_eigenvalue,
                 rep.scaled_min_eigenvalue, rep.surjective)
        rows.append([_fmt(tau), _fmt(rep.min_eigenvalue), _fmt(np.trace(rep.matrix)),
                     _bool(rep.surjective)])
    _write_rows(os.path.join(out, "gramian.csv"), ["tau", "lambda_min", "trace", "surjective"], rows)
    return EXIT_OK if trace.succeeded else EXIT_FAILED


COMMANDS = {"solve": run_solve, "sweep": run_sweep, "gramian": run_gramian_check}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="delayhomotopy",
        description="Delayed optimal control by indirect shooting and homotopy on the delay.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in COMMANDS.items():
        p = sub.add_parser(name, help=func.__doc__.splitlines()[0])
        p.add_argument("config", help="path to a key = value config file")
        p.add_argument("--output-dir", help="override output_dir from the config")
        p.add_argument("--verbose", action="store_true", help="log continuation steps to stderr")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        with open(args.config) as fh:
            config = parse_config(fh.read())
        if args.command == "sweep" and config.sweep is None:
            raise ConfigError("sweep requires a 'sweep' list")
        if args.output_dir is not None:
            config = dataclasses.replace(config, output_dir=args.output_dir)
        return COMMANDS[args.command](config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
