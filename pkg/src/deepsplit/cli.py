"""Command-line interface.

Exit status: 0 on success, 1 on invalid input (bad flags, unknown presets,
malformed config files), 2 when a computation fails.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from . import harness
from .checks import run_quick_checks
from .oracles import OracleError
from .problems import PRESETS, build_preset
from .sde import GridError, SimulationError
from .training import SolveError, TrainingError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _add_overrides(p):
    g = p.add_argument_group("preset overrides")
    g.add_argument("--d", type=int)
    g.add_argument("--T", type=str, help="horizon, e.g. 0.3 or 1/3")
    g.add_argument("--N", type=int)
    g.add_argument("--M", type=int, help="gradient steps per time step")
    g.add_argument("--width", type=int)
    g.add_argument("--breakpoints", type=str, help="comma-separated learning-rate breakpoints")
    g.add_argument("--gamma-high", dest="gamma_high", type=float)
    g.add_argument("--gamma-low", dest="gamma_low", type=float)


def _add_experiment(p):
    p.add_argument("--config", type=Path, help="INI experiment file; flags override it")
    p.add_argument("--preset", choices=None, help=f"one of {', '.join(PRESETS)}")
    p.add_argument("--runs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--reference", help="'paper', 'oracle' or a number")
    p.add_argument("--threads", type=int, help="worker processes for independent runs")
    p.add_argument("--truncate-paths", dest="truncate_paths", action="store_const", const=True,
                   help="simulate each batch only up to the grid index it uses")
    p.add_argument("--no-snapshots", dest="save_snapshots", action="store_const", const=False)
    p.add_argument("--target-statistics", dest="target_statistics", choices=("batch", "running"),
                   help="normalization statistics of the frozen network in the targets")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    _add_overrides(p)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="deepsplit", description="Deep splitting solver for semilinear PDEs.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="run one multi-run experiment")
    _add_experiment(p)

    p = sub.add_parser("nstudy", help="sweep the number of time steps")
    _add_experiment(p)
    p.add_argument("--Ns", default="1,2,4,8,16", help="comma-separated step counts")

    p = sub.add_parser("reference", help="compute an oracle reference value")
    p.add_argument("--oracle", choices=("hjb-mc", "radial-fd", "grid-fd", "linear-bs-mc"))
    p.add_argument("--preset", required=True)
    p.add_argument("--samples", type=int, help="Monte Carlo sample count")
    p.add_argument("--oracle-seed", dest="oracle_seed", type=int)
    p.add_argument("--n-r", dest="n_r", type=int)
    p.add_argument("--n-x", dest="n_x", type=int)
    p.add_argument("--n-t", dest="n_t", type=int)
    p.add_argument("--r-max", dest="r_max", type=float)
    _add_overrides(p)

    p = sub.add_parser("report", help="merge result CSV files into one table")
    p.add_argument("files", nargs="+", type=Path)
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")

    sub.add_parser("check", help="run the fast property checks")
    return parser


def _overrides(args):
    keys = ("d", "T", "N", "M", "width", "breakpoints", "gamma_high", "gamma_low")
    return {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}


def _experiment(args) -> harness.ExperimentConfig:
    flags = dict(preset=args.preset, runs=args.runs, seed=args.seed, output_dir=args.output_dir,
                 reference=args.reference, threads=args.threads,
                 truncate_paths=args.truncate_paths, save_snapshots=args.save_snapshots,
                 target_statistics=args.target_statistics)
    flags.update(_overrides(args))
    if args.config is not None:
        return harness.load_config(args.config, **flags)
    return harness.config_from_mapping({}, **flags)


def _cmd_solve(args, out):
    row = harness.run_experiment(_experiment(args))
    out.write(harness.emit_report([row], args.format))
    for failure in row.failures:
        print(f"warning: {failure}", file=sys.stderr)
    return 2 if row.partial else 0


def _cmd_nstudy(args, out):
    try:
        Ns = [int(n) for n in args.Ns.split(",")]
    except ValueError:
        raise harness.ConfigError(f"--Ns must be comma-separated integers, got {args.Ns!r}") from None
    if any(n < 1 for n in Ns):
        raise harness.ConfigError("step counts must be positive")
    base = _experiment(args)
    rows = []
    for N in sorted(Ns):
        cfg = harness.ExperimentConfig(
            base.preset, dict(base.overrides, N=N), base.runs, base.seed, base.output_dir,
            base.reference, base.oracle_settings, base.threads, base.truncate_paths,
            base.save_snapshots, base.target_statistics)
        rows.append(harness.run_experiment(cfg))
    rows.sort(key=lambda r: r.N)
    out.write(harness.emit_report(rows, args.format))
    return 2 if any(r.partial for r in rows) else 0


def _cmd_reference(args, out):
    overrides = _overrides(args)
    for key, kind in harness.OVERRIDE_TYPES.items():
        if key in overrides:
            overrides[key] = harness._coerce(key, overrides[key])
    preset = build_preset(args.preset, **overrides)
    settings = {}
    for key, name in (("samples", "samples"), ("oracle_seed", "seed"), ("n_r", "n_r"),
                      ("n_x", "n_x"), ("n_t", "n_t"), ("r_max", "r_max")):
        if getattr(args, key) is not None:
            settings[name] = getattr(args, key)
    value, error, used = harness.compute_reference(preset, args.oracle, **settings)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("preset", "d", "T", "value", "error_estimate", "settings"))
    writer.writerow((preset.name, preset.d, repr(preset.T), repr(value), repr(error),
                     ";".join(f"{k}={v}" for k, v in used.items())))
    return 0


def _cmd_report(args, out):
    rows = []
    for path in args.files:
        rows.extend(harness.read_rows(path.read_text()))
    out.write(harness.emit_report(rows, args.format))
    return 0


def _cmd_check(args, out):
    results = run_quick_checks()
    for r in results:
        out.write(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail} [{r.seconds:.1f}s]\n")
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {"solve": _cmd_solve, "nstudy": _cmd_nstudy, "reference": _cmd_reference,
            "report": _cmd_report, "check": _cmd_check}


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args, out)
    except (harness.ConfigError, GridError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (SolveError, TrainingError, SimulationError, OracleError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RuntimeError, OSError, ArithmeticError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
