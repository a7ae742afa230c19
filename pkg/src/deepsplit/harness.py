"""Multi-run experiments, reference values and report tables.

A run ``r`` of an experiment with root seed ``s`` uses the stream
``Stream(s).child("run", r)``, so its value does not depend on which other
runs execute, in which order, or in which process.
"""
from __future__ import annotations

import configparser
import csv
import io
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import oracles
from .problems import build_preset
from .rng import Stream
from .sde import make_grid
from .training import TARGET_STATISTICS, solve

OUTPUT_ENV = "DEEPSPLIT_OUTPUT_DIR"
DEFAULT_OUTPUT = "results"
REPORT_COLUMNS = ("d", "T", "N", "expectation", "std_dev", "reference", "rel_l1_error",
                  "rel_error_std", "avg_runtime", "preset", "runs", "partial")
HEADERS = {
    "d": "d", "T": "T", "N": "N", "expectation": "Expectation", "std_dev": "Std. dev.",
    "reference": "Ref. value", "rel_l1_error": "rel. L1-error",
    "rel_error_std": "Std. dev. rel. error", "avg_runtime": "avg. runtime (s)",
    "preset": "preset", "runs": "runs", "partial": "partial",
}
OVERRIDE_TYPES = {"d": int, "T": float, "N": int, "M": int, "width": int,
                  "breakpoints": tuple, "gamma_high": float, "gamma_low": float, "c": float}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """One experiment: ``runs`` independent solves of a preset.

    ``reference`` is ``"paper"`` (the tabulated value), ``"oracle"`` (computed
    with :func:`compute_reference` and ``oracle_settings``) or a number.
    """

    preset: str
    overrides: dict = field(default_factory=dict)
    runs: int = 10
    seed: int = 0
    output_dir: str | None = None
    reference: str | float = "paper"
    oracle_settings: dict = field(default_factory=dict)
    threads: int = 1
    truncate_paths: bool = False
    save_snapshots: bool = True
    target_statistics: str = "batch"

    def __post_init__(self):
        if int(self.runs) != self.runs or self.runs < 1:
            raise ConfigError(f"runs must be a positive integer, got {self.runs}")
        if int(self.threads) != self.threads or self.threads < 1:
            raise ConfigError(f"threads must be a positive integer, got {self.threads}")
        clean = {}
        for key, value in self.overrides.items():
            if value is None:
                continue
            if key not in OVERRIDE_TYPES:
                raise ConfigError(f"unknown override {key!r}")
            clean[key] = _coerce(key, value)
        self.overrides = clean
        try:
            self.build()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.target_statistics not in TARGET_STATISTICS:
            raise ConfigError(f"target_statistics must be one of {TARGET_STATISTICS}, "
                              f"got {self.target_statistics!r}")
        if isinstance(self.reference, str) and self.reference not in ("paper", "oracle"):
            try:
                self.reference = float(self.reference)
            except ValueError:
                raise ConfigError(f"reference must be 'paper', 'oracle' or a number, "
                                  f"got {self.reference!r}") from None

    def build(self):
        return build_preset(self.preset, **self.overrides)

    def resolved_output_dir(self) -> Path:
        return Path(self.output_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)


def _coerce(key, value):
    kind = OVERRIDE_TYPES[key]
    try:
        if kind is tuple:
            if isinstance(value, str):
                value = value.replace(",", " ").split()
            return tuple(int(v) for v in value)
        if kind is int:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(value, str) and "/" in value:
            num, den = value.split("/")
            return float(num) / float(den)
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"override {key}={value!r} is not a valid {kind.__name__}") from None


@dataclass
class ResultRow:
    d: int
    T: float
    N: int
    expectation: float
    std_dev: float
    reference: float
    rel_l1_error: float
    rel_error_std: float
    avg_runtime: float
    preset: str = ""
    runs: int = 0
    partial: bool = False
    values: tuple = field(default=(), repr=False, compare=False)
    failures: tuple = field(default=(), repr=False, compare=False)


@dataclass
class RunOutcome:
    run: int
    value: float | None
    runtime: float
    error: str | None = None


def aggregate(values, reference: float) -> tuple:
    """Mean, uncorrected std, mean per-run relative error and its uncorrected std."""
    v = np.asarray(values, dtype=np.float64)
    rel = np.abs(v - reference) / abs(reference)
    return float(v.mean()), float(v.std()), float(rel.mean()), float(rel.std())


# --------------------------------------------------------------------------
# references


def compute_reference(preset, oracle: str | None = None, **settings):
    """Reference value of a preset from an independent oracle.

    Returns ``(value, error_estimate, settings)``. The oracle defaults by
    preset: ``hjb`` -> Cole--Hopf Monte Carlo, radial presets -> radial finite
    volumes, ``bs`` with equal default rates -> exact GBM Monte Carlo,
    ``allen-cahn`` with ``d <= 2`` -> grid finite differences.
    """
    problem, d, T = preset.problem, preset.d, preset.T
    if oracle is None:
        if preset.name == "hjb":
            oracle = "hjb-mc"
        elif problem.radial_phi is not None:
            oracle = "radial-fd"
        elif preset.name == "bs" and preset.params.get("gamma_high") == preset.params.get("gamma_low"):
            oracle = "linear-bs-mc"
        elif d <= 2:
            oracle = "grid-fd"
        else:
            raise ValueError(f"no independent oracle for preset {preset.name!r} at d={d}")
    if oracle == "hjb-mc":
        if preset.name != "hjb":
            raise ValueError("the Cole-Hopf oracle applies to the hjb preset only")
        est = oracles.hjb_reference(d, T, preset.start_point, **settings)
        return est.value, est.stderr, dict(oracle=oracle, **settings)
    if oracle == "linear-bs-mc":
        gh, gl = preset.params.get("gamma_high"), preset.params.get("gamma_low")
        if preset.name != "bs" or gh != gl:
            raise ValueError("the linearized pricing oracle needs the bs preset with equal rates")
        est = oracles.linearized_bs_reference(d, T, preset.start_point, gamma=gh, **settings)
        return est.value, est.stderr, dict(oracle=oracle, **settings)
    if oracle == "radial-fd":
        res = oracles.radial_fd_reference(problem, T, **settings)
        return res.value, res.boundary_shift if res.boundary_shift is not None else math.nan, \
            dict(oracle=oracle, **res.settings)
    if oracle == "grid-fd":
        settings.setdefault("box", _default_box(preset))
        res = oracles.grid_fd_reference(problem, T, **settings)
        return res.value, math.nan, dict(oracle=oracle, **res.settings)
    raise ValueError(f"unknown oracle {oracle!r}")


def _default_box(preset):
    c = float(np.mean(preset.start_point))
    half = 8.0 * math.sqrt(2.0 * preset.T) + 4.0
    if preset.name == "bs":
        half = 0.9 * c
    return (c - half, c + half)


def resolve_reference(config: ExperimentConfig, preset) -> float:
    if config.reference == "paper":
        if preset.reference is None:
            raise ConfigError(f"preset {preset.name!r} has no tabulated reference for this "
                              "configuration; use reference = oracle or a number")
        return float(preset.reference)
    if config.reference == "oracle":
        return compute_reference(preset, **config.oracle_settings)[0]
    return float(config.reference)


# --------------------------------------------------------------------------
# experiments


def _tag(preset) -> str:
    return f"{preset.name}_d{preset.d}_T{preset.T:.6g}_N{preset.N}"


def _one_run(config: ExperimentConfig, r: int) -> RunOutcome:
    preset = config.build()
    grid = make_grid(preset.T, preset.N)
    stream = Stream(config.seed).child("run", r)
    start = time.perf_counter()
    try:
        schedule = dataclasses.replace(preset.schedule, target_statistics=config.target_statistics)
        result = solve(preset.problem, grid, schedule, preset.arch, seed=stream,
                       truncate_paths=config.truncate_paths)
        value = float(result.evaluate(grid.N, preset.start_point[None])[0])
    except Exception as exc:  # recorded, the row becomes partial
        return RunOutcome(r, None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}")
    runtime = time.perf_counter() - start
    if config.save_snapshots:
        folder = config.resolved_output_dir() / _tag(preset) / f"seed{config.seed}_run{r}"
        folder.mkdir(parents=True, exist_ok=True)
        for n, snap in enumerate(result.snapshots, start=1):
            (folder / f"step{n:04d}.snap").write_bytes(snap.to_bytes({"step": n, "run": r}))
        with open(folder / "losses.csv", "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(("n", "m", "loss"))
            for n, trace in enumerate(result.losses, start=1):
                out.writerows((n, m, repr(float(x))) for m, x in enumerate(trace))
    return RunOutcome(r, value, runtime)


def run_experiment(config: ExperimentConfig, write: bool = True) -> ResultRow:
    """Execute ``config.runs`` solves and aggregate them into one row."""
    preset = config.build()
    reference = resolve_reference(config, preset)
    run_ids = range(config.runs)
    if config.threads > 1 and config.runs > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.runs)) as pool:
            outcomes = list(pool.map(_one_run, [config] * config.runs, run_ids))
    else:
        outcomes = [_one_run(config, r) for r in run_ids]
    ok = [o for o in outcomes if o.error is None]
    failures = tuple(f"run {o.run}: {o.error}" for o in outcomes if o.error is not None)
    if ok:
        mean, std, rel, rel_std = aggregate([o.value for o in ok], reference)
        runtime = float(np.mean([o.runtime for o in ok]))
    else:
        mean = std = rel = rel_std = runtime = math.nan
    row = ResultRow(preset.d, preset.T, preset.N, mean, std, reference, rel, rel_std, runtime,
                    preset.name, len(ok), len(ok) < config.runs,
                    values=tuple(o.value for o in ok), failures=failures)
    if write:
        out = config.resolved_output_dir()
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{_tag(preset)}_seed{config.seed}.csv").write_text(emit_report([row], "csv"))
    return row


# --------------------------------------------------------------------------
# reports


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_report(rows, fmt: str = "csv") -> str:
    """CSV or markdown table of rows, sorted by ``(preset, d, T, N)``."""
    rows = list(rows)
    if not rows:
        raise ValueError("no rows to report")
    rows.sort(key=lambda r: (r.preset, r.d, r.T, r.N))
    table = [[_fmt(getattr(r, c)) for c in REPORT_COLUMNS] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(REPORT_COLUMNS)
        out.writerows(table)
        return buf.getvalue()
    if fmt in ("markdown", "md"):
        lines = ["| " + " | ".join(HEADERS[c] for c in REPORT_COLUMNS) + " |",
                 "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"]
        lines += ["| " + " | ".join(cells) + " |" for cells in table]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown report format {fmt!r}")


def read_rows(text: str) -> list[ResultRow]:
    """Parse rows written by ``emit_report(..., "csv")``."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != REPORT_COLUMNS:
        raise ValueError("not a result CSV (unexpected header)")
    types = {f.name: f.type for f in fields(ResultRow)}
    rows = []
    for rec in reader:
        kw = {}
        for c in REPORT_COLUMNS:
            kind = types[c]
            if kind in ("int", int):
                kw[c] = int(rec[c])
            elif kind in ("bool", bool):
                kw[c] = rec[c] == "true"
            elif kind in ("str", str):
                kw[c] = rec[c]
            else:
                kw[c] = float(rec[c])
        rows.append(ResultRow(**kw))
    return rows


# --------------------------------------------------------------------------
# configuration files


def load_config(path, **flag_overrides) -> ExperimentConfig:
    """Read an INI experiment file; non-``None`` keyword arguments win over it.

    Sections: ``[experiment]`` (preset, runs, seed, output_dir, reference,
    threads, truncate_paths, save_snapshots, target_statistics), ``[overrides]`` (d, T, N, M,
    width, breakpoints, gamma_high, gamma_low, c) and ``[oracle]`` (keyword
    arguments of the reference oracle).
    """
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(os.fspath(path)):
        raise ConfigError(f"cannot read config file {path}")
    known = {"experiment", "overrides", "oracle"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    overrides = dict(parser["overrides"]) if parser.has_section("overrides") else {}
    oracle = {k: _literal(v) for k, v in parser["oracle"].items()} \
        if parser.has_section("oracle") else {}
    return config_from_mapping(exp, overrides, oracle, **flag_overrides)


def _literal(text):
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return {"true": True, "false": False}.get(text.lower(), text)


def _as_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def config_from_mapping(experiment: dict, overrides: dict | None = None,
                        oracle: dict | None = None, **flags) -> ExperimentConfig:
    exp = dict(experiment)
    over = dict(overrides or {})
    for key, value in flags.items():
        if value is None:
            continue
        if key in OVERRIDE_TYPES:
            over[key] = value
        else:
            exp[key] = value
    allowed = {"preset", "runs", "seed", "output_dir", "reference", "threads",
               "truncate_paths", "save_snapshots", "target_statistics"}
    bad = set(exp) - allowed
    if bad:
        raise ConfigError(f"unknown experiment keys {sorted(bad)}")
    if "preset" not in exp:
        raise ConfigError("no preset given")
    try:
        kw = dict(preset=str(exp["preset"]), overrides=over, oracle_settings=dict(oracle or {}))
        for key in ("runs", "seed", "threads"):
            if key in exp:
                kw[key] = int(exp[key])
        for key in ("truncate_paths", "save_snapshots"):
            if key in exp:
                kw[key] = _as_bool(exp[key])
        if "output_dir" in exp:
            kw["output_dir"] = str(exp["output_dir"])
        if "reference" in exp:
            kw["reference"] = exp["reference"]
        if "target_statistics" in exp:
            kw["target_statistics"] = str(exp["target_statistics"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    return ExperimentConfig(**kw)


def n_study(preset: str, Ns=(1, 2, 4, 8, 16), **kwargs) -> list[ResultRow]:
    """One experiment per number of time steps; rows sorted ascending by ``N``."""
    overrides = dict(kwargs.pop("overrides", {}))
    rows = []
    for N in sorted(int(n) for n in Ns):
        cfg = ExperimentConfig(preset, overrides=dict(overrides, N=N), **kwargs)
        rows.append(run_experiment(cfg))
    return rows
