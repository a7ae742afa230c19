"""Desk-scale reproduction of the benchmark tables.

Every test prints one PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated at the end of the session. Runs take hours on one core.
"""
import time

import pytest

from deepsplit.checks import run_quick_checks
from deepsplit.harness import ExperimentConfig, compute_reference, n_study, run_experiment
from deepsplit.problems import build_preset

pytestmark = pytest.mark.acceptance

RUNS = 5
REL_TOL = 0.02
ORACLE_TOL = 5e-4


def _run(tmp_path, preset, reference="paper", oracle_settings=None, **overrides):
    cfg = ExperimentConfig(preset, overrides=overrides, runs=RUNS, seed=0,
                           output_dir=str(tmp_path), reference=reference,
                           oracle_settings=oracle_settings or {}, truncate_paths=True,
                           save_snapshots=False)
    return run_experiment(cfg)


def _describe(row):
    return (f"mean {row.expectation:.6f} +- {row.std_dev:.2e} vs {row.reference:.6f}, "
            f"rel {row.rel_l1_error:.5f}, {row.avg_runtime:.0f} s/run, {row.runs}/{RUNS} runs")


def test_hjb_d10_against_cole_hopf(tmp_path, criterion):
    row = _run(tmp_path, "hjb", reference="oracle", oracle_settings={"samples": 10**7})
    ok = not row.partial and row.rel_l1_error <= REL_TOL and row.avg_runtime <= 300
    assert criterion("1 hjb d=10", ok, _describe(row))


def test_hjb_d100(tmp_path, criterion):
    row = _run(tmp_path, "hjb", d=100, T=1.0)
    assert row.N == 24 and row.reference == 3.74471
    ok = not row.partial and row.rel_l1_error <= REL_TOL and row.avg_runtime <= 1200
    assert criterion("2 hjb d=100 T=1", ok, _describe(row))


def test_allen_cahn_d10(tmp_path, criterion):
    row = _run(tmp_path, "allen-cahn")
    assert (row.N, row.reference) == (10, 0.8906)
    ok = not row.partial and row.rel_l1_error <= REL_TOL
    assert criterion("3 allen-cahn d=10", ok, _describe(row))


@pytest.mark.parametrize("d", [10, 100])
def test_semilinear_heat(tmp_path, criterion, d):
    row = _run(tmp_path, "heat", d=d)
    ok = not row.partial and row.rel_l1_error <= REL_TOL
    assert criterion(f"4 heat d={d}", ok, _describe(row))


@pytest.mark.parametrize("d", [pytest.param(10, marks=pytest.mark.xfail(
    strict=True, reason="oracle differs from the tabulated value by 5.1e-4")), 100])
def test_semilinear_heat_oracle(criterion, d):
    preset = build_preset("heat", d=d)
    value, shift, _ = compute_reference(preset)
    gap = abs(value - preset.reference)
    assert criterion(f"4 heat d={d} oracle", gap <= ORACLE_TOL,
                     f"{value:.6f} vs {preset.reference}, gap {gap:.2e}, boundary shift {shift:.1e}")


def test_sine_gordon_d10(tmp_path, criterion):
    row = _run(tmp_path, "sine-gordon")
    assert (row.N, row.reference) == (20, 0.322947)
    ok = not row.partial and row.rel_l1_error <= REL_TOL
    assert criterion("5 sine-gordon d=10", ok, _describe(row))


def test_sine_gordon_oracle(criterion):
    preset = build_preset("sine-gordon")
    value, shift, _ = compute_reference(preset)
    gap = abs(value - preset.reference)
    assert criterion("5 sine-gordon oracle", gap <= ORACLE_TOL,
                     f"{value:.6f} vs {preset.reference}, gap {gap:.2e}")


def test_time_step_convergence(tmp_path, criterion):
    rows = n_study("heat", Ns=(1, 2, 4, 8, 16), overrides={"d": 100}, runs=RUNS, seed=0,
                   output_dir=str(tmp_path), truncate_paths=True, save_snapshots=False)
    errors = [r.rel_l1_error for r in rows]
    ok = (all(not r.partial for r in rows)
          and all(a > b for a, b in zip(errors, errors[1:]))
          and errors[0] >= 0.04 and errors[-1] <= 0.01)
    detail = ", ".join(f"N={r.N}: {r.rel_l1_error:.5f}" for r in rows)
    assert criterion("6 heat d=100 N-study", ok, detail)


def test_linearized_black_scholes(tmp_path, criterion):
    row = _run(tmp_path, "bs", reference="oracle", oracle_settings={"samples": 10**7},
               gamma_low=0.2, N=24, M=1000)
    ok = not row.partial and row.rel_l1_error <= REL_TOL
    assert criterion("7 linearized bs d=10 N=24", ok, _describe(row))


def test_nonlinear_black_scholes(tmp_path, criterion):
    row = _run(tmp_path, "bs", N=24, M=1000)
    ok = not row.partial and row.rel_l1_error <= 0.05
    assert criterion("7 nonlinear bs d=10 N=24 M=1000 (informative)", ok, _describe(row))


def test_quick_checks(criterion):
    start = time.perf_counter()
    results = run_quick_checks()
    elapsed = time.perf_counter() - start
    failed = [r.name for r in results if not r.passed]
    ok = not failed and elapsed < 120
    assert criterion("8 property checks", ok,
                     f"{len(results) - len(failed)}/{len(results)} passed in {elapsed:.1f} s")
