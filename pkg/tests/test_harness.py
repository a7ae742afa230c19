import math

import numpy as np
import pytest

from deepsplit import harness
from deepsplit.harness import (ConfigError, ExperimentConfig, ResultRow, aggregate,
                               compute_reference, config_from_mapping, emit_report, load_config,
                               read_rows, run_experiment)
from deepsplit.problems import build_preset


def _cfg(tmp_path, **kw):
    base = dict(preset="constant", overrides={"d": 3, "M": 40}, runs=2, seed=1,
                output_dir=str(tmp_path))
    base.update(kw)
    return ExperimentConfig(**base)


def test_aggregate_uses_uncorrected_std():
    mean, std, rel, rel_std = aggregate([1.0, 3.0], 2.0)
    assert (mean, std, rel, rel_std) == (2.0, 1.0, 0.5, 0.0)
    mean, std, rel, rel_std = aggregate([0.9, 1.2, 1.0], -1.0)
    assert rel == pytest.approx((1.9 + 2.2 + 2.0) / 3)


def test_constant_experiment_and_outputs(tmp_path):
    row = run_experiment(_cfg(tmp_path, overrides={"d": 3}, runs=1))
    assert row.rel_l1_error <= 0.01 and not row.partial and row.runs == 1
    assert (row.d, row.T, row.N, row.reference) == (3, 0.3, 2, 1.0)
    folder = tmp_path / "constant_d3_T0.3_N2" / "seed1_run0"
    assert sorted(p.name for p in folder.iterdir()) == ["losses.csv", "step0001.snap",
                                                       "step0002.snap"]
    written = read_rows((tmp_path / "constant_d3_T0.3_N2_seed1.csv").read_text())
    assert written[0].expectation == row.expectation


def test_runs_are_order_independent(tmp_path):
    a = run_experiment(_cfg(tmp_path, runs=3, save_snapshots=False))
    b = run_experiment(_cfg(tmp_path, runs=3, save_snapshots=False))
    assert a.values == b.values
    assert (a.expectation, a.std_dev, a.rel_l1_error) == (b.expectation, b.std_dev, b.rel_l1_error)
    single = harness._one_run(_cfg(tmp_path), 2)
    assert single.value == a.values[2]
    assert len(set(a.values)) == 3


def test_parallel_runs_match_serial(tmp_path):
    serial = run_experiment(_cfg(tmp_path, save_snapshots=False))
    parallel = run_experiment(_cfg(tmp_path, save_snapshots=False, threads=2))
    assert serial.values == parallel.values


def test_failed_runs_make_partial_row(tmp_path):
    row = run_experiment(_cfg(tmp_path, overrides={"d": 2, "M": 3, "c": 1e7}, runs=2,
                              save_snapshots=False))
    assert row.partial and row.runs == 0 and len(row.failures) == 2
    assert math.isnan(row.expectation)
    assert "exceeds" in row.failures[0]


def test_target_statistics_option(tmp_path):
    running = run_experiment(_cfg(tmp_path, runs=1, save_snapshots=False,
                                  target_statistics="running"))
    batch = run_experiment(_cfg(tmp_path, runs=1, save_snapshots=False))
    assert running.values != batch.values
    with pytest.raises(ConfigError):
        _cfg(tmp_path, target_statistics="other")


def test_report_roundtrip_and_sorting():
    rows = [ResultRow(100, 0.3, n, 0.3 + 1e-3 * n, 1e-3, 0.31674, 0.01 / n, 1e-4, 12.5,
                      "heat", 5, False) for n in (16, 1, 4)]
    text = emit_report(rows, "csv")
    lines = text.splitlines()
    assert lines[0] == ",".join(harness.REPORT_COLUMNS)
    back = read_rows(text)
    assert emit_report(back, "csv") == text
    assert [r.N for r in back] == [1, 4, 16]
    for r in back:
        orig = next(o for o in rows if o.N == r.N)
        assert r == orig
    md = emit_report(rows, "markdown").strip().splitlines()
    assert len(md) == 2 + 3
    assert md[0].startswith("| d | T | N | Expectation | Std. dev. | Ref. value | rel. L1-error")
    with pytest.raises(ValueError):
        emit_report([], "csv")
    with pytest.raises(ValueError):
        emit_report(rows, "xml")
    with pytest.raises(ValueError):
        read_rows("a,b\n1,2\n")


def test_report_plain_decimal():
    row = ResultRow(10, 1 / 3, 8, 1234567.5, 0.1, 1.5e-7, 0.2, 0.0, 3.0, "hjb", 1, True)
    text = emit_report([row])
    assert "1234567.5" in text and ",true" in text and ";" not in text


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig("nope")
    with pytest.raises(ConfigError):
        ExperimentConfig("heat", runs=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("heat", overrides={"width": 2.5})
    with pytest.raises(ConfigError):
        ExperimentConfig("heat", overrides={"colour": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig("heat", reference="tabulated")
    cfg = ExperimentConfig("heat", overrides={"T": "1/3", "breakpoints": "3,4,5"}, reference="0.5")
    assert cfg.overrides == {"T": 1 / 3, "breakpoints": (3, 4, 5)} and cfg.reference == 0.5
    with pytest.raises(ConfigError):
        run_experiment(ExperimentConfig("heat", overrides={"T": 0.5, "M": 3}, runs=1,
                                        output_dir=str(tmp_path)))


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(harness.OUTPUT_ENV, str(tmp_path / "env"))
    assert ExperimentConfig("heat").resolved_output_dir() == tmp_path / "env"
    assert ExperimentConfig("heat", output_dir="x").resolved_output_dir().name == "x"


def test_load_config_file(tmp_path):
    path = tmp_path / "exp.ini"
    path.write_text("[experiment]\npreset = heat\nruns = 3\ntruncate_paths = yes\n"
                    "target_statistics = running\n"
                    "[overrides]\nd = 100\nN = 4\n[oracle]\nn_r = 500\n")
    cfg = load_config(path, runs=5, N=None)
    assert cfg.runs == 5 and cfg.truncate_paths and cfg.overrides == {"d": 100, "N": 4}
    assert cfg.oracle_settings == {"n_r": 500} and cfg.target_statistics == "running"
    path.write_text("[experiment]\npreset = heat\n[extras]\na = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    path.write_text("[experiment]\npreset = heat\nflavour = 1\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError):
        config_from_mapping({"runs": 2})


def test_reference_resolution():
    cfg = ExperimentConfig("heat", overrides={"d": 2, "M": 3}, reference="oracle",
                           oracle_settings={"n_r": 400, "n_t": 200})
    value = harness.resolve_reference(cfg, cfg.build())
    assert value == pytest.approx(compute_reference(build_preset("heat", d=2), n_r=400, n_t=200)[0])
    assert harness.resolve_reference(ExperimentConfig("heat"), build_preset("heat")) == 0.47006


def test_compute_reference_dispatch():
    value, err, used = compute_reference(build_preset("heat", d=100))
    assert abs(value - 0.31674) < 5e-4 and err < 1e-5 and used["oracle"] == "radial-fd"
    value, err, used = compute_reference(build_preset("hjb"), samples=20_000)
    assert abs(value - 1.56006) < 5 * err and used["oracle"] == "hjb-mc"
    value, err, _ = compute_reference(build_preset("bs", gamma_low=0.2), samples=20_000)
    assert value == pytest.approx(40.76, rel=2e-3)
    value, _, used = compute_reference(build_preset("allen-cahn", d=1), n_x=200, n_t=200)
    assert used["oracle"] == "grid-fd" and abs(value) < 1e-12
    with pytest.raises(ValueError):
        compute_reference(build_preset("allen-cahn"))
    with pytest.raises(ValueError):
        compute_reference(build_preset("bs"), "linear-bs-mc")
    with pytest.raises(ValueError):
        compute_reference(build_preset("heat"), "hjb-mc")
    with pytest.raises(ValueError):
        compute_reference(build_preset("heat"), "tea-leaves")


def test_n_study_sorted(tmp_path):
    rows = harness.n_study("constant", Ns=(3, 1, 2), overrides={"d": 2, "M": 20}, runs=1,
                           output_dir=str(tmp_path), save_snapshots=False)
    assert [r.N for r in rows] == [1, 2, 3]
    assert all(np.isfinite(r.expectation) for r in rows)
