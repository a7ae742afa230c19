"""Fast property checks, shared by the ``check`` subcommand and the test suite.

Each check returns a :class:`CheckResult`; none takes more than a few seconds.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import snapshot
from .network import (BatchNormState, NetworkArchitecture, ParameterVector, forward,
                      grad_params, grad_x, init_params)
from .oracles import grid_fd_reference, radial_fd_reference
from .problems import constant_problem, semilinear_heat_problem, sine_gordon_problem
from .rng import Stream
from .sde import make_grid
from .training import AdamState, TrainingSchedule, adam_step, evaluate, solve

KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _relerr(fd, exact, floor):
    return np.abs(fd - exact) / np.maximum(np.maximum(np.abs(fd), np.abs(exact)), floor)


def _random_instance(rng, d=5, width=7, J=8, activation="relu"):
    arch = NetworkArchitecture(d, width, activation=activation)
    base = init_params(arch, int(rng.integers(2**32)))
    data = base.data + 0.3 * rng.standard_normal(base.data.size)
    params = ParameterVector(arch, data)
    bn = BatchNormState._frozen(0.3 * rng.standard_normal(arch.num_bn_features),
                                rng.uniform(0.5, 2.0, arch.num_bn_features), 10)
    return arch, params, bn, rng.standard_normal((J, d))


def _margin(cache):
    return min(np.abs(op[2]).min() for op in cache.ops if op[0] == "act")


def check_param_gradient(trials: int = 10, coords: int = 100, seed: int = 0) -> CheckResult:
    """``grad_params`` against central differences of ``sum_j u_j V(x_j)``."""
    rng = np.random.default_rng(seed)
    worst, h, done = 0.0, 1e-6, 0
    while done < trials:
        arch, params, bn, x = _random_instance(rng)
        u = rng.standard_normal(len(x))
        _, _, cache = forward(params, bn, x, "train")
        if _margin(cache) < KINK_MARGIN:
            continue
        g = grad_params(cache, u)
        idx = rng.choice(g.size, size=min(coords, g.size), replace=False)
        fd = np.empty(len(idx))
        for i, c in enumerate(idx):
            e = np.zeros(g.size)
            e[c] = h
            up = forward(ParameterVector(arch, params.data + e), bn, x, "train")[0] @ u
            dn = forward(ParameterVector(arch, params.data - e), bn, x, "train")[0] @ u
            fd[i] = (up - dn) / (2 * h)
        worst = max(worst, _relerr(fd, g[idx], 1e-4 * np.abs(g).max()).max())
        done += 1
    return CheckResult("parameter gradient vs finite differences", worst <= 1e-5,
                       f"max relative error {worst:.2e} (tolerance 1e-5)")


def check_input_gradient(trials: int = 20, seed: int = 1) -> CheckResult:
    """``grad_x`` against central differences of the infer-mode network."""
    rng = np.random.default_rng(seed)
    worst, h, done = 0.0, 1e-5, 0
    while done < trials:
        arch, params, bn, x = _random_instance(rng, d=10, width=12, J=6)
        _, _, cache = forward(params, bn, x, "infer")
        if _margin(cache) < KINK_MARGIN:
            continue
        g = grad_x(params, bn, x)
        fd = np.empty_like(x)
        for i in range(x.shape[1]):
            e = np.zeros(x.shape[1])
            e[i] = h
            fd[:, i] = (forward(params, bn, x + e, "infer")[0]
                        - forward(params, bn, x - e, "infer")[0]) / (2 * h)
        worst = max(worst, _relerr(fd, g, 1e-4 * np.abs(g).max()).max())
        done += 1
    return CheckResult("input gradient vs finite differences", worst <= 1e-5,
                       f"max relative error {worst:.2e} (tolerance 1e-5)")


def check_adam_first_step() -> CheckResult:
    g = np.array([3.0, -0.5, 1e-3, -7.0])
    state, theta = adam_step(AdamState.fresh(4), np.zeros(4), g, 0.1)
    expected = -0.1 * g / (np.abs(g) + 1e-8)
    err = np.abs(theta - expected).max()
    return CheckResult("Adam first-step identity", err <= 1e-15 and state.step == 1,
                       f"max deviation {err:.1e}")


def check_batch_norm(seed: int = 2) -> CheckResult:
    """Train-mode normalized features: mean ~ 0 and variance ~ 1 per feature."""
    rng = np.random.default_rng(seed)
    arch = NetworkArchitecture(6, 9)
    params = init_params(arch, 5)
    x = 3.0 + 2.0 * rng.standard_normal((64, 6))
    _, bn_out, cache = forward(params, BatchNormState.fresh(arch), x, "train")
    worst_mean = worst_var = 0.0
    for op in cache.ops:
        if op[0] != "bn":
            continue
        xhat, floored = op[2], op[4]
        live = ~floored
        worst_mean = max(worst_mean, np.abs(xhat.mean(axis=0)).max())
        worst_var = max(worst_var, np.abs(xhat[:, live].var(axis=0) - 1.0).max(initial=0.0))
    ok = worst_mean <= 1e-12 and worst_var <= 1e-10 and bn_out.count == 1 \
        and (bn_out.running_var >= 0).all()
    return CheckResult("batch-norm invariants", ok,
                       f"max |mean| {worst_mean:.1e}, max |var - 1| {worst_var:.1e}")


def check_reversed_grid() -> CheckResult:
    bad = []
    for T, N in [(1.0, 4), (1 / 3, 8), (0.3, 20), (1.0, 24), (2 / 3, 16), (0.1, 7)]:
        g = make_grid(T, N)
        if np.any(g.reversed_times != T - g.forward_times[::-1]):
            bad.append((T, N))
        if g.reversed_times[0] != 0.0 or g.reversed_times[-1] != T:
            bad.append((T, N))
    g = make_grid(1.0, 3, [0.0, 0.5, 0.75, 1.0])
    if not np.array_equal(g.reversed_times, [0.0, 0.25, 0.5, 1.0]):
        bad.append("explicit")
    return CheckResult("reversed-grid identity", not bad, f"violations: {bad}" if bad else "exact")


def _tiny_solve(seed):
    problem = sine_gordon_problem(3)
    grid = make_grid(0.3, 2)
    arch = NetworkArchitecture(3, 8)
    schedule = TrainingSchedule.constant_batch([1e-2] * 20, 32)
    return solve(problem, grid, schedule, arch, seed=seed)


def check_determinism() -> CheckResult:
    a, b = _tiny_solve(11), _tiny_solve(11)
    same = a.to_bytes() == b.to_bytes() and all(
        np.array_equal(x, y) for x, y in zip(a.losses, b.losses))
    return CheckResult("solve determinism under a fixed seed", same,
                       "byte-identical snapshots" if same else "snapshots differ")


def check_snapshot_roundtrip() -> CheckResult:
    result = _tiny_solve(12)
    x = np.random.default_rng(3).standard_normal((17, 3))
    ok = True
    for n, snap in enumerate(result.snapshots, start=1):
        blob = snap.to_bytes({"step": n})
        params, bn, _ = snapshot.loads(blob)
        again = snapshot.dumps(params, bn, {"step": n})
        values = forward(params, bn, x, "infer")[0]
        ok &= blob == again and np.array_equal(values, evaluate(result, n, x))
    return CheckResult("snapshot persistence round-trip", bool(ok),
                       "bit-exact" if ok else "mismatch after reload")


def check_radial_vs_grid() -> CheckResult:
    worst = 0.0
    for problem in (semilinear_heat_problem(1), sine_gordon_problem(1), constant_problem(1, 0.7)):
        radial = radial_fd_reference(problem, 0.3, n_r=800, n_t=400).value
        grid = grid_fd_reference(problem, 0.3, (-8.0, 8.0), n_x=800, n_t=400).value
        worst = max(worst, abs(radial - grid))
    return CheckResult("radial vs grid oracle at d=1", worst <= 1e-3,
                       f"max difference {worst:.1e} (tolerance 1e-3)")


QUICK_CHECKS = (
    check_param_gradient, check_input_gradient, check_adam_first_step, check_batch_norm,
    check_reversed_grid, check_determinism, check_snapshot_roundtrip, check_radial_vs_grid,
)


def run_quick_checks() -> list[CheckResult]:
    results = []
    for fn in QUICK_CHECKS:
        start = time.perf_counter()
        try:
            res = fn()
        except Exception as exc:  # a crash is a failed check
            res = CheckResult(fn.__name__, False, f"{type(exc).__name__}: {exc}")
        res.seconds = time.perf_counter() - start
        results.append(res)
    return results
