"""PDE problems and the benchmark presets.

A problem is ``u_t = f(x, u, grad u) + <mu(x), grad u> + 1/2 Tr(sigma sigma^T Hess u)``
with ``u(0, .) = phi``. Coefficients are vectorized over a batch: ``mu`` maps
``(J, d) -> (J, d)``, ``sigma(x, w)`` returns the action ``sigma(x) w`` row by
row, ``f(x, y, z)`` returns ``(J,)`` and ``phi``/``grad_phi`` map ``(J, d)`` to
``(J,)``/``(J, d)``. Problems with ``needs_gradient=False`` receive ``z=None``.
"""
from __future__ import annotations

import inspect
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import kernels
from .network import NetworkArchitecture
from .training import TrainingSchedule

SQRT2 = np.sqrt(2.0)
# counter region of each path stream reserved for start-point draws
_START_COUNTER = 1 << 62


@dataclass(frozen=True)
class PointMass:
    point: np.ndarray

    def sample(self, keys, d):
        return np.broadcast_to(np.asarray(self.point, dtype=np.float64), (len(keys), d)).copy()


@dataclass(frozen=True)
class BoxUniform:
    low: np.ndarray
    high: np.ndarray

    def sample(self, keys, d):
        u = kernels.uniform_block(keys, _START_COUNTER, d)
        return self.low + (self.high - self.low) * u


@dataclass(frozen=True, eq=False)
class PdeProblem:
    dim: int
    mu: Callable
    sigma: Callable
    f: Callable
    phi: Callable
    grad_phi: Callable
    start: PointMass | BoxUniform
    label: str = ""
    needs_gradient: bool = True
    # set for mu = 0, sigma = sqrt(2 kappa) Id, radial phi and u-only f
    radial_phi: Callable | None = None
    reaction: Callable | None = None
    kappa: float | None = None


def zero_drift(x):
    return np.zeros_like(x)


def sqrt2_noise(x, w):
    return SQRT2 * w


def _norm(x):
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def _sq_norm(x):
    return np.einsum("ij,ij->i", x, x)


def _point(d, value=0.0):
    return PointMass(np.full(d, float(value)))


# --------------------------------------------------------------------------
# problem constructors

GRAD_CLAMP = 1e6


def hjb_problem(d: int) -> PdeProblem:
    def phi(x):
        return np.sqrt(_norm(x))

    def grad_phi(x):
        r = _norm(x)
        g = np.zeros_like(x)
        nz = r > 0
        g[nz] = x[nz] / (2.0 * r[nz, None] ** 1.5)
        # |grad phi| = 1 / (2 sqrt r) blows up at the origin
        gn = _norm(g)
        big = gn > GRAD_CLAMP
        g[big] *= (GRAD_CLAMP / gn[big])[:, None]
        return g

    def f(x, y, z):
        return -_sq_norm(z)

    return PdeProblem(d, zero_drift, sqrt2_noise, f, phi, grad_phi, _point(d), label="hjb")


BS_PARAMS = dict(delta=2.0 / 3.0, R=0.02, gamma_high=0.2, gamma_low=0.02,
                 v_high=50.0, v_low=70.0, mu_bar=0.02, sigma_bar=0.2)


def black_scholes_problem(d: int, gamma_high: float = 0.2, gamma_low: float = 0.02) -> PdeProblem:
    p = dict(BS_PARAMS, gamma_high=gamma_high, gamma_low=gamma_low)
    slope = (p["gamma_high"] - p["gamma_low"]) / (p["v_high"] - p["v_low"])

    def mu(x):
        return p["mu_bar"] * x

    def sigma(x, w):
        return p["sigma_bar"] * x * w

    def f(x, y, z):
        rate = np.minimum(p["gamma_high"],
                          np.maximum(p["gamma_low"], slope * (y - p["v_high"]) + p["gamma_high"]))
        return -(1.0 - p["delta"]) * rate * y - p["R"] * y

    def phi(x):
        return x.min(axis=1)

    def grad_phi(x):
        g = np.zeros_like(x)
        g[np.arange(len(x)), x.argmin(axis=1)] = 1.0
        return g

    label = "bs" if (gamma_high, gamma_low) == (0.2, 0.02) else "bs-linear"
    return PdeProblem(d, mu, sigma, f, phi, grad_phi, _point(d, 50.0), label=label,
                      needs_gradient=False)


def allen_cahn_problem(d: int) -> PdeProblem:
    def phi(x):
        return np.arctan(x.max(axis=1))

    def grad_phi(x):
        g = np.zeros_like(x)
        idx = x.argmax(axis=1)
        rows = np.arange(len(x))
        g[rows, idx] = 1.0 / (1.0 + x[rows, idx] ** 2)
        return g

    def f(x, y, z):
        return y - y**3

    return PdeProblem(d, zero_drift, sqrt2_noise, f, phi, grad_phi, _point(d),
                      label="allen-cahn", needs_gradient=False)


def _bump(r):
    return 5.0 / (10.0 + 2.0 * r**2)


def _bump_problem(d, reaction, label):
    def phi(x):
        return 5.0 / (10.0 + 2.0 * _sq_norm(x))

    def grad_phi(x):
        return -20.0 * x / ((10.0 + 2.0 * _sq_norm(x)) ** 2)[:, None]

    def f(x, y, z):
        return reaction(y)

    return PdeProblem(d, zero_drift, sqrt2_noise, f, phi, grad_phi, _point(d), label=label,
                      needs_gradient=False, radial_phi=_bump, reaction=reaction, kappa=1.0)


def heat_reaction(y):
    return (1.0 - y**2) / (1.0 + y**2)


def semilinear_heat_problem(d: int) -> PdeProblem:
    return _bump_problem(d, heat_reaction, "heat")


def sine_gordon_problem(d: int) -> PdeProblem:
    return _bump_problem(d, np.sin, "sine-gordon")


def constant_problem(d: int, c: float = 1.0) -> PdeProblem:
    """``f = 0`` and ``phi = c``: the solution is ``c`` everywhere."""
    return PdeProblem(
        d, zero_drift, sqrt2_noise,
        lambda x, y, z: np.zeros(len(x)),
        lambda x: np.full(len(x), float(c)),
        lambda x: np.zeros_like(x),
        _point(d), label="constant", needs_gradient=False,
        radial_phi=lambda r: np.full_like(np.asarray(r, dtype=float), float(c)),
        reaction=lambda y: np.zeros_like(y), kappa=1.0,
    )


def quadratic_heat_problem(d: int) -> PdeProblem:
    """Linear heat equation with ``phi = |x|^2``; ``u(t, x) = |x|^2 + 2 d t``."""
    return PdeProblem(
        d, zero_drift, sqrt2_noise,
        lambda x, y, z: np.zeros(len(x)),
        _sq_norm,
        lambda x: 2.0 * x,
        _point(d), label="heat-moment", needs_gradient=False,
        radial_phi=lambda r: np.asarray(r, dtype=float) ** 2,
        reaction=lambda y: np.zeros_like(y), kappa=1.0,
    )


# --------------------------------------------------------------------------
# presets


def piecewise_rates(M: int, breakpoints, rates) -> np.ndarray:
    """``gamma_m = rates[i]`` for the first ``i`` with ``m <= breakpoints[i]``."""
    if len(breakpoints) != len(rates):
        raise ValueError("breakpoints and rates must have equal length")
    m = np.arange(M)
    idx = np.searchsorted(np.asarray(breakpoints), m, side="left")
    if idx.max(initial=0) >= len(rates):
        raise ValueError(f"breakpoints {tuple(breakpoints)} do not cover M={M}")
    return np.asarray(rates, dtype=np.float64)[idx]


def rescale_breakpoints(breakpoints, M_old, M_new):
    bp = [max(1, round(b * M_new / M_old)) for b in breakpoints]
    bp[-1] = M_new
    return tuple(bp)


@dataclass(eq=False)
class BenchmarkPreset:
    name: str
    problem: PdeProblem
    T: float
    N: int
    schedule: TrainingSchedule
    arch: NetworkArchitecture
    breakpoints: tuple
    rates: tuple
    reference: float | None = None
    reference_source: str = ""
    params: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.problem.dim

    @property
    def start_point(self) -> np.ndarray:
        return np.asarray(self.problem.start.point, dtype=np.float64)


def _preset(name, problem, T, N, M, breakpoints, rates, width, reference, source,
            batch_size=256, params=None):
    rates = tuple(rates)
    schedule = TrainingSchedule.constant_batch(piecewise_rates(M, breakpoints, rates), batch_size)
    arch = NetworkArchitecture(input_dim=problem.dim, width=width)
    return BenchmarkPreset(name, problem, float(T), int(N), schedule, arch, tuple(breakpoints),
                           rates, reference, source, dict(params or {}))


def _schedule_overrides(M_paper, bp_paper, M, breakpoints):
    if breakpoints is not None:
        breakpoints = tuple(int(b) for b in breakpoints)
        M = breakpoints[-1] if M is None else M
        return M, breakpoints
    if M is None:
        return M_paper, bp_paper
    return M, rescale_breakpoints(bp_paper, M_paper, M)


# reference values u(T, xi) reported with the benchmark tables
HJB_REFERENCE = {
    (10, 1): 1.56006, (10, 2): 1.85150, (10, 3): 2.04629,
    (50, 1): 2.38654, (50, 2): 2.83647, (50, 3): 3.13788,
    (100, 1): 2.84696, (100, 2): 3.38450, (100, 3): 3.74471,
    (200, 1): 3.39129, (200, 2): 4.03217, (200, 3): 4.46172,
    (300, 1): 3.75530, (300, 2): 4.46514, (300, 3): 4.94105,
    (500, 1): 4.26900, (500, 2): 5.07618, (500, 3): 5.61735,
    (1000, 1): 5.07876, (1000, 2): 6.03933, (1000, 3): 6.68335,
    (5000, 1): 7.59733, (5000, 2): 9.03466, (5000, 3): 9.99835,
    (10000, 1): 9.03535, (10000, 2): 10.74478, (10000, 3): 11.89099,
}
BS_REFERENCE = {10: 40.7611353, 50: 37.5217732, 100: 36.4084035, 200: 35.4127342,
                300: 34.8747946, 500: 34.2357988, 1000: 33.4358163, 5000: 31.7906594,
                10000: 31.1569116}
AC_REFERENCE = {10: 0.89060, 50: 1.01830, 100: 1.04510, 200: 1.06220, 300: 1.07217,
                500: 1.08124, 1000: 1.09100, 5000: 1.10691, 10000: 1.11402}
HEAT_REFERENCE = {10: 0.47006, 50: 0.34425, 100: 0.31674, 200: 0.30091, 300: 0.29534,
                  500: 0.29095, 1000: 0.28753, 5000: 0.28469, 10000: 0.28433}
SG_REFERENCE = {10: 0.3229470, 50: 0.0993633, 100: 0.0528368, 200: 0.0272410,
                300: 0.0183617, 500: 0.0111071, 1000: 0.0055896, 5000: 0.0011231,
                10000: 0.0005621}


def _hjb_reference(d, T):
    thirds = round(3 * T)
    if abs(3 * T - thirds) > 1e-12:
        return None
    return HJB_REFERENCE.get((d, thirds))


def preset_hjb(d: int = 10, T: float = 1 / 3, N: int | None = None, M: int | None = None,
               breakpoints=None, width: int | None = None) -> BenchmarkPreset:
    if N is None:
        N = max(1, round(24 * T))
    big = d == 10_000
    M_paper, bp = (600, (400, 500, 600)) if big else (500, (300, 400, 500))
    M, bp = _schedule_overrides(M_paper, bp, M, breakpoints)
    return _preset("hjb", hjb_problem(d), T, N, M, bp, (1e-1, 1e-2, 1e-3),
                   width or d + 10, _hjb_reference(d, T), "Cole-Hopf Monte Carlo (Table 1)")


def preset_black_scholes(d: int = 10, T: float = 1 / 3, N: int = 96, M: int | None = None,
                         breakpoints=None, width: int | None = None,
                         gamma_high: float = 0.2, gamma_low: float = 0.02) -> BenchmarkPreset:
    if d <= 100:
        M_paper, bp = 3000, (2500, 2750, 3000)
    else:
        M_paper, bp = 2000, (1500, 1750, 2000)
    M, bp = _schedule_overrides(M_paper, bp, M, breakpoints)
    nonlinear = (gamma_high, gamma_low) == (0.2, 0.02)
    ref = BS_REFERENCE.get(d) if nonlinear and abs(T - 1 / 3) < 1e-12 else None
    return _preset("bs", black_scholes_problem(d, gamma_high, gamma_low), T, N, M, bp,
                   (1e-1, 1e-2, 1e-3), width or d + 10 + (40 if 1 <= d <= 100 else 0),
                   ref, "deep BSDE (Table 2)" if ref else "",
                   params=dict(gamma_high=gamma_high, gamma_low=gamma_low))


def preset_allen_cahn(d: int = 10, T: float = 0.3, N: int = 10, M: int | None = None,
                      breakpoints=None, width: int | None = None) -> BenchmarkPreset:
    M, bp = _schedule_overrides(500, (300, 400, 500), M, breakpoints)
    ref = AC_REFERENCE.get(d) if T == 0.3 else None
    return _preset("allen-cahn", allen_cahn_problem(d), T, N, M, bp, (1e-1, 1e-2, 1e-3),
                   width or d + 10, ref, "multilevel Picard (Table 3)" if ref else "")


def preset_semilinear_heat(d: int = 10, T: float = 0.3, N: int = 20, M: int | None = None,
                           breakpoints=None, width: int | None = None) -> BenchmarkPreset:
    M, bp = _schedule_overrides(500, (300, 400, 500), M, breakpoints)
    ref = HEAT_REFERENCE.get(d) if T == 0.3 else None
    return _preset("heat", semilinear_heat_problem(d), T, N, M, bp, (1e-1, 1e-2, 1e-3),
                   width or d + 10, ref, "multilevel Picard (Table 4)" if ref else "")


def preset_sine_gordon(d: int = 10, T: float = 0.3, N: int = 20, M: int | None = None,
                       breakpoints=None, width: int | None = None) -> BenchmarkPreset:
    M, bp = _schedule_overrides(1000, (250, 500, 750, 1000), M, breakpoints)
    ref = SG_REFERENCE.get(d) if T == 0.3 else None
    return _preset("sine-gordon", sine_gordon_problem(d), T, N, M, bp,
                   (1e-1, 1e-2, 1e-3, 1e-4), width or d + 50, ref,
                   "multilevel Picard (Table 6)" if ref else "")


def preset_constant(d: int = 10, T: float = 0.3, N: int = 2, M: int | None = None,
                    breakpoints=None, width: int | None = None, c: float = 1.0) -> BenchmarkPreset:
    M, bp = _schedule_overrides(200, (120, 160, 200), M, breakpoints)
    return _preset("constant", constant_problem(d, c), T, N, M, bp, (1e-1, 1e-2, 1e-3),
                   width or d + 10, float(c), "exact solution", params=dict(c=c))


PRESETS = {
    "hjb": preset_hjb,
    "bs": preset_black_scholes,
    "allen-cahn": preset_allen_cahn,
    "heat": preset_semilinear_heat,
    "sine-gordon": preset_sine_gordon,
    "constant": preset_constant,
}


def build_preset(name: str, **overrides) -> BenchmarkPreset:
    """Look up a preset by id and apply keyword overrides (``None`` values ignored)."""
    try:
        builder = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    overrides = {k: v for k, v in overrides.items() if v is not None}
    allowed = inspect.signature(builder).parameters
    bad = sorted(set(overrides) - set(allowed))
    if bad:
        raise ValueError(f"preset {name!r} does not accept overrides {bad}")
    return builder(**overrides)
