"""Reference solvers independent of the neural approximation.

``hjb_reference``
    Cole--Hopf transform plus plain Monte Carlo for ``u_t = Lap u - |grad u|^2``.
``radial_fd_reference``
    Radially symmetric problems reduced to one space dimension and solved by
    finite volumes in ``r`` with Crank--Nicolson / Adams--Bashforth stepping.
``grid_fd_reference``
    Tensor-grid finite differences for general problems in one or two dimensions.
``linearized_bs_reference``
    Exact geometric Brownian motion Monte Carlo for the pricing problem with
    equal default rates, where the nonlinearity becomes linear.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import factorized

from .problems import BS_PARAMS
from .rng import Stream

CHUNK = 1 << 16


class OracleError(RuntimeError):
    pass


class McEstimate(NamedTuple):
    value: float
    stderr: float


def _chunks(K):
    for start in range(0, K, CHUNK):
        yield start // CHUNK, min(CHUNK, K - start)


def hjb_reference(d: int, T: float, x=None, samples: int = 10**7, seed: Stream | int = 0,
                  phi=None) -> McEstimate:
    """``-ln E[exp(-phi(x + sqrt(2T) Z))]`` with a delta-method standard error.

    ``phi`` defaults to ``|x|^(1/2)``. The mean of ``exp(-phi)`` is accumulated
    chunk by chunk relative to the running maximum exponent, so it cannot
    underflow.
    """
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    if phi is None:
        def phi(y):
            return np.sqrt(np.sqrt(np.einsum("ij,ij->i", y, y)))
    x = np.zeros(d) if x is None else np.asarray(x, dtype=np.float64)
    stream = Stream(seed)
    shift, s1, s2 = -np.inf, 0.0, 0.0
    scale = np.sqrt(2.0 * T)
    for c, size in _chunks(samples):
        z = stream.child("chunk", c).generator().standard_normal((size, d))
        e = -phi(x + scale * z)
        top = e.max()
        if top > shift:
            s1 *= np.exp(shift - top)
            s2 *= np.exp(2.0 * (shift - top))
            shift = top
        w = np.exp(e - shift)
        s1 += w.sum()
        s2 += (w * w).sum()
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    # d(-ln m) = -dm / m
    return McEstimate(float(-shift - np.log(mean)), float(np.sqrt(var / samples) / mean))


def linearized_bs_reference(d: int, T: float, x=None, samples: int = 10**7,
                            seed: Stream | int = 0, gamma: float = 0.2, **params) -> McEstimate:
    """``exp(-((1 - delta) gamma + R) T) E[min_i X_T^i]`` with exact GBM sampling."""
    if samples < 1000:
        raise ValueError("need at least 1000 samples")
    p = dict(BS_PARAMS, **params)
    x = np.full(d, 50.0) if x is None else np.asarray(x, dtype=np.float64)
    stream = Stream(seed)
    drift = (p["mu_bar"] - 0.5 * p["sigma_bar"] ** 2) * T
    vol = p["sigma_bar"] * np.sqrt(T)
    s1 = s2 = 0.0
    for c, size in _chunks(samples):
        z = stream.child("chunk", c).generator().standard_normal((size, d))
        v = (x * np.exp(drift + vol * z)).min(axis=1)
        s1 += v.sum()
        s2 += (v * v).sum()
    mean = s1 / samples
    var = max(s2 / samples - mean * mean, 0.0)
    disc = np.exp(-((1.0 - p["delta"]) * gamma + p["R"]) * T)
    return McEstimate(float(disc * mean), float(disc * np.sqrt(var / samples)))


# --------------------------------------------------------------------------
# finite differences


@dataclass(frozen=True)
class FdResult:
    value: float
    boundary_shift: float | None
    settings: dict


def _cnab2(L, w0, explicit, T, n_t, frozen):
    """Integrate ``w' = L w + explicit(w)`` with CN/AB2 (first step IMEX Euler).

    Rows flagged in ``frozen`` keep their initial values.
    """
    dt = T / n_t
    n = len(w0)
    free = sp.diags((~frozen).astype(np.float64))
    L = (free @ L).tocsc()
    eye = sp.identity(n, format="csc")
    euler = factorized((eye - dt * L).tocsc())
    implicit = factorized((eye - 0.5 * dt * L).tocsc())
    explicit_half = (eye + 0.5 * dt * L).tocsr()
    mask = ~frozen

    def g(w):
        out = np.zeros(n)
        out[mask] = explicit(w)[mask]
        return out

    w = np.array(w0, dtype=np.float64)
    g_old = g(w)
    w = euler(w + dt * g_old)
    for _ in range(n_t - 1):
        g_new = g(w)
        w = implicit(explicit_half @ w + dt * (1.5 * g_new - 0.5 * g_old))
        g_old = g_new
        if not np.isfinite(w).all():
            raise OracleError("finite-difference solution blew up")
    return w


def _radial_operator(d, n_r, dr):
    i = np.arange(1, n_r, dtype=np.float64)
    outer = (i + 0.5) * dr
    rho = (i - 0.5) / (i + 0.5)
    # shell-volume finite volumes: exact for the radial Laplacian of constants and r^2
    shell = 1.0 - rho**d
    right = d / (dr * outer * shell)
    left = d * rho ** (d - 1) / (dr * outer * shell)
    main = np.zeros(n_r + 1)
    upper = np.zeros(n_r)
    lower = np.zeros(n_r)
    main[0], upper[0] = -2.0 * d / dr**2, 2.0 * d / dr**2
    main[1:n_r] = -(left + right)
    upper[1:n_r] = right
    lower[0:n_r - 1] = left
    return sp.diags([lower, main, upper], [-1, 0, 1], format="csr")


def default_r_max(d: int, T: float) -> float:
    return 4.0 * np.sqrt(2.0 * T * d) + 8.0 * np.sqrt(2.0 * T)


def _radial_solve(problem, T, r_max, dr, n_t):
    kappa = problem.kappa
    n_r = max(2, int(round(r_max / dr)))
    r = np.linspace(0.0, n_r * dr, n_r + 1)
    L = kappa * _radial_operator(problem.dim, n_r, dr)
    frozen = np.zeros(n_r + 1, dtype=bool)
    frozen[-1] = True
    w0 = np.asarray(problem.radial_phi(r), dtype=np.float64)
    return _cnab2(L, w0, problem.reaction, T, n_t, frozen)[0]


def radial_fd_reference(problem, T: float, r_max: float | None = None, n_r: int = 4000,
                        n_t: int = 2000, check_boundary: bool = True,
                        boundary_tol: float = 1e-5) -> FdResult:
    """``u(T, 0)`` of a radially symmetric problem.

    Requires zero drift, noise ``sqrt(2 kappa) Id``, a radial initial condition
    and a nonlinearity depending on ``u`` only (``problem.radial_phi``,
    ``problem.reaction``, ``problem.kappa``). The far field is held at
    ``phi(r_max)``; with ``check_boundary`` the solve is repeated on twice the
    domain at equal spacing and must agree to ``boundary_tol``.
    """
    if problem.radial_phi is None or problem.reaction is None or problem.kappa is None:
        raise ValueError(f"problem {problem.label!r} is not radially reducible")
    if n_r < 2 or n_t < 1:
        raise ValueError("need n_r >= 2 and n_t >= 1")
    r_max = default_r_max(problem.dim, T) if r_max is None else float(r_max)
    dr = r_max / n_r
    value = _radial_solve(problem, T, r_max, dr, n_t)
    shift = None
    if check_boundary:
        shift = float(abs(_radial_solve(problem, T, 2.0 * r_max, dr, n_t) - value))
        if shift >= boundary_tol:
            raise OracleError(f"far-field boundary at r_max={r_max} moves the answer by {shift:.2e}")
    return FdResult(float(value), shift, dict(d=problem.dim, T=T, r_max=r_max, n_r=n_r, n_t=n_t))


def _second_difference(n, h):
    main = np.full(n, -2.0 / h**2)
    off = np.full(n - 1, 1.0 / h**2)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr")


def _first_difference(n, h):
    off = np.full(n - 1, 0.5 / h)
    return sp.diags([-off, off], [-1, 1], format="csr")


def grid_fd_reference(problem, T: float, box, n_x: int = 400, n_t: int = 1000,
                      point=None) -> FdResult:
    """``u(T, point)`` on a tensor grid over ``box`` (``d`` in {1, 2}).

    ``box`` is ``(low, high)`` applied to every coordinate. Diagonal diffusion
    is implicit (Crank--Nicolson); drift, cross-diffusion and the nonlinearity
    are explicit (Adams--Bashforth) and must satisfy ``dt |mu| / dx <= 1``.
    The boundary is held at ``phi``. ``point`` defaults to the start point.
    """
    d = problem.dim
    if d not in (1, 2):
        raise ValueError("grid finite differences support d = 1 or 2 only")
    lo, hi = map(float, box)
    axis = np.linspace(lo, hi, n_x + 1)
    h = axis[1] - axis[0]
    mesh = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    npts = len(mesh)
    dt = T / n_t

    # a = sigma sigma^T / 2, from the action on unit vectors
    cols = [problem.sigma(mesh, np.broadcast_to(np.eye(d)[i], mesh.shape)) for i in range(d)]
    sig = np.stack(cols, axis=-1)  # (npts, d, d), column i = sigma e_i
    a = 0.5 * np.einsum("pik,pjk->pij", sig, sig)
    mu = problem.mu(mesh)
    if dt * np.abs(mu).max(initial=0.0) / h > 1.0:
        raise ValueError(f"CFL violated: dt*max|mu|/dx = {dt * np.abs(mu).max() / h:.3g} > 1")

    eye1 = sp.identity(n_x + 1, format="csr")
    D2, D1 = _second_difference(n_x + 1, h), _first_difference(n_x + 1, h)
    if d == 1:
        second = [D2]
        first = [D1]
    else:
        second = [sp.kron(D2, eye1, "csr"), sp.kron(eye1, D2, "csr")]
        first = [sp.kron(D1, eye1, "csr"), sp.kron(eye1, D1, "csr")]
    L = sum(sp.diags(a[:, i, i]) @ second[i] for i in range(d))

    idx = np.stack(np.meshgrid(*([np.arange(n_x + 1)] * d), indexing="ij"), -1).reshape(-1, d)
    frozen = ((idx == 0) | (idx == n_x)).any(axis=1)

    def explicit(w):
        grad = np.stack([op @ w for op in first], axis=1)
        out = np.einsum("pi,pi->p", mu, grad)
        if d == 2:
            out += 2.0 * a[:, 0, 1] * (first[0] @ grad[:, 1])
        z = grad if problem.needs_gradient else None
        return out + problem.f(mesh, w, z)

    w = _cnab2(L, problem.phi(mesh), explicit, T, n_t, frozen)
    if point is None:
        point = np.asarray(problem.start.point, dtype=np.float64)
    point = np.asarray(point, dtype=np.float64).reshape(d)
    if np.any(point < lo) or np.any(point > hi):
        raise ValueError("evaluation point lies outside the box")
    if d == 1:
        value = np.interp(point[0], axis, w)
    else:
        value = RegularGridInterpolator((axis, axis), w.reshape(n_x + 1, n_x + 1))(point[None])[0]
    return FdResult(float(value), None, dict(d=d, T=T, box=(lo, hi), n_x=n_x, n_t=n_t))
