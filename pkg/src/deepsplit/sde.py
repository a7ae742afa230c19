"""Time grids and Euler--Maruyama simulation of the auxiliary diffusion.

The diffusion ``dY = mu(Y) dt + sigma(Y) dB`` is run forward on the reversed
grid ``tau_n = T - t_{N-n}``. Every path draws its Brownian increments from
its own counter-based stream, so a batch can be split across workers (or
truncated early) without changing a single bit of the states it contains.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import kernels
from .rng import Stream


class GridError(ValueError):
    pass


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Forward times ``t_0 < ... < t_N`` and reversed times ``tau_n = T - t_{N-n}``."""

    forward_times: np.ndarray
    reversed_times: np.ndarray

    @property
    def T(self) -> float:
        return float(self.forward_times[-1])

    @property
    def N(self) -> int:
        return len(self.forward_times) - 1

    def step(self, n: int) -> float:
        """Forward step length ``t_n - t_{n-1}`` for ``1 <= n <= N``."""
        if not 1 <= n <= self.N:
            raise IndexError(f"step index {n} outside 1..{self.N}")
        return float(self.forward_times[n] - self.forward_times[n - 1])


def make_grid(T: float, N: int, spacing: str | Sequence[float] = "uniform") -> TimeGrid:
    """Build a :class:`TimeGrid`.

    ``spacing`` is ``"uniform"`` (``t_n = nT/N``) or an explicit sequence of
    ``N + 1`` times starting at 0, ending at ``T`` and strictly increasing.
    """
    if not T > 0 or not np.isfinite(T):
        raise GridError(f"horizon must be positive and finite, got {T}")
    if int(N) != N or N < 1:
        raise GridError(f"number of steps must be a positive integer, got {N}")
    N = int(N)
    if isinstance(spacing, str):
        if spacing != "uniform":
            raise GridError(f"unknown spacing {spacing!r}")
        t = np.arange(N + 1, dtype=np.float64) * T / N
        t[-1] = T
    else:
        t = np.asarray(spacing, dtype=np.float64)
        if t.shape != (N + 1,):
            raise GridError(f"explicit grid needs {N + 1} points, got {t.shape}")
        if t[0] != 0.0 or t[-1] != T:
            raise GridError("explicit grid must start at 0 and end at T")
        if not np.all(np.diff(t) > 0):
            raise GridError("explicit grid must be strictly increasing")
    t.setflags(write=False)
    tau = T - t[::-1]
    tau.setflags(write=False)
    return TimeGrid(t, tau)


@dataclass(frozen=True, eq=False)
class PathBatch:
    """Simulated states, indexed ``states[j, k]`` for path ``j`` and grid index ``k``.

    ``states`` may hold fewer than ``N + 1`` grid points when the batch was
    simulated only up to a given index.
    """

    states: np.ndarray
    stream_key: int
    offset: int = 0

    @property
    def dimension(self) -> int:
        return self.states.shape[2]

    @property
    def batch_size(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1


def simulate_paths(problem, grid: TimeGrid, J: int, stream: Stream,
                   steps: int | None = None, offset: int = 0) -> PathBatch:
    """Euler--Maruyama batch of ``J`` paths of the problem's diffusion.

    Paths ``offset .. offset + J - 1`` of ``stream`` are produced; path ``j``
    uses the stream key ``stream.child(j)`` alone. With ``steps`` given, only
    grid indices ``0 .. steps`` are simulated; the states are identical to the
    leading part of a full simulation.
    """
    if J < 1:
        raise ValueError(f"batch size must be positive, got {J}")
    K = grid.N if steps is None else int(steps)
    if not 0 <= K <= grid.N:
        raise ValueError(f"steps must lie in 0..{grid.N}, got {steps}")
    d = problem.dim
    stream = Stream(stream)
    keys = stream.path_keys(J, offset)

    states = np.empty((J, K + 1, d))
    states[:, 0] = problem.start.sample(keys, d)
    if K:
        normals = kernels.gaussian_block(keys, 0, K * d).reshape(J, K, d)
        tau = grid.reversed_times
        for k in range(K):
            dt = tau[k + 1] - tau[k]
            y = states[:, k]
            dB = normals[:, k] * np.sqrt(dt)
            nxt = y + problem.mu(y) * dt + problem.sigma(y, dB)
            if not np.isfinite(nxt).all():
                j = int(np.argmax(~np.isfinite(nxt).all(axis=1)))
                raise SimulationError(
                    f"non-finite state in path j={offset + j} at step k={k + 1} "
                    f"(coefficients returned non-finite values at Y_{k})"
                )
            states[:, k + 1] = nxt
    states.setflags(write=False)
    return PathBatch(states, stream.key, offset)
