"""The deep splitting recursion.

Time step ``n`` fits a network ``V_n`` to the regression target
``V_{n-1}(Y_{N-n+1}) + dt * f(Y_{N-n+1}, V_{n-1}, grad V_{n-1})`` with input
``Y_{N-n}``, where ``Y`` runs on the reversed grid and ``V_0 = phi``. The
trained network of step ``N`` evaluated at the start point approximates
``u(T, xi)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import snapshot as _snapshot
from .network import (BatchNormState, NetworkArchitecture, ParameterVector, forward,
                      grad_params, init_params, value_and_grad_x)
from .rng import Stream
from .sde import TimeGrid, simulate_paths

DIVERGENCE_LIMIT = 1e12
INIT_POLICIES = ("fresh_xavier", "warm_start")
TARGET_STATISTICS = ("batch", "running")


class TrainingError(RuntimeError):
    pass


class SolveError(RuntimeError):
    def __init__(self, n, cause):
        super().__init__(f"time step n={n}: {cause}")
        self.n = n


# --------------------------------------------------------------------------
# optimizers


@dataclass(frozen=True)
class SGD:
    pass


@dataclass(frozen=True)
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0 and self.eps > 0.0):
            raise ValueError("Adam needs beta1, beta2 in [0, 1) and eps > 0")


@dataclass(frozen=True, eq=False)
class AdamState:
    first_moment: np.ndarray
    second_moment: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def _data(theta):
    return theta.data if isinstance(theta, ParameterVector) else np.asarray(theta, dtype=np.float64)


def _rewrap(theta, data):
    return theta.replaced(data) if isinstance(theta, ParameterVector) else data


def sgd_step(theta, grad, lr: float):
    """Plain gradient step ``theta - lr * grad``."""
    return _rewrap(theta, _data(theta) - lr * np.asarray(grad))


def adam_step(state: AdamState, theta, grad, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update; returns ``(new_state, new_theta)``.

    Bias correction uses the exponent ``m + 1`` so the first step is defined.
    """
    g = np.asarray(grad, dtype=np.float64)
    x = beta1 * state.first_moment + (1.0 - beta1) * g
    y = beta2 * state.second_moment + (1.0 - beta2) * g * g
    t = state.step + 1
    update = lr * (x / (1.0 - beta1**t)) / (np.sqrt(np.abs(y) / (1.0 - beta2**t)) + eps)
    return AdamState(x, y, t), _rewrap(theta, _data(theta) - update)


@dataclass(frozen=True, eq=False)
class TrainingSchedule:
    """Per-step learning rates and batch sizes plus optimizer and init policy."""

    learning_rates: tuple
    batch_sizes: tuple
    optimizer: Adam | SGD = field(default_factory=Adam)
    init_policy: str = "fresh_xavier"
    target_statistics: str = "batch"

    def __post_init__(self):
        rates = tuple(float(r) for r in self.learning_rates)
        sizes = tuple(int(j) for j in self.batch_sizes)
        if len(rates) != len(sizes):
            raise ValueError("learning_rates and batch_sizes must have equal length")
        if any(not r > 0 for r in rates) or any(j < 2 for j in sizes):
            raise ValueError("learning rates must be positive and batch sizes at least 2")
        if isinstance(self.optimizer, Adam) and not (
                0 < self.optimizer.beta1 < 1 and 0 < self.optimizer.beta2 < 1):
            raise ValueError("schedule optimizers need beta1, beta2 in (0, 1)")
        if self.init_policy not in INIT_POLICIES:
            raise ValueError(f"init_policy must be one of {INIT_POLICIES}")
        if self.target_statistics not in TARGET_STATISTICS:
            raise ValueError(f"target_statistics must be one of {TARGET_STATISTICS}")
        object.__setattr__(self, "learning_rates", rates)
        object.__setattr__(self, "batch_sizes", sizes)

    @classmethod
    def constant_batch(cls, learning_rates, batch_size: int = 256, **kwargs) -> "TrainingSchedule":
        rates = tuple(learning_rates)
        return cls(rates, (batch_size,) * len(rates), **kwargs)

    @property
    def steps(self) -> int:
        return len(self.learning_rates)


# --------------------------------------------------------------------------
# frozen approximators


class Snapshot:
    """Frozen trained network ``V_n``.

    Evaluation defaults to infer mode (running statistics). ``mode="batch"``
    normalizes with the statistics of the evaluated batch instead; the stored
    state is never modified.
    """

    def __init__(self, params: ParameterVector, bn: BatchNormState):
        self.params = ParameterVector(params.arch, params.data)  # private copy
        self.bn = BatchNormState._frozen(bn.running_mean, bn.running_var, bn.count)

    @property
    def arch(self) -> NetworkArchitecture:
        return self.params.arch

    def value(self, x, mode: str = "infer") -> np.ndarray:
        return forward(self.params, self.bn, x, mode=mode)[0]

    def value_and_grad(self, x, mode: str = "infer"):
        return value_and_grad_x(self.params, self.bn, x, mode=mode)

    def to_bytes(self, extra=None) -> bytes:
        return _snapshot.dumps(self.params, self.bn, extra)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Snapshot":
        params, bn, _ = _snapshot.loads(blob)
        return cls(params, bn)


class AnalyticSnapshot:
    """``V_0 = phi`` with its weak gradient."""

    def __init__(self, problem):
        self.problem = problem

    def value(self, x, mode: str = "infer") -> np.ndarray:
        return self.problem.phi(np.asarray(x, dtype=np.float64))

    def value_and_grad(self, x, mode: str = "infer"):
        x = np.asarray(x, dtype=np.float64)
        return self.problem.phi(x), self.problem.grad_phi(x)


def regression_target(problem, prev, y_next: np.ndarray, dt: float,
                      statistics: str = "batch") -> np.ndarray:
    """``V_{n-1}(y) + dt * f(y, V_{n-1}(y), grad V_{n-1}(y))`` on a batch.

    ``statistics="batch"`` normalizes the frozen network with the statistics
    of this batch (held fixed for the input gradient); ``"running"`` uses its
    stored running averages.
    """
    mode = "batch" if statistics == "batch" else "infer"
    if problem.needs_gradient:
        v, z = prev.value_and_grad(y_next, mode=mode)
    else:
        v, z = prev.value(y_next, mode=mode), None
    return v + dt * problem.f(y_next, v, z)


def loss_and_grad(n: int, theta: ParameterVector, bn: BatchNormState, prev, paths, dt: float,
                  problem, N: int | None = None, statistics: str = "batch"):
    """Quadratic regression loss of step ``n`` and its parameter gradient.

    ``paths.states[:, N - n]`` are the inputs and ``paths.states[:, N - n + 1]``
    feed the frozen previous approximator. ``N`` defaults to the number of
    simulated steps. Returns ``(loss, grad, bn_out)``.
    """
    N = paths.steps if N is None else N
    if not 1 <= n <= N or N - n + 1 > paths.steps:
        raise ValueError(f"step {n} needs grid index {N - n + 1}, batch holds {paths.steps}")
    y_in = paths.states[:, N - n]
    target = regression_target(problem, prev, paths.states[:, N - n + 1], dt, statistics)
    values, bn_out, cache = forward(theta, bn, y_in, mode="train")
    resid = values - target
    if not np.isfinite(resid).all():
        j = int(np.argmax(~np.isfinite(resid)))
        raise TrainingError(f"non-finite loss term at path j={paths.offset + j}")
    J = len(resid)
    loss = float(np.mean(resid * resid))
    grad = grad_params(cache, (2.0 / J) * resid)
    return loss, grad, bn_out


def train_timestep(n: int, problem, grid: TimeGrid, schedule: TrainingSchedule,
                   arch: NetworkArchitecture, prev, stream: Stream | int,
                   truncate_paths: bool = False):
    """Train ``V_n``; returns ``(Snapshot, loss_trace)``.

    Step ``m`` draws paths from ``stream.child("paths", n, m)``; the initial
    parameters come from ``stream.child("init", n)`` unless the schedule
    warm-starts from ``prev``. With ``truncate_paths`` the paths are simulated
    only up to the grid index the step consumes, which leaves the used states
    bit-identical.
    """
    stream = Stream(stream)
    if schedule.init_policy == "warm_start" and isinstance(prev, Snapshot) and prev.arch == arch:
        theta, bn = ParameterVector(arch, prev.params.data), prev.bn
    else:
        theta, bn = init_params(arch, stream.child("init", n)), BatchNormState.fresh(arch)
    dt = grid.step(n)
    N = grid.N
    steps = N - n + 1 if truncate_paths else None
    adam = schedule.optimizer if isinstance(schedule.optimizer, Adam) else None
    opt_state = AdamState.fresh(theta.data.size) if adam else None
    losses = np.empty(schedule.steps)
    for m in range(schedule.steps):
        paths = simulate_paths(problem, grid, schedule.batch_sizes[m],
                               stream.child("paths", n, m), steps=steps)
        loss, grad, bn = loss_and_grad(n, theta, bn, prev, paths, dt, problem, N=N,
                                        statistics=schedule.target_statistics)
        if loss > DIVERGENCE_LIMIT:
            raise TrainingError(f"loss {loss:.3e} exceeds {DIVERGENCE_LIMIT:.0e} at gradient step m={m}")
        losses[m] = loss
        lr = schedule.learning_rates[m]
        if adam:
            opt_state, theta = adam_step(opt_state, theta, grad, lr, adam.beta1, adam.beta2, adam.eps)
        else:
            theta = sgd_step(theta, grad, lr)
    return Snapshot(theta, bn), losses


@dataclass(eq=False)
class SolverResult:
    problem: object
    grid: TimeGrid
    arch: NetworkArchitecture
    snapshots: list
    losses: list
    seed: int

    def evaluate(self, n: int, x) -> np.ndarray:
        return evaluate(self, n, x)

    def to_bytes(self) -> list[bytes]:
        return [s.to_bytes({"step": i + 1}) for i, s in enumerate(self.snapshots)]


def solve(problem, grid: TimeGrid, schedule: TrainingSchedule, arch: NetworkArchitecture,
          seed: Stream | int = 0, truncate_paths: bool = False, progress=None) -> SolverResult:
    """Run the recursion for ``n = 1..N``; failures are re-raised as :class:`SolveError`."""
    if arch.input_dim != problem.dim:
        raise ValueError(f"network input dimension {arch.input_dim} != problem dimension {problem.dim}")
    stream = Stream(seed)
    prev = AnalyticSnapshot(problem)
    snapshots, losses = [], []
    for n in range(1, grid.N + 1):
        try:
            prev, trace = train_timestep(n, problem, grid, schedule, arch, prev, stream,
                                         truncate_paths=truncate_paths)
        except (TrainingError, ArithmeticError, RuntimeError, ValueError) as exc:
            raise SolveError(n, exc) from exc
        snapshots.append(prev)
        losses.append(trace)
        if progress is not None:
            progress(n, trace)
    return SolverResult(problem, grid, arch, snapshots, losses, stream.key)


def evaluate(result: SolverResult, n: int, x) -> np.ndarray:
    """Approximation ``V_n(x)``; ``n = 0`` returns ``phi(x)`` itself."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != result.problem.dim:
        raise ValueError(f"points must have dimension {result.problem.dim}, got {x.shape[1]}")
    if not 0 <= n <= len(result.snapshots):
        raise IndexError(f"step {n} outside 0..{len(result.snapshots)}")
    if n == 0:
        return result.problem.phi(x)
    return result.snapshots[n - 1].value(x)
