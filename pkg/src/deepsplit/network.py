"""Feedforward approximators with batch normalization and analytic gradients.

Architecture (depth ``k``, width ``l``)::

    x -> [BN_0] -> A_0 -> [BN_1] -> act -> A_1 -> [BN_2] -> act -> ...
      -> A_{k-2} -> [BN_{k-1}] -> act -> [BN_k] -> A_{k-1} -> value

``A_r`` are the affine maps ``d -> l``, ``l -> l`` (``k - 2`` times) and
``l -> 1``; batch normalization sits at any subset of the sites ``0..k``.

All parameters live in one flat float64 vector. Affine blocks come first,
each stored as its ``(fan_out, fan_in)`` weight matrix in row-major order
followed by its bias; then, for every normalization site in increasing
order, the scale vector followed by the shift vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.special import expit

from . import kernels
from .rng import Stream

LAYOUT_VERSION = 1
ACTIVATIONS = ("relu", "logistic", "identity")


class NetworkError(RuntimeError):
    pass


class StaleCacheError(RuntimeError):
    pass


@dataclass(frozen=True)
class NetworkArchitecture:
    input_dim: int
    width: int
    depth: int = 3
    activation: str = "relu"
    batch_norm_sites: tuple | None = None
    bn_momentum: float = 0.99
    bn_epsilon: float = 1e-6

    def __post_init__(self):
        if self.input_dim < 1 or self.width < 1:
            raise ValueError("input_dim and width must be positive")
        if self.depth < 3:
            raise ValueError(f"depth must be at least 3, got {self.depth}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        sites = tuple(range(self.depth + 1)) if self.batch_norm_sites is None else \
            tuple(sorted(set(int(s) for s in self.batch_norm_sites)))
        if any(not 0 <= s <= self.depth for s in sites):
            raise ValueError(f"batch-norm sites must lie in 0..{self.depth}")
        object.__setattr__(self, "batch_norm_sites", sites)
        if not 0.0 <= self.bn_momentum < 1.0 or self.bn_epsilon <= 0.0:
            raise ValueError("need 0 <= bn_momentum < 1 and bn_epsilon > 0")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        """``(fan_out, fan_in)`` of each affine map."""
        d, l = self.input_dim, self.width
        return [(l, d)] + [(l, l)] * (self.depth - 2) + [(1, l)]

    def site_features(self, site: int) -> int:
        return self.input_dim if site == 0 else self.width

    @property
    def num_bn_features(self) -> int:
        return sum(self.site_features(s) for s in self.batch_norm_sites)

    @property
    def num_params(self) -> int:
        return layout_for(self).size


@dataclass(frozen=True)
class ParameterLayout:
    """Offsets of every block in the flat parameter vector."""

    blocks: dict
    size: int
    affine_size: int
    bn_offsets: dict  # site -> (start, stop) in the concatenated BN statistics
    spans: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for name, (start, shape) in self.blocks.items():
            self.spans[name] = (start, start + int(np.prod(shape)), shape)

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        start, stop, shape = self.spans[name]
        return flat[start:stop].reshape(shape)

    def unpack(self, flat: np.ndarray) -> dict:
        return {name: self.view(flat, name) for name in self.blocks}

    def pack(self, blocks: dict) -> np.ndarray:
        flat = np.empty(self.size)
        for name, (start, shape) in self.blocks.items():
            flat[start:start + int(np.prod(shape))] = np.asarray(blocks[name], dtype=np.float64).reshape(-1)
        return flat


@lru_cache(maxsize=None)
def layout_for(arch: NetworkArchitecture) -> ParameterLayout:
    blocks, offset = {}, 0
    for r, (fan_out, fan_in) in enumerate(arch.layer_shapes):
        blocks[f"W{r}"] = (offset, (fan_out, fan_in))
        offset += fan_out * fan_in
        blocks[f"b{r}"] = (offset, (fan_out,))
        offset += fan_out
    affine = offset
    bn_offsets, feat = {}, 0
    for s in arch.batch_norm_sites:
        n = arch.site_features(s)
        blocks[f"bn{s}.scale"] = (offset, (n,))
        blocks[f"bn{s}.shift"] = (offset + n, (n,))
        offset += 2 * n
        bn_offsets[s] = (feat, feat + n)
        feat += n
    return ParameterLayout(blocks, offset, affine, bn_offsets)


class ParameterVector:
    """Flat parameter vector tied to an architecture.

    The storage is read-only; :meth:`assign` replaces it and bumps
    ``generation`` so forward caches built earlier are recognised as stale.
    """

    __slots__ = ("arch", "data", "generation", "_wt", "_layout")

    def __init__(self, arch: NetworkArchitecture, data):
        data = np.array(data, dtype=np.float64, copy=True).reshape(-1)
        if data.size != arch.num_params:
            raise ValueError(f"expected {arch.num_params} parameters, got {data.size}")
        data.setflags(write=False)
        self.arch = arch
        self.data = data
        self.generation = 0
        self._wt = None
        self._layout = layout_for(arch)

    @property
    def layout(self) -> ParameterLayout:
        return self._layout

    def block(self, name: str) -> np.ndarray:
        return self._layout.view(self.data, name)

    def weight(self, r: int) -> np.ndarray:
        return self.block(f"W{r}")

    def bias(self, r: int) -> np.ndarray:
        return self.block(f"b{r}")

    def transposed_weights(self) -> list[np.ndarray]:
        if self._wt is None:
            self._wt = [np.ascontiguousarray(self.weight(r).T) for r in range(self.arch.depth)]
        return self._wt

    def assign(self, data) -> None:
        data = np.array(data, dtype=np.float64, copy=True).reshape(-1)
        if data.size != self.data.size:
            raise ValueError("size mismatch in assign")
        data.setflags(write=False)
        self.data = data
        self.generation += 1
        self._wt = None

    def replaced(self, data) -> "ParameterVector":
        return ParameterVector(self.arch, data)

    def __len__(self):
        return self.data.size


@dataclass(frozen=True, eq=False)
class BatchNormState:
    """Running statistics of every normalized feature, concatenated over sites."""

    running_mean: np.ndarray
    running_var: np.ndarray
    count: int = 0

    @classmethod
    def fresh(cls, arch: NetworkArchitecture) -> "BatchNormState":
        n = arch.num_bn_features
        return cls._frozen(np.zeros(n), np.ones(n), 0)

    @classmethod
    def _frozen(cls, mean, var, count):
        mean = np.array(mean, dtype=np.float64)
        var = np.array(var, dtype=np.float64)
        mean.setflags(write=False)
        var.setflags(write=False)
        return cls(mean, var, int(count))


# --------------------------------------------------------------------------
# forward / backward


def init_params(arch: NetworkArchitecture, stream: Stream | int) -> ParameterVector:
    """Xavier-uniform weights, zero biases, unit BN scales and zero BN shifts."""
    rng = Stream(stream).generator()
    layout = layout_for(arch)
    flat = np.zeros(layout.size)
    for r, (fan_out, fan_in) in enumerate(arch.layer_shapes):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        layout.view(flat, f"W{r}")[...] = rng.uniform(-a, a, size=(fan_out, fan_in))
    for s in arch.batch_norm_sites:
        layout.view(flat, f"bn{s}.scale")[...] = 1.0
    return ParameterVector(arch, flat)


def _activate(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "logistic":
        return expit(z)
    return z


def _activation_grad(kind, z, a):
    if kind == "relu":
        # weak derivative, 0 at the kink
        return (z > 0.0).astype(np.float64)
    if kind == "logistic":
        return a * (1.0 - a)
    return np.ones_like(z)


@dataclass(eq=False)
class ForwardCache:
    params: ParameterVector
    generation: int
    mode: str
    ops: list = field(default_factory=list)


def forward(params: ParameterVector, bn: BatchNormState, x, mode: str = "train"):
    """Evaluate the network on a batch ``x`` of shape ``(J, d)``.

    ``mode="train"`` normalizes with batch statistics and returns updated
    running statistics; ``mode="infer"`` uses the running statistics, leaves
    them unchanged and evaluates every row independently of the others;
    ``mode="batch"`` normalizes with batch statistics but leaves the running
    statistics unchanged.

    Returns ``(values, bn_out, cache)``.
    """
    arch = params.arch
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise ValueError(f"expected input of shape (J, {arch.input_dim}), got {x.shape}")
    J = x.shape[0]
    if mode not in ("train", "infer", "batch"):
        raise ValueError(f"mode must be 'train', 'infer' or 'batch', got {mode!r}")
    if J < 1 or (mode != "infer" and J < 2):
        raise ValueError(f"{mode} mode needs at least two samples for batch statistics")

    layout = params.layout
    train = mode != "infer"
    eps, mom = arch.bn_epsilon, arch.bn_momentum
    sites = set(arch.batch_norm_sites)
    new_mean = bn.running_mean.copy()
    new_var = bn.running_var.copy()
    cache = ForwardCache(params, params.generation, mode)
    wts = None if train else params.transposed_weights()
    k = arch.depth

    def normalize(h, s):
        lo, hi = layout.bn_offsets[s]
        scale = params.block(f"bn{s}.scale")
        shift = params.block(f"bn{s}.shift")
        if train:
            mean = h.sum(axis=0) / J
            centred = h - mean
            var = np.einsum("ij,ij->j", centred, centred) / J
            floored = var < eps
            inv = 1.0 / np.sqrt(np.maximum(var, eps))
            xhat = centred * inv
            if mode == "train" and bn.count == 0:
                # the first batch replaces the fresh state, so no start-up bias remains
                new_mean[lo:hi] = mean
                new_var[lo:hi] = var
            else:
                # increment form: a constant input is an exact fixed point
                new_mean[lo:hi] += (1.0 - mom) * (mean - new_mean[lo:hi])
                new_var[lo:hi] += (1.0 - mom) * (var - new_var[lo:hi])
            cache.ops.append(("bn", s, xhat, inv, floored))
        else:
            inv = 1.0 / np.sqrt(np.maximum(bn.running_var[lo:hi], eps))
            xhat = (h - bn.running_mean[lo:hi]) * inv
            cache.ops.append(("bn", s, None, inv, None))
        return scale * xhat + shift

    h = x
    for r in range(k):
        if r == 0 and 0 in sites:
            h = normalize(h, 0)
        if r == k - 1 and k in sites:
            h = normalize(h, k)
        cache.ops.append(("affine", r, h))
        if train:
            z = h @ params.weight(r).T + params.bias(r)
        else:
            z = kernels.dense_ordered(h, wts[r], params.bias(r))
        if not np.isfinite(z).all():
            raise NetworkError(f"non-finite activations after affine layer {r}")
        if r < k - 1:
            if r + 1 in sites:
                z = normalize(z, r + 1)
            a = _activate(arch.activation, z)
            cache.ops.append(("act", r, z, a))
            h = a
        else:
            h = z

    if mode == "train":
        bn_out = BatchNormState._frozen(new_mean, new_var, bn.count + 1)
    else:
        bn_out = bn
    return h[:, 0], bn_out, cache


def grad_x(params: ParameterVector, bn: BatchNormState, x) -> np.ndarray:
    """Input gradient of the infer-mode network, shape ``(J, d)``."""
    return value_and_grad_x(params, bn, x)[1]


def value_and_grad_x(params: ParameterVector, bn: BatchNormState, x, mode: str = "infer"):
    """Values ``(J,)`` and input gradients ``(J, d)`` in one pass.

    In ``"batch"`` mode the batch statistics are held fixed when
    differentiating, so row ``j`` gets the gradient of ``V(., s)`` at ``x_j``
    for the normalization state ``s`` of this batch.
    """
    if mode not in ("infer", "batch"):
        raise ValueError(f"mode must be 'infer' or 'batch', got {mode!r}")
    values, _, cache = forward(params, bn, x, mode=mode)
    g = np.ones((len(values), 1))
    ordered = mode == "infer"
    for op in reversed(cache.ops):
        kind = op[0]
        if kind == "affine":
            w = params.weight(op[1])
            # fixed accumulation order keeps each row independent of the batch
            g = kernels.dense_ordered(g, w, np.zeros(w.shape[1])) if ordered else g @ w
        elif kind == "act":
            g = g * _activation_grad(params.arch.activation, op[2], op[3])
        else:
            s, inv = op[1], op[3]
            g = g * (params.block(f"bn{s}.scale") * inv)
    return values, g


def grad_params(cache: ForwardCache, upstream) -> np.ndarray:
    """Gradient of ``sum_j upstream_j * value_j`` with respect to all parameters.

    Batch statistics are differentiated as functions of the batch. Requires a
    train-mode cache whose parameters have not changed since the forward pass.
    """
    params = cache.params
    if cache.mode == "infer":
        raise ValueError("grad_params needs a forward cache built with batch statistics")
    if params.generation != cache.generation:
        raise StaleCacheError("parameters changed since the forward pass")
    upstream = np.asarray(upstream, dtype=np.float64)
    layout = params.layout
    grad = np.zeros(layout.size)
    g = upstream[:, None]
    activation = params.arch.activation
    last = len(cache.ops) - 1
    for i in range(last, -1, -1):
        op = cache.ops[i]
        kind = op[0]
        if kind == "affine":
            r, h = op[1], op[2]
            layout.view(grad, f"W{r}")[...] = g.T @ h
            layout.view(grad, f"b{r}")[...] = g.sum(axis=0)
            if i:
                g = g @ params.weight(r)
        elif kind == "act":
            g = g * _activation_grad(activation, op[2], op[3])
        else:
            s, xhat, inv, floored = op[1], op[2], op[3], op[4]
            scale = params.block(f"bn{s}.scale")
            layout.view(grad, f"bn{s}.scale")[...] = (g * xhat).sum(axis=0)
            layout.view(grad, f"bn{s}.shift")[...] = g.sum(axis=0)
            if i:
                gx = g * scale
                mean_g = gx.mean(axis=0)
                # a floored variance is constant, so only the mean is differentiated
                mean_gx = np.where(floored, 0.0, (gx * xhat).mean(axis=0))
                g = inv * (gx - mean_g - xhat * mean_gx)
    return grad
