"""Backend selection for the hot kernels.

The compiled extension ``deepsplit._core`` is used when importable; otherwise
(or when the environment variable ``DEEPSPLIT_PURE_PYTHON`` is set to a
non-empty value other than ``0``) the numpy implementation in
``deepsplit._pykernels`` is used. Both produce identical bits.

Exposed functions:

``derive_keys(parent, count, offset=0)``
    uint64 child keys ``derive(parent, offset + j)``.
``gaussian_block(keys, start, count)``
    ``(len(keys), count)`` standard normals from counter positions
    ``start .. start + count - 1`` of each key's stream.
``uniform_block(keys, start, count)``
    Same layout, uniforms on the open unit interval.
``dense_ordered(x, wt, b)``
    ``x @ wt + b`` with a fixed, batch-independent accumulation order.
"""
import os
from types import ModuleType

import numpy as np

from . import _pykernels

try:
    from . import _core
except ImportError:  # extension not built
    _core = None

_force_pure = os.environ.get("DEEPSPLIT_PURE_PYTHON", "") not in ("", "0")


def available_backends():
    return ("compiled", "python") if _core is not None else ("python",)


def get_backend(name):
    """Return the kernel module for ``"compiled"`` or ``"python"``."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _core is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _core
    raise ValueError(f"unknown kernel backend {name!r}")


_impl: ModuleType = _pykernels if (_force_pure or _core is None) else _core
BACKEND = "python" if _impl is _pykernels else "compiled"


def derive_keys(parent, count, offset=0):
    return _impl.derive_keys(np.uint64(parent), int(count), int(offset))


def gaussian_block(keys, start, count):
    return _impl.gaussian_block(np.ascontiguousarray(keys, dtype=np.uint64), int(start), int(count))


def uniform_block(keys, start, count):
    return _impl.uniform_block(np.ascontiguousarray(keys, dtype=np.uint64), int(start), int(count))


def dense_ordered(x, wt, b):
    return _impl.dense_ordered(
        np.ascontiguousarray(x, dtype=np.float64),
        np.ascontiguousarray(wt, dtype=np.float64),
        np.ascontiguousarray(b, dtype=np.float64),
    )
