"""Persistence of trained networks.

A snapshot file is a short text header of ``key=value`` lines terminated by
a line ``end``, followed by the flat parameter vector, the running means and
the running variances, all as little-endian float64. Floats in the header are
written with ``repr`` so a save/load cycle reproduces every bit.
"""
from __future__ import annotations

import os

import numpy as np

from .network import LAYOUT_VERSION, BatchNormState, NetworkArchitecture, ParameterVector

MAGIC = "deepsplit-snapshot"
FORMAT_VERSION = 1
_LE = np.dtype("<f8")


class SnapshotFormatError(ValueError):
    pass


def dumps(params: ParameterVector, bn: BatchNormState, extra: dict | None = None) -> bytes:
    arch = params.arch
    header = {
        "format": FORMAT_VERSION,
        "layout_version": LAYOUT_VERSION,
        "input_dim": arch.input_dim,
        "width": arch.width,
        "depth": arch.depth,
        "activation": arch.activation,
        "batch_norm_sites": ",".join(str(s) for s in arch.batch_norm_sites),
        "bn_momentum": repr(arch.bn_momentum),
        "bn_epsilon": repr(arch.bn_epsilon),
        "bn_count": bn.count,
        "num_params": params.data.size,
        "num_bn_features": bn.running_mean.size,
    }
    for key, value in (extra or {}).items():
        if key in header or "=" in str(key) or "\n" in f"{key}{value}":
            raise ValueError(f"invalid extra header entry {key!r}")
        header[key] = value
    text = MAGIC + "\n" + "".join(f"{k}={v}\n" for k, v in header.items()) + "end\n"
    body = b"".join(np.ascontiguousarray(a, dtype=_LE).tobytes()
                    for a in (params.data, bn.running_mean, bn.running_var))
    return text.encode("ascii") + body


def loads(blob: bytes):
    """Inverse of :func:`dumps`; returns ``(params, bn, header)``."""
    marker = b"\nend\n"
    cut = blob.find(marker)
    if not blob.startswith(MAGIC.encode() + b"\n") or cut < 0:
        raise SnapshotFormatError("not a deepsplit snapshot")
    lines = blob[:cut].decode("ascii").split("\n")[1:]
    header = dict(line.split("=", 1) for line in lines)
    if int(header["format"]) != FORMAT_VERSION or int(header["layout_version"]) != LAYOUT_VERSION:
        raise SnapshotFormatError("unsupported snapshot version")
    sites = header["batch_norm_sites"]
    arch = NetworkArchitecture(
        input_dim=int(header["input_dim"]), width=int(header["width"]),
        depth=int(header["depth"]), activation=header["activation"],
        batch_norm_sites=tuple(int(s) for s in sites.split(",")) if sites else (),
        bn_momentum=float(header["bn_momentum"]), bn_epsilon=float(header["bn_epsilon"]),
    )
    n_par, n_bn = int(header["num_params"]), int(header["num_bn_features"])
    body = np.frombuffer(blob, dtype=_LE, offset=cut + len(marker))
    if body.size != n_par + 2 * n_bn:
        raise SnapshotFormatError(f"payload holds {body.size} values, expected {n_par + 2 * n_bn}")
    body = body.astype(np.float64)
    params = ParameterVector(arch, body[:n_par])
    bn = BatchNormState._frozen(body[n_par:n_par + n_bn], body[n_par + n_bn:], int(header["bn_count"]))
    return params, bn, header


def save(path, params: ParameterVector, bn: BatchNormState, extra: dict | None = None) -> None:
    with open(os.fspath(path), "wb") as fh:
        fh.write(dumps(params, bn, extra))


def load(path):
    with open(os.fspath(path), "rb") as fh:
        return loads(fh.read())
