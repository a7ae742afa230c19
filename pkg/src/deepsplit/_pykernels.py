"""Pure numpy implementations of the hot kernels.

Bit-for-bit twins of the compiled ``_core`` module, used when the extension
is not built or when ``DEEPSPLIT_PURE_PYTHON`` is set.
"""
import math

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_M52 = 2.0**-52


# AS241 PPND16 coefficients, highest degree first for Horner evaluation
_A = (2.5090809287301226727e+3, 3.3430575583588128105e+4, 6.7265770927008700853e+4,
      4.5921953931549871457e+4, 1.3731693765509461125e+4, 1.9715909503065514427e+3,
      1.3314166789178437745e+2, 3.3871328727963666080e0)
_B = (5.2264952788528545610e+3, 2.8729085735721942674e+4, 3.9307895800092710610e+4,
      2.1213794301586595867e+4, 5.3941960214247511077e+3, 6.8718700749205790830e+2,
      4.2313330701600911252e+1, 1.0)
_C = (7.74545014278341407640e-4, 2.27238449892691845833e-2, 2.41780725177450611770e-1,
      1.27045825245236838258e0, 3.64784832476320460504e0, 5.76949722146069140550e0,
      4.63033784615654529590e0, 1.42343711074968357734e0)
_D = (1.05075007164441684324e-9, 5.47593808499534494600e-4, 1.51986665636164571966e-2,
      1.48103976427480074590e-1, 6.89767334985100004550e-1, 1.67638483018380384940e0,
      2.05319162663775882187e0, 1.0)
_E = (2.01033439929228813265e-7, 2.71155556874348757815e-5, 1.24266094738807843860e-3,
      2.65321895265761230930e-2, 2.96560571828504891230e-1, 1.78482653991729133580e0,
      5.46378491116411436990e0, 6.65790464350110377720e0)
_F = (2.04426310338993978564e-15, 1.42151175831644588870e-7, 1.84631831751005468180e-5,
      7.86869131145613259100e-4, 1.48753612908506148525e-2, 1.36929880922735805310e-1,
      5.99832206555887937690e-1, 1.0)


def _horner(coeffs, r):
    acc = coeffs[0] * r + coeffs[1]
    for c in coeffs[2:]:
        acc = acc * r + c
    return acc


def ppnd(p):
    p = np.asarray(p, dtype=np.float64)
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    qc = q[central]
    r = 0.180625 - qc * qc
    out[central] = qc * _horner(_A, r) / _horner(_B, r)
    tail = ~central
    if tail.any():
        qt = q[tail]
        rt = np.where(qt < 0.0, p[tail], 1.0 - p[tail])
        # libm log, so the tails match the compiled kernel bit for bit
        rt = np.sqrt(-np.fromiter(map(math.log, rt.tolist()), np.float64, rt.size))
        near = rt <= 5.0
        z = np.empty_like(rt)
        rn = rt[near] - 1.6
        z[near] = _horner(_C, rn) / _horner(_D, rn)
        rf = rt[~near] - 5.0
        z[~near] = _horner(_E, rf) / _horner(_F, rf)
        out[tail] = np.where(qt < 0.0, -z, z)
    return out


def _mix64(z):
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _unit(keys, counters):
    h = _mix64(keys[:, None] + (counters[None, :] + np.uint64(1)) * GOLDEN)
    return ((h >> np.uint64(12)).astype(np.float64) + 0.5) * _TWO_M52


def derive_keys(parent, count, offset=0):
    base = _mix64(np.array([parent], dtype=np.uint64) + GOLDEN)
    idx = np.arange(offset, offset + count, dtype=np.uint64)
    return _mix64(base ^ idx)


def gaussian_block(keys, start, count):
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    counters = np.arange(start, start + count, dtype=np.uint64)
    return ppnd(_unit(keys, counters).ravel()).reshape(len(keys), count)


def uniform_block(keys, start, count):
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    counters = np.arange(start, start + count, dtype=np.uint64)
    return _unit(keys, counters)


def dense_ordered(x, wt, b):
    if wt.shape[0] != x.shape[1] or b.shape[0] != wt.shape[1]:
        raise ValueError("shape mismatch in dense_ordered")
    out = np.empty((x.shape[0], wt.shape[1]))
    out[:] = b
    for i in range(x.shape[1]):
        out += x[:, i, None] * wt[i]
    return out
