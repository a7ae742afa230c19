"""Compiled hot kernels.

Must stay bit-compatible with :mod:`deepsplit._pykernels`; the parity tests
compare the two element by element.
"""
import numpy as np
cimport numpy as cnp
from libc.stdint cimport uint64_t
from libc.math cimport log, sqrt

cnp.import_array()

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double TWO_M52 = 2.220446049250313e-16


# Wichura (1988), algorithm AS241 PPND16; same Horner order as the numpy twin
cdef double A0 = 3.3871328727963666080e0, A1 = 1.3314166789178437745e+2
cdef double A2 = 1.9715909503065514427e+3, A3 = 1.3731693765509461125e+4
cdef double A4 = 4.5921953931549871457e+4, A5 = 6.7265770927008700853e+4
cdef double A6 = 3.3430575583588128105e+4, A7 = 2.5090809287301226727e+3
cdef double B1 = 4.2313330701600911252e+1, B2 = 6.8718700749205790830e+2
cdef double B3 = 5.3941960214247511077e+3, B4 = 2.1213794301586595867e+4
cdef double B5 = 3.9307895800092710610e+4, B6 = 2.8729085735721942674e+4
cdef double B7 = 5.2264952788528545610e+3
cdef double C0 = 1.42343711074968357734e0, C1 = 4.63033784615654529590e0
cdef double C2 = 5.76949722146069140550e0, C3 = 3.64784832476320460504e0
cdef double C4 = 1.27045825245236838258e0, C5 = 2.41780725177450611770e-1
cdef double C6 = 2.27238449892691845833e-2, C7 = 7.74545014278341407640e-4
cdef double D1 = 2.05319162663775882187e0, D2 = 1.67638483018380384940e0
cdef double D3 = 6.89767334985100004550e-1, D4 = 1.48103976427480074590e-1
cdef double D5 = 1.51986665636164571966e-2, D6 = 5.47593808499534494600e-4
cdef double D7 = 1.05075007164441684324e-9
cdef double E0 = 6.65790464350110377720e0, E1 = 5.46378491116411436990e0
cdef double E2 = 1.78482653991729133580e0, E3 = 2.96560571828504891230e-1
cdef double E4 = 2.65321895265761230930e-2, E5 = 1.24266094738807843860e-3
cdef double E6 = 2.71155556874348757815e-5, E7 = 2.01033439929228813265e-7
cdef double F1 = 5.99832206555887937690e-1, F2 = 1.36929880922735805310e-1
cdef double F3 = 1.48753612908506148525e-2, F4 = 7.86869131145613259100e-4
cdef double F5 = 1.84631831751005468180e-5, F6 = 1.42151175831644588870e-7
cdef double F7 = 2.04426310338993978564e-15


cdef inline double _ppnd(double p) noexcept nogil:
    cdef double q = p - 0.5, r, z
    if -0.425 <= q <= 0.425:
        r = 0.180625 - q * q
        return q * (((((((A7 * r + A6) * r + A5) * r + A4) * r + A3) * r + A2) * r + A1) * r + A0) / \
            (((((((B7 * r + B6) * r + B5) * r + B4) * r + B3) * r + B2) * r + B1) * r + 1.0)
    r = p if q < 0.0 else 1.0 - p
    r = sqrt(-log(r))
    if r <= 5.0:
        r = r - 1.6
        z = (((((((C7 * r + C6) * r + C5) * r + C4) * r + C3) * r + C2) * r + C1) * r + C0) / \
            (((((((D7 * r + D6) * r + D5) * r + D4) * r + D3) * r + D2) * r + D1) * r + 1.0)
    else:
        r = r - 5.0
        z = (((((((E7 * r + E6) * r + E5) * r + E4) * r + E3) * r + E2) * r + E1) * r + E0) / \
            (((((((F7 * r + F6) * r + F5) * r + F4) * r + F3) * r + F2) * r + F1) * r + 1.0)
    return -z if q < 0.0 else z


cdef inline uint64_t _mix64(uint64_t z) noexcept nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline double _unit(uint64_t key, uint64_t counter) noexcept nogil:
    # 52 random bits, shifted half an ulp off zero: u in (0, 1) exactly
    cdef uint64_t h = _mix64(key + (counter + 1) * GOLDEN)
    return (<double>(h >> 12) + 0.5) * TWO_M52


def derive_keys(uint64_t parent, Py_ssize_t count, Py_ssize_t offset=0):
    """Child keys ``derive(parent, offset + j)`` for ``j < count``."""
    out = np.empty(count, dtype=np.uint64)
    cdef uint64_t[::1] o = out
    cdef uint64_t base = _mix64(parent + GOLDEN)
    cdef Py_ssize_t j
    with nogil:
        for j in range(count):
            o[j] = _mix64(base ^ <uint64_t>(offset + j))
    return out


def ppnd(const double[::1] p):
    """Inverse standard normal CDF, elementwise."""
    out = np.empty(p.shape[0], dtype=np.float64)
    cdef double[::1] o = out
    cdef Py_ssize_t i
    with nogil:
        for i in range(p.shape[0]):
            o[i] = _ppnd(p[i])
    return out


def gaussian_block(const uint64_t[::1] keys, Py_ssize_t start, Py_ssize_t count):
    """Standard normals at counters ``start .. start+count-1`` of each key."""
    cdef Py_ssize_t J = keys.shape[0]
    out = np.empty((J, count), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t j, q
    cdef uint64_t key
    with nogil:
        for j in range(J):
            key = keys[j]
            for q in range(count):
                o[j, q] = _ppnd(_unit(key, <uint64_t>(start + q)))
    return out


def uniform_block(const uint64_t[::1] keys, Py_ssize_t start, Py_ssize_t count):
    """Uniforms on (0, 1) at counters ``start .. start+count-1`` of each key."""
    cdef Py_ssize_t J = keys.shape[0]
    out = np.empty((J, count), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t j, q
    with nogil:
        for j in range(J):
            for q in range(count):
                o[j, q] = _unit(keys[j], <uint64_t>(start + q))
    return out


def dense_ordered(const double[:, ::1] x, const double[:, ::1] wt, const double[::1] b):
    """Affine map ``x @ wt + b`` accumulated strictly in input-index order.

    Every output row depends on its input row alone, with the same rounding
    sequence whatever the batch size.
    """
    cdef Py_ssize_t J = x.shape[0], n_in = x.shape[1], n_out = wt.shape[1]
    if wt.shape[0] != n_in or b.shape[0] != n_out:
        raise ValueError("shape mismatch in dense_ordered")
    out = np.empty((J, n_out), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t j, i, k
    cdef double xi
    with nogil:
        for j in range(J):
            for k in range(n_out):
                o[j, k] = b[k]
            for i in range(n_in):
                xi = x[j, i]
                for k in range(n_out):
                    o[j, k] = o[j, k] + xi * wt[i, k]
    return out
