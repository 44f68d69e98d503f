# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: conditioned walks, loop erasure and slit chains.

Every function here has a line-for-line counterpart in ``_kernels_py`` and
consumes random numbers in the same order, so both backends produce the same
curves from the same bit generator.
"""

import numpy as np
cimport numpy as cnp
from cpython.pycapsule cimport PyCapsule_GetPointer
from libc.math cimport sqrt, hypot, copysign, fabs
from numpy.random cimport bitgen_t

cnp.import_array()

BACKEND = "compiled"


cdef bitgen_t *_bitgen(object bit_generator) except NULL:
    capsule = bit_generator.capsule
    return <bitgen_t *> PyCapsule_GetPointer(capsule, "BitGenerator")


cdef inline int _choose(double u, const double[:, ::1] cum, Py_ssize_t v) noexcept nogil:
    cdef int k = 0
    while k < 4 and u >= cum[v, k]:
        k += 1
    return k


def walk(const int[:, ::1] nbr, const double[:, ::1] cum, Py_ssize_t start, object bit_generator):
    """Raw conditioned walk from ``start``; returns visited interior indices."""
    cdef bitgen_t *rng = _bitgen(bit_generator)
    cdef Py_ssize_t cap = 64, length = 1, v = start
    cdef int k
    out = np.empty(cap, dtype=np.int64)
    cdef long long[::1] buf = out
    buf[0] = start
    with bit_generator.lock:
        while True:
            k = _choose(rng.next_double(rng.state), cum, v)
            if k == 4:
                break
            v = nbr[v, k]
            if length == cap:
                cap *= 2
                out = np.resize(out, cap)
                buf = out
            buf[length] = v
            length += 1
    return out[:length].copy()


cdef Py_ssize_t _lerw_into(const int[:, ::1] nbr, const double[:, ::1] cum, Py_ssize_t start,
                           bitgen_t *rng, long long[::1] path, long long[::1] pos) noexcept nogil:
    cdef Py_ssize_t length = 1, v = start, w, j
    cdef int k
    path[0] = start
    pos[start] = 0
    while True:
        k = _choose(rng.next_double(rng.state), cum, v)
        if k == 4:
            break
        w = nbr[v, k]
        if pos[w] >= 0:
            for j in range(pos[w] + 1, length):
                pos[path[j]] = -1
            length = pos[w] + 1
        else:
            pos[w] = length
            path[length] = w
            length += 1
        v = w
    for j in range(length):
        pos[path[j]] = -1
    return length


def lerw(const int[:, ::1] nbr, const double[:, ::1] cum, Py_ssize_t start, object bit_generator):
    """Loop-erased conditioned walk built on the fly."""
    cdef bitgen_t *rng = _bitgen(bit_generator)
    cdef Py_ssize_t n = nbr.shape[0], length
    path = np.empty(n, dtype=np.int64)
    pos = np.full(n, -1, dtype=np.int64)
    with bit_generator.lock:
        length = _lerw_into(nbr, cum, start, rng, path, pos)
    return path[:length].copy()


def lerw_batch(const int[:, ::1] nbr, const double[:, ::1] cum, Py_ssize_t start,
               Py_ssize_t count, object bit_generator):
    """``count`` erased curves as a flat index array plus offsets."""
    cdef bitgen_t *rng = _bitgen(bit_generator)
    cdef Py_ssize_t n = nbr.shape[0], length, i, j, used = 0, cap = max(count * 8, 64)
    path_a = np.empty(n, dtype=np.int64)
    pos_a = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] path = path_a
    cdef long long[::1] pos = pos_a
    flat = np.empty(cap, dtype=np.int64)
    offsets = np.zeros(count + 1, dtype=np.int64)
    cdef long long[::1] fb = flat
    cdef long long[::1] ob = offsets
    with bit_generator.lock:
        for i in range(count):
            length = _lerw_into(nbr, cum, start, rng, path, pos)
            if used + length > cap:
                while used + length > cap:
                    cap *= 2
                flat = np.resize(flat, cap)
                fb = flat
            for j in range(length):
                fb[used + j] = path[j]
            used += length
            ob[i + 1] = used
    return flat[:used].copy(), offsets


def lerw_keys(const int[:, ::1] nbr, const double[:, ::1] cum, Py_ssize_t start,
              Py_ssize_t count, object bit_generator):
    """Integer code ``sum (idx_j + 1) (n + 1)^j`` of each of ``count`` erased curves."""
    cdef bitgen_t *rng = _bitgen(bit_generator)
    cdef Py_ssize_t n = nbr.shape[0], length, i, j
    cdef long long key, base = n + 1, mult
    path_a = np.empty(n, dtype=np.int64)
    pos_a = np.full(n, -1, dtype=np.int64)
    cdef long long[::1] path = path_a
    cdef long long[::1] pos = pos_a
    keys = np.empty(count, dtype=np.int64)
    cdef long long[::1] kb = keys
    with bit_generator.lock:
        for i in range(count):
            length = _lerw_into(nbr, cum, start, rng, path, pos)
            key = 0
            mult = 1
            for j in range(length):
                key += (path[j] + 1) * mult
                mult *= base
            kb[i] = key
    return keys


def loop_erase(const long long[::1] seq):
    """Chronological loop erasure of an integer sequence."""
    cdef Py_ssize_t n = seq.shape[0], length = 0, i, j, k
    cdef dict where = {}
    out = np.empty(n, dtype=np.int64)
    cdef long long[::1] ob = out
    cdef long long x
    for i in range(n):
        x = seq[i]
        j = where.get(x, -1)
        if j >= 0:
            for k in range(j + 1, length):
                del where[ob[k]]
            length = j + 1
        else:
            where[x] = length
            ob[length] = x
            length += 1
    return out[:length].copy()


cdef inline void _sqrt_up(double a, double b, double ref, double *re, double *im) noexcept nogil:
    # root of a + ib in the closed upper half-plane; on the real axis the sign follows ref
    cdef double r = hypot(a, b), x, y
    if r == 0.0:
        re[0] = 0.0
        im[0] = 0.0
        return
    if a >= 0.0:
        x = sqrt(0.5 * (r + a))
        y = b / (2.0 * x)
    else:
        y = copysign(sqrt(0.5 * (r - a)), b)
        x = b / (2.0 * y)
    if y < 0.0:
        x = -x
        y = -y
    elif y == 0.0:
        x = copysign(fabs(x), ref)
    re[0] = x
    im[0] = y


def slit_forward(const double complex[::1] z, const double[::1] xi, const double[::1] h):
    """Apply ``g_k(z) = xi_k + sqrt((z - xi_k)^2 + h_k^2)`` for k = 0, 1, ... in order."""
    cdef Py_ssize_t n = z.shape[0], ns = xi.shape[0], i, k
    cdef double x, y, dx, a, b, re, im
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] ob = out
    for i in range(n):
        x = z[i].real
        y = z[i].imag
        for k in range(ns):
            dx = x - xi[k]
            a = dx * dx - y * y + h[k] * h[k]
            b = 2.0 * dx * y
            _sqrt_up(a, b, dx, &re, &im)
            x = xi[k] + re
            y = im
        ob[i] = x + 1j * y
    return out


def slit_inverse(const double complex[::1] w, const double[::1] xi, const double[::1] h):
    """Inverse chain: apply ``xi_k + sqrt((w - xi_k)^2 - h_k^2)`` for k = last, ..., 0."""
    cdef Py_ssize_t n = w.shape[0], ns = xi.shape[0], i, k
    cdef double x, y, dx, a, b, re, im
    out = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] ob = out
    for i in range(n):
        x = w[i].real
        y = w[i].imag
        for k in range(ns - 1, -1, -1):
            dx = x - xi[k]
            a = dx * dx - y * y - h[k] * h[k]
            b = 2.0 * dx * y
            _sqrt_up(a, b, dx, &re, &im)
            x = xi[k] + re
            y = im
        ob[i] = x + 1j * y
    return out


def unzip(const double complex[::1] points, double cap_limit):
    """Vertical-slit unzipping of a polyline in the upper half-plane.

    Returns ``(xi, h, used, bad)``: slit positions and heights for the first
    ``used`` points, stopping once the cumulative capacity reaches
    ``cap_limit``; ``bad`` is the index of a point that landed on or below the
    real line (-1 if none).
    """
    cdef Py_ssize_t n = points.shape[0], k, j, used = 0, bad = -1
    cdef double cap = 0.0, xk, hk, dx, a, b, re, im
    xr_a = np.array([p.real for p in points], dtype=np.float64)
    yr_a = np.array([p.imag for p in points], dtype=np.float64)
    cdef double[::1] xr = xr_a
    cdef double[::1] yr = yr_a
    xi = np.empty(n, dtype=np.float64)
    hh = np.empty(n, dtype=np.float64)
    cdef double[::1] xb = xi
    cdef double[::1] hb = hh
    with nogil:
        for k in range(n):
            if yr[k] <= 0.0:
                bad = k
                break
            xk = xr[k]
            hk = yr[k]
            xb[k] = xk
            hb[k] = hk
            used = k + 1
            cap += 0.25 * hk * hk
            if cap >= cap_limit:
                break
            for j in range(k + 1, n):
                dx = xr[j] - xk
                a = dx * dx - yr[j] * yr[j] + hk * hk
                b = 2.0 * dx * yr[j]
                _sqrt_up(a, b, dx, &re, &im)
                xr[j] = xk + re
                yr[j] = im
    return xi[:used].copy(), hh[:used].copy(), used, bad
