"""Pure-Python versions of the compiled kernels (same signatures, same draws)."""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _choose(u: float, row) -> int:
    k = 0
    while k < 4 and u >= row[k]:
        k += 1
    return k


def walk(nbr, cum, start, bit_generator):
    gen = np.random.Generator(bit_generator)
    nbr = nbr.tolist()
    cum = cum.tolist()
    v = int(start)
    out = [v]
    while True:
        k = _choose(gen.random(), cum[v])
        if k == 4:
            break
        v = nbr[v][k]
        out.append(v)
    return np.array(out, dtype=np.int64)


def _lerw_list(nbr, cum, start, gen):
    v = start
    path = [v]
    pos = {v: 0}
    while True:
        k = _choose(gen.random(), cum[v])
        if k == 4:
            break
        w = nbr[v][k]
        j = pos.get(w)
        if j is not None:
            for x in path[j + 1:]:
                del pos[x]
            del path[j + 1:]
        else:
            pos[w] = len(path)
            path.append(w)
        v = w
    return path


def lerw(nbr, cum, start, bit_generator):
    gen = np.random.Generator(bit_generator)
    return np.array(_lerw_list(nbr.tolist(), cum.tolist(), int(start), gen), dtype=np.int64)


def lerw_batch(nbr, cum, start, count, bit_generator):
    gen = np.random.Generator(bit_generator)
    nbr_l, cum_l = nbr.tolist(), cum.tolist()
    flat: list[int] = []
    offsets = np.zeros(count + 1, dtype=np.int64)
    for i in range(count):
        flat.extend(_lerw_list(nbr_l, cum_l, int(start), gen))
        offsets[i + 1] = len(flat)
    return np.array(flat, dtype=np.int64), offsets


def lerw_keys(nbr, cum, start, count, bit_generator):
    gen = np.random.Generator(bit_generator)
    nbr_l, cum_l = nbr.tolist(), cum.tolist()
    base = len(nbr_l) + 1
    keys = np.empty(count, dtype=np.int64)
    for i in range(count):
        path = _lerw_list(nbr_l, cum_l, int(start), gen)
        keys[i] = sum((x + 1) * base**j for j, x in enumerate(path))
    return keys


def loop_erase(seq):
    out: list[int] = []
    where: dict[int, int] = {}
    for x in np.asarray(seq).tolist():
        j = where.get(x)
        if j is not None:
            for y in out[j + 1:]:
                del where[y]
            del out[j + 1:]
        else:
            where[x] = len(out)
            out.append(x)
    return np.array(out, dtype=np.int64)


def sqrt_up(s2: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Square root in the closed upper half-plane; real roots take the sign of ``ref``."""
    s = np.sqrt(s2)
    s = np.where(s.imag < 0, -s, s)
    on_axis = s.imag == 0
    if np.any(on_axis):
        s = np.where(on_axis, np.copysign(np.abs(s.real), ref.real) + 0j, s)
    return s


def slit_forward(z, xi, h):
    z = np.array(z, dtype=np.complex128)
    for x, hk in zip(np.asarray(xi).tolist(), np.asarray(h).tolist()):
        d = z - x
        z = x + sqrt_up(d * d + hk * hk, d)
    return z


def slit_inverse(w, xi, h):
    w = np.array(w, dtype=np.complex128)
    for x, hk in zip(np.asarray(xi).tolist()[::-1], np.asarray(h).tolist()[::-1]):
        d = w - x
        w = x + sqrt_up(d * d - hk * hk, d)
    return w


def unzip(points, cap_limit):
    pts = np.array(points, dtype=np.complex128)
    n = pts.size
    xi = np.empty(n)
    hh = np.empty(n)
    cap = 0.0
    used, bad = 0, -1
    for k in range(n):
        w = pts[k]
        if w.imag <= 0.0:
            bad = k
            break
        xi[k], hh[k] = w.real, w.imag
        used = k + 1
        cap += 0.25 * w.imag * w.imag
        if cap >= cap_limit:
            break
        rest = pts[k + 1:]
        d = rest - w.real
        pts[k + 1:] = w.real + sqrt_up(d * d + w.imag * w.imag, d)
    return xi[:used].copy(), hh[:used].copy(), used, bad
