"""Rectangle uniformisation, vertical-slit Loewner chains and driving extraction."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import ellipj, ellipk, ellipkm1, elliprf

from . import kernels
from ._kernels_py import sqrt_up
from .lattice import GridDomain, Vertex


class DegenerateStep(ValueError):
    """A curve point landed on or below the real line during unzipping."""

    def __init__(self, index: int):
        super().__init__(f"degenerate step at point {index}")
        self.index = index


class BranchFailure(ValueError):
    """A point lies on a slit or outside the chain's domain."""


# ---------------------------------------------------------------------------
# Jacobi elliptic functions of a complex argument

def _modulus_for_ratio(ratio: float) -> tuple[float, float]:
    """Parameter ``m`` (and ``1 - m``) with ``K(1-m)/K(m) = ratio``."""
    if ratio >= 1.0:
        f = lambda x: ellipkm1(np.exp(x)) / ellipk(np.exp(x)) - ratio
        x = brentq(f, -700.0, np.log(0.5), xtol=1e-14, rtol=1e-15)
        m = float(np.exp(x))
        return m, 1.0 - m
    f = lambda x: ellipk(np.exp(x)) / ellipkm1(np.exp(x)) - ratio
    x = brentq(f, -700.0, np.log(0.5), xtol=1e-14, rtol=1e-15)
    m1 = float(np.exp(x))
    return 1.0 - m1, m1


def _jacobi_addition(u, m, m1):
    s, c, d, _ = ellipj(u.real, m)
    s1, c1, d1, _ = ellipj(u.imag, m1)
    den = c1 * c1 + m * s * s * s1 * s1
    sn = s * d1 + 1j * c * d * s1 * c1
    cn = c * c1 - 1j * s * d * s1 * d1
    dn = d * c1 * d1 - 1j * m * s * c * s1
    return sn, cn, dn, den + 0j


def jacobi_complex(u, m: float, m1: float, kc: float | None = None):
    """``(sn, cn, dn)`` at complex ``u`` in numerator/denominator form.

    Returns ``(sn_num, cn_num, dn_num, den)`` with each function equal to
    ``num / den``; ``den`` vanishes only at poles.  ``kc`` is the
    complementary quarter period; points in the upper half of the period
    rectangle are evaluated through the shift by ``i K'`` so that the pole at
    ``i K'`` is represented as ``(finite) / 0`` instead of ``0 / 0``.
    """
    u = np.asarray(u, dtype=np.complex128)
    if kc is None:
        return _jacobi_addition(u, m, m1)
    upper = u.imag > 0.5 * kc
    sn, cn, dn, den = _jacobi_addition(np.where(upper, u - 1j * kc, u), m, m1)
    if np.any(upper):
        k = np.sqrt(m)
        # sn(v + iK') = 1/(k sn v), cn = -i dn/(k sn v), dn = -i cn/sn v
        sn, cn, dn, den = (np.where(upper, den, sn), np.where(upper, -1j * dn, cn),
                           np.where(upper, -1j * k * cn, dn), np.where(upper, k * sn, den))
    return sn, cn, dn, den


def inverse_sn(zeta, m: float):
    """Principal ``sn^{-1}``: maps the upper half-plane onto ``(-K, K) x (0, K')``."""
    zeta = np.asarray(zeta, dtype=np.complex128)
    return zeta * elliprf(1.0 - zeta * zeta, 1.0 - m * zeta * zeta, 1.0)


# ---------------------------------------------------------------------------
# rectangle -> upper half-plane

@dataclass(frozen=True)
class RectMap:
    """Conformal map of the rectangle ``corner + (0, W) x (0, H)`` onto the upper half-plane.

    ``a`` goes to 0, ``b`` to infinity and ``Im phi(origin) = 1``.  Points are
    physical complex coordinates.
    """

    width: float
    height: float
    a: complex
    b: complex
    origin: complex
    corner: complex = 0j
    m: float = field(init=False)
    m1: float = field(init=False)
    quarter: float = field(init=False)
    quarter_c: float = field(init=False)
    scale: float = field(init=False)
    mobius: tuple[float, float, float, float] = field(init=False)
    gain: float = field(init=False)

    def __post_init__(self):
        aspect = self.width / self.height
        if not 0.1 <= aspect <= 10.0:
            raise ValueError(f"aspect {aspect:.3g} outside [0.1, 10]")
        if abs(self.a - self.b) < 1e-14 * max(self.width, self.height):
            raise ValueError("a and b must be distinct boundary points")
        for name, p in (("a", self.a), ("b", self.b)):
            if not self._on_boundary(p):
                raise ValueError(f"{name}={p} is not on the rectangle boundary")
        ratio = 2.0 * self.height / self.width
        m, m1 = _modulus_for_ratio(ratio)
        set_ = lambda k, v: object.__setattr__(self, k, v)
        set_("m", m)
        set_("m1", m1)
        set_("quarter", float(ellipk(m)) if m < 0.5 else float(ellipkm1(m1)))
        set_("quarter_c", float(ellipk(m1)) if m1 < 0.5 else float(ellipkm1(m)))
        set_("scale", 2.0 * self.quarter / self.width)
        na, da = self._sn_boundary(self.a)
        nb, db = self._sn_boundary(self.b)
        det = na * db - da * nb
        sign = 1.0 if det > 0 else -1.0
        set_("mobius", (sign * da, -sign * na, db, -nb))
        t0 = self._mobius(self._sn(self._to_u(self.origin)))
        if not t0.imag > 0:
            raise ValueError("origin must lie inside the rectangle")
        set_("gain", 1.0 / float(t0.imag))

    def _on_boundary(self, p: complex) -> bool:
        tol = 1e-12 * max(self.width, self.height)
        p = p - self.corner
        x, y = p.real, p.imag
        on_v = (abs(x) < tol or abs(x - self.width) < tol) and -tol <= y <= self.height + tol
        on_h = (abs(y) < tol or abs(y - self.height) < tol) and -tol <= x <= self.width + tol
        return on_v or on_h

    def _to_u(self, p):
        return self.scale * (np.asarray(p, dtype=np.complex128) - self.corner - self.width / 2.0)

    def _sn(self, u):
        sn, _, _, den = jacobi_complex(u, self.m, self.m1, self.quarter_c)
        with np.errstate(divide="ignore", invalid="ignore"):
            return sn / den

    def _sn_boundary(self, p: complex) -> tuple[float, float]:
        # boundary images are real, possibly infinite: keep them as num/den
        sn, _, _, den = jacobi_complex(self._to_u(p), self.m, self.m1, self.quarter_c)
        num, den = float(np.real(sn)), float(np.real(den))
        norm = np.hypot(num, den)
        return num / norm, den / norm

    def _mobius(self, zeta):
        a, b, c, d = self.mobius
        return (a * zeta + b) / (c * zeta + d)

    def forward(self, p):
        """``phi(p)`` for physical points ``p`` (array or scalar)."""
        a, b, c, d = self.mobius
        sn, _, _, den = jacobi_complex(self._to_u(p), self.m, self.m1, self.quarter_c)
        return self.gain * (a * sn + b * den) / (c * sn + d * den)

    __call__ = forward

    def derivative(self, p):
        """``phi'(p)``."""
        a, b, c, d = self.mobius
        sn, cn, dn, den = jacobi_complex(self._to_u(p), self.m, self.m1, self.quarter_c)
        # d/du sn = cn dn; Mobius derivative (ad - bc)/(c zeta + d)^2 in num/den form
        return self.gain * (a * d - b * c) * cn * dn * self.scale / (c * sn + d * den) ** 2

    def inverse(self, w):
        """``phi^{-1}(w)`` for ``w`` in the closed upper half-plane."""
        a, b, c, d = self.mobius
        w = np.asarray(w, dtype=np.complex128) / self.gain
        zeta = (d * w - b) / (a - c * w)
        u = inverse_sn(zeta, self.m)
        # one Newton polish on sn(u) = zeta
        sn, cn, dn, den = jacobi_complex(u, self.m, self.m1, self.quarter_c)
        with np.errstate(divide="ignore", invalid="ignore"):
            corr = (sn / den - zeta) / (cn * dn / den ** 2)
        u = np.where(np.isfinite(corr) & (np.abs(corr) < 1e-6), u - corr, u)
        return u / self.scale + self.width / 2.0 + self.corner


def rect_to_halfplane(width: float, height: float, a: complex, b: complex,
                      origin: complex, corner: complex = 0j) -> RectMap:
    return RectMap(float(width), float(height), complex(a), complex(b), complex(origin),
                   complex(corner))


def rect_map_for(dom: GridDomain, cols: int | None = None, rows: int | None = None) -> RectMap:
    """Map of the polygonal rectangle behind a :func:`build_rect_domain` domain."""
    if cols is None or rows is None:
        xs = [v[0] for v in dom.interior]
        ys = [v[1] for v in dom.interior]
        if min(xs) != 1 or min(ys) != 1 or len(dom.interior) != max(xs) * max(ys):
            raise ValueError("domain is not a rectangle built at the origin")
        cols, rows = max(xs), max(ys)
    h = dom.mesh
    return rect_to_halfplane((cols + 1) * h, (rows + 1) * h, dom.position(dom.a_out),
                             dom.position(dom.b_out), dom.position(dom.origin))


# ---------------------------------------------------------------------------
# slit chains and driving functions

@dataclass(frozen=True)
class SlitChain:
    """Composition ``g = g_n o ... o g_1`` of vertical slit maps.

    ``g_k(z) = xi_k + sqrt((z - xi_k)^2 + h_k^2)`` removes the segment from
    ``xi_k`` to ``xi_k + i h_k``; its half-plane capacity is ``h_k^2 / 4``.
    """

    xi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    h: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "xi", np.ascontiguousarray(self.xi, dtype=float))
        object.__setattr__(self, "h", np.ascontiguousarray(self.h, dtype=float))
        if self.xi.shape != self.h.shape:
            raise ValueError("xi and h must have equal length")

    def __len__(self) -> int:
        return self.xi.size

    @property
    def capacity(self) -> float:
        return float(np.sum(self.h ** 2) / 4.0)

    def truncated(self, upto: int) -> "SlitChain":
        return SlitChain(self.xi[:upto], self.h[:upto])

    def appended(self, xi, h) -> "SlitChain":
        return SlitChain(np.append(self.xi, xi), np.append(self.h, h))

    def forward(self, z, upto: int | None = None):
        z = np.asarray(z, dtype=np.complex128)
        k = len(self) if upto is None else upto
        out = kernels.slit_forward(np.ascontiguousarray(z.ravel()), self.xi[:k], self.h[:k])
        return out.reshape(z.shape)

    def inverse(self, w, upto: int | None = None):
        w = np.asarray(w, dtype=np.complex128)
        k = len(self) if upto is None else upto
        out = kernels.slit_inverse(np.ascontiguousarray(w.ravel()), self.xi[:k], self.h[:k])
        return out.reshape(w.shape)

    def inverse_derivative(self, w):
        """``(g^{-1})'(w)`` by the chain rule through the elementary inverses."""
        w = np.array(w, dtype=np.complex128)
        deriv = np.ones_like(w)
        for x, hk in zip(self.xi[::-1].tolist(), self.h[::-1].tolist()):
            d = w - x
            root = sqrt_up(d * d - hk * hk, d)
            with np.errstate(divide="ignore", invalid="ignore"):
                deriv = deriv * d / root
            w = x + root
        return deriv


@dataclass(frozen=True)
class DrivingFunction:
    """Piecewise-constant driving term: value ``xi[k]`` on the k-th capacity step."""

    dt: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "dt", np.asarray(self.dt, dtype=float))
        object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if self.dt.shape != self.xi.shape:
            raise ValueError("dt and xi must have equal length")
        if np.any(self.dt <= 0):
            raise ValueError("capacity increments must be positive")

    @property
    def times(self) -> np.ndarray:
        return np.cumsum(self.dt)

    @property
    def total_capacity(self) -> float:
        return float(self.dt.sum())

    def __len__(self) -> int:
        return self.dt.size

    def index_at(self, t: float) -> int | None:
        """First step whose cumulative capacity reaches ``t`` (None if never)."""
        # relative slack absorbs round-off in the cumulative sum
        k = int(np.searchsorted(self.times, t * (1.0 - 1e-9), side="left"))
        return k if k < len(self) else None

    def value_at(self, t: float) -> float:
        if t <= 0:
            return 0.0
        k = self.index_at(t)
        if k is None:
            raise ValueError(f"driving function stops at capacity {self.total_capacity} < {t}")
        return float(self.xi[k])

    def to_csv(self, header: dict | None = None) -> str:
        buf = io.StringIO()
        if header:
            for key, val in header.items():
                buf.write(f"# {key}: {val}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "dt", "xi", "t"])
        for k, (d, x, t) in enumerate(zip(self.dt, self.xi, self.times)):
            w.writerow([k, repr(float(d)), repr(float(x)), repr(float(t))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DrivingFunction":
        rows = [r for r in csv.reader(line for line in text.splitlines()
                                      if line and not line.startswith("#"))][1:]
        return cls([float(r[1]) for r in rows], [float(r[2]) for r in rows])

    def as_chain(self) -> SlitChain:
        return SlitChain(self.xi, 2.0 * np.sqrt(self.dt))


def extract_driving(points, cap_limit: float = np.inf) -> tuple[DrivingFunction, SlitChain]:
    """Unzip a half-plane polyline with vertical slits.

    Point ``k`` is mapped by the chain built from the points before it; its
    image ``w`` contributes ``xi = Re w`` and ``dt = (Im w)^2 / 4``.  Stops once
    the capacity reaches ``cap_limit``.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.complex128).ravel())
    if pts.size == 0:
        return DrivingFunction([], []), SlitChain()
    xi, h, used, bad = kernels.unzip(pts, float(cap_limit))
    if bad >= 0:
        raise DegenerateStep(int(bad))
    return DrivingFunction(h * h / 4.0, xi), SlitChain(xi, h)


def evaluate_gt(chain: SlitChain, z, upto: int | None = None):
    """Image of ``z`` under the first ``upto`` maps of the chain."""
    z = np.asarray(z, dtype=np.complex128)
    if np.any(z.imag < -1e-12):
        raise BranchFailure("point below the real line")
    return chain.forward(z, upto)


def curve_to_halfplane(dom: GridDomain, rmap: RectMap, curve: Sequence[Vertex]) -> np.ndarray:
    """Images of the interior vertices of a lattice curve (outside endpoints dropped)."""
    inner = [v for v in curve if tuple(v) in dom.interior]
    if not inner:
        return np.zeros(0, dtype=np.complex128)
    pos = dom.mesh * np.array(inner, dtype=float)
    img = rmap.forward(pos[:, 0] + 1j * pos[:, 1])
    return np.where(img.imag < 0, img.real + 0j, img)


def synthesize_curve(driving: DrivingFunction) -> np.ndarray:
    """Tip positions ``g_k^{-1}(xi_k)`` of the chain generated by a driving function."""
    chain = driving.as_chain()
    tips = np.empty(len(driving), dtype=np.complex128)
    for k in range(len(driving)):
        tips[k] = chain.inverse(np.array([driving.xi[k] + 0j]), upto=k + 1)[0]
    return tips


__all__ = [
    "BranchFailure", "DegenerateStep", "DrivingFunction", "RectMap", "SlitChain",
    "curve_to_halfplane", "evaluate_gt", "extract_driving", "inverse_sn", "jacobi_complex",
    "rect_map_for", "rect_to_halfplane", "synthesize_curve",
]
