"""Discrete potential theory for the killed walk on a grid domain.

Paths carry weight ``(q/4)`` per edge between interior vertices, where
``q = 1 - m^2 mesh^2``.  Edges from or to a boundary endpoint are not counted,
so with ``G = (I - (q/4) A)^{-1}`` on the interior:

* ``Z(w, z) = G[w, z]`` for interior ``w, z``;
* ``Z(a, z) = G[a_int, z]`` (summed over every tip edge in slit domains);
* ``Z(w, b) = G[w, b_int]`` and ``Z(a, b) = sum G[a_int, b_int]``.
"""

from __future__ import annotations

import contextlib
from collections import OrderedDict
from dataclasses import dataclass
from typing import Iterator

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import DIRECTIONS, GridDomain, Vertex, survival_factor


class NumericalFailure(RuntimeError):
    """A linear solve missed its residual target."""


class Stopped(Exception):
    """The observable's vertex was hit or cut off from the target."""


@dataclass(frozen=True)
class SolverSettings:
    method: str = "direct"      # "direct" (sparse LU) or "cg"
    rtol: float = 1e-12
    check: bool = True
    max_iter: int | None = None  # cg only; default 10 * unknowns


_settings = SolverSettings()


def solver_settings() -> SolverSettings:
    return _settings


@contextlib.contextmanager
def use_solver(settings: SolverSettings) -> Iterator[None]:
    """Temporarily swap the solver configuration (used for negative controls)."""
    global _settings
    old = _settings
    _settings = settings
    _cache.clear()
    try:
        yield
    finally:
        _settings = old
        _cache.clear()


@dataclass(frozen=True)
class ScalarField:
    domain: GridDomain
    values: np.ndarray

    def __getitem__(self, v: Vertex) -> float:
        return float(self.values[self.domain.index[tuple(v)]])

    def as_dict(self) -> dict[Vertex, float]:
        return dict(zip(self.domain.vertices, self.values.tolist()))


def adjacency(dom: GridDomain) -> sp.csr_matrix:
    table = dom.neighbour_table
    rows, cols = np.nonzero(table >= 0)
    data = np.ones(rows.size)
    n = dom.size
    return sp.csr_matrix((data, (rows, table[rows, cols])), shape=(n, n))


class _System:
    """Factorised ``I - (q/4) A`` for one domain and mass."""

    def __init__(self, dom: GridDomain, q: float):
        self.matrix = (sp.identity(dom.size, format="csc") - (q / 4.0) * adjacency(dom)).tocsc()
        self.settings = _settings
        self._lu = spla.splu(self.matrix) if self.settings.method == "direct" else None

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        s = self.settings
        if self._lu is not None:
            x = self._lu.solve(rhs)
        else:
            cols = rhs.reshape(rhs.shape[0], -1)
            out = np.empty_like(cols, dtype=float)
            for k in range(cols.shape[1]):
                cap = s.max_iter or 10 * self.matrix.shape[0]
                out[:, k], info = spla.cg(self.matrix, cols[:, k], rtol=s.rtol, maxiter=cap)
                if info > 0 and s.check:
                    res = np.abs(self.matrix @ out[:, k] - cols[:, k]).max()
                    raise NumericalFailure(f"cg hit the iteration cap {info}, residual {res:.3e}")
            x = out.reshape(rhs.shape)
        if s.check:
            res = np.abs(self.matrix @ x - rhs).max()
            scale = max(np.abs(rhs).max(), 1e-300)
            if res > max(s.rtol, 1e-12) * scale * 10:
                raise NumericalFailure(f"residual {res:.3e} exceeds tolerance (scale {scale:.3e})")
        return x


_cache: "OrderedDict[tuple, _System]" = OrderedDict()
_CACHE_SIZE = 512


def system(dom: GridDomain, m: float) -> _System:
    key = (dom, float(m))
    sysm = _cache.get(key)
    if sysm is None:
        sysm = _System(dom, survival_factor(m, dom.mesh))
        _cache[key] = sysm
        if len(_cache) > _CACHE_SIZE:
            _cache.popitem(last=False)
    else:
        _cache.move_to_end(key)
    return sysm


def solve_massive_harmonic(dom: GridDomain, m: float, boundary_data) -> ScalarField:
    """Solve ``H(v) = (q/4) sum_{v1 ~ v} H(v1)`` with given values on boundary edges.

    ``boundary_data`` maps boundary-edge indices (or a full array over
    ``dom.boundary_edges``) to values; missing edges read as 0.
    """
    q = survival_factor(m, dom.mesh)
    data = np.zeros(len(dom.boundary_edges))
    if isinstance(boundary_data, dict):
        for k, val in boundary_data.items():
            data[k] = val
    else:
        data[:] = boundary_data
    rhs = np.zeros(dom.size)
    idx = dom.index
    for (_, inn), val in zip(dom.boundary_edges, data):
        rhs[idx[inn]] += (q / 4.0) * val
    return ScalarField(dom, system(dom, m).solve(rhs))


def _unit(dom: GridDomain, vertices) -> np.ndarray:
    rhs = np.zeros(dom.size)
    for v in vertices:
        rhs[dom.index[v]] += 1.0
    return rhs


def green_field(dom: GridDomain, m: float, w: Vertex) -> ScalarField:
    """``z -> Z(w, z)`` for an interior vertex ``w``."""
    return ScalarField(dom, system(dom, m).solve(_unit(dom, [tuple(w)])))


def green_matrix(dom: GridDomain, m: float) -> np.ndarray:
    """Dense ``G = (I - (q/4) A)^{-1}``; meant for small and moderate domains."""
    return system(dom, m).solve(np.eye(dom.size))


def hit_b_field(dom: GridDomain, m: float) -> ScalarField:
    """``v -> Z(v, b)``: solves ``h = (q/4) A h + 1_{b_int}``."""
    return ScalarField(dom, system(dom, m).solve(_unit(dom, [dom.b_int])))


def source_field(dom: GridDomain, m: float) -> ScalarField:
    """``z -> Z(a, z)``: paths leaving the a-side, first edge uncounted."""
    return ScalarField(dom, system(dom, m).solve(_unit(dom, dom.source_vertices)))


def z_boundary_to_point(dom: GridDomain, m: float, from_a: bool, z) -> float:
    """Partition function with one or two boundary endpoints.

    ``from_a=True`` gives ``Z(a, z)``; otherwise ``Z(z, b)``.  Passing the
    string ``"b"`` (with ``from_a=True``) gives ``Z(a, b)``.
    """
    if from_a:
        field = source_field(dom, m)
        target = dom.b_int if isinstance(z, str) and z == "b" else tuple(z)
        return field[target]
    return hit_b_field(dom, m)[tuple(z)]


def partition_ab(dom: GridDomain, m: float) -> float:
    return z_boundary_to_point(dom, m, True, "b")


def observable(dom_t: GridDomain, base: GridDomain, m: float, v: Vertex) -> float:
    """Martingale observable ``Z_t(a_t, v) / Z_t(a_t, b) * Z(o, b)``.

    Raises :class:`Stopped` when ``v`` is no longer in the slit domain.
    """
    v = tuple(v)
    if v not in dom_t.interior:
        raise Stopped(f"vertex {v} hit or disconnected")
    src = source_field(dom_t, m)
    return src[v] / src[dom_t.b_int] * normalisation(base)


def normalisation(base: GridDomain) -> float:
    """``Z(o, b)`` on the base domain without mass."""
    return hit_b_field(base, 0.0)[base.origin]


def observable_from_vertex(dom: GridDomain, base: GridDomain, m: float, w: Vertex,
                           v: Vertex) -> float:
    """Observable once the tip has advanced to the interior vertex ``w`` of ``dom``.

    By the last-exit decomposition at ``w`` this equals :func:`observable` on the
    slit domain whenever ``v`` survives the step, and it gives the frozen value
    when the step hits or disconnects ``v``.
    """
    g = green_field(dom, m, w)
    h = hit_b_field(dom, m)
    return g[v] / h[w] * normalisation(base)


def check_resolvent_identity(dom: GridDomain, m: float, w, z) -> float:
    """``|(1 - m^2 d^2) Z^m(w,z) - Z(w,z) + m^2 d^2 sum_v Z(w,v) Z^m(v,z)|``.

    ``w`` may be an interior vertex or ``"a"``; ``z`` an interior vertex or ``"b"``.
    """
    eps = (m * dom.mesh) ** 2

    def left(mass):
        if isinstance(w, str):
            return source_field(dom, mass).values
        return green_field(dom, mass, w).values

    def right(mass):
        if isinstance(z, str):
            return hit_b_field(dom, mass).values
        return green_field(dom, mass, z).values

    zw0, zz_m = left(0.0), right(m)
    zwm = zw0 if m == 0 else left(m)
    zk = dom.index[dom.b_int] if isinstance(z, str) else dom.index[tuple(z)]
    z_wz0, z_wzm = zw0[zk], zwm[zk]
    lhs = (1.0 - eps) * z_wzm
    rhs = z_wz0 - eps * float(zw0 @ zz_m)
    return abs(lhs - rhs)


def boundary_ratio_spread(dom: GridDomain, data1, data2, vertices) -> float:
    """``max (H1/H2)(u) / (H1/H2)(v) - 1`` over the given vertex set (massless)."""
    h1 = solve_massive_harmonic(dom, 0.0, data1)
    h2 = solve_massive_harmonic(dom, 0.0, data2)
    ratios = np.array([h1[v] / h2[v] for v in vertices])
    return float(ratios.max() / ratios.min() - 1.0)


def crossing_ratio(dom: GridDomain) -> np.ndarray:
    """``Z(a, v) Z(v, b) / Z(a, b)`` for every interior vertex (massless)."""
    za = source_field(dom, 0.0).values
    hb = hit_b_field(dom, 0.0).values
    return za * hb / za[dom.index[dom.b_int]]


__all__ = [
    "DIRECTIONS", "NumericalFailure", "ScalarField", "SolverSettings", "Stopped",
    "adjacency", "boundary_ratio_spread", "check_resolvent_identity", "crossing_ratio",
    "green_field", "green_matrix", "hit_b_field", "normalisation", "observable",
    "observable_from_vertex", "partition_ab", "solve_massive_harmonic", "solver_settings",
    "source_field", "system", "use_solver", "z_boundary_to_point",
]
