"""Continuum kernels on an evolving slit rectangle and the massive drift.

Fields live on the vertices ``(i h, j h)``, ``1 <= i <= cols``,
``1 <= j <= rows`` of a mesh over the rectangle ``(0, (cols+1) h) x (0, (rows+1) h)``
(shifted by the map's ``corner``).  With ``phi_t = g_t o phi - xi_t``:

* ``P = -Im(1/phi_t) / pi`` and ``Q = -Im(1/phi_t^2) / pi``;
* ``K0 = Im phi_t``, the closed form of ``G_t(., b) / P_t(b)``;
* Helmholtz solves use the standard five-point Laplacian, so they invert
  ``-Delta + M^2`` with Dirichlet data outside the active cells;
* ``P_m = P - M^2 H(P)``, ``K = K0 - M^2 H(K0)``,
  ``N = 1 / (1 - M^2 int P_m K0)`` and ``lambda = -M^2 N int Q K``.

``M`` is a continuum mass.  A lattice walk with mass ``m`` on mesh ``d``
matches ``M = 2 m / sqrt(1 - m^2 d^2)`` on the same mesh (see
:func:`continuum_mass`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.interpolate import RectBivariateSpline

from . import kernels
from .conformal import RectMap, SlitChain, rect_to_halfplane
from .potential import NumericalFailure


class MeshTooCoarse(NumericalFailure):
    """The normalisation denominator is not positive for this mass and mesh."""


def continuum_mass(m: float, mesh: float) -> float:
    """Continuum mass whose five-point Helmholtz operator matches the killed walk."""
    return 2.0 * m / math.sqrt(1.0 - (m * mesh) ** 2)


def lattice_mass(M: float, mesh: float) -> float:
    """Inverse of :func:`continuum_mass`."""
    return M / math.sqrt(4.0 + (M * mesh) ** 2)


# ---------------------------------------------------------------------------
# mesh and state

@dataclass(frozen=True, eq=False)
class MeshGrid:
    rmap: RectMap
    cols: int
    rows: int

    @property
    def h(self) -> float:
        return self.rmap.width / (self.cols + 1)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.cols, self.rows)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def __post_init__(self):
        if abs(self.rmap.height / (self.rows + 1) - self.h) > 1e-12 * self.h:
            raise ValueError("mesh must be square: width/(cols+1) == height/(rows+1)")
        i = np.arange(1, self.cols + 1)
        j = np.arange(1, self.rows + 1)
        pos = self.rmap.corner + self.h * (i[:, None] + 1j * j[None, :])
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "phi0", self.rmap.forward(pos))

    def index_of(self, p: complex) -> tuple[int, int]:
        """Mesh indices of the vertex nearest to the physical point ``p``."""
        q = (complex(p) - self.rmap.corner) / self.h
        i = min(max(int(round(q.real)), 1), self.cols) - 1
        j = min(max(int(round(q.imag)), 1), self.rows) - 1
        return i, j


def square_grid(n: int, side: float = 1.0, a: str = "bottom-center", b: str = "top-center",
                corner: complex = 0j) -> MeshGrid:
    """``n x n`` interior vertices on the square of the given side."""
    rmap = rect_to_halfplane(side, side, corner + _side_point(side, side, a),
                             corner + _side_point(side, side, b),
                             corner + complex(side / 2, side / 2), corner)
    return MeshGrid(rmap, n, n)


def rect_grid(cols: int, rows: int, mesh: float, a, b, origin: complex | None = None) -> MeshGrid:
    w, hgt = (cols + 1) * mesh, (rows + 1) * mesh
    o = complex(w / 2, hgt / 2) if origin is None else origin
    return MeshGrid(rect_to_halfplane(w, hgt, _point(w, hgt, a), _point(w, hgt, b), o), cols, rows)


def _side_point(w: float, h: float, where: str) -> complex:
    side, _, pos = where.partition("-")
    frac = 0.5 if pos in ("", "center") else float(pos)
    return {"bottom": complex(frac * w, 0), "top": complex(frac * w, h),
            "left": complex(0, frac * h), "right": complex(w, frac * h)}[side]


def _point(w, h, where) -> complex:
    return _side_point(w, h, where) if isinstance(where, str) else complex(where)


@dataclass(frozen=True, eq=False)
class MeshState:
    """Snapshot of the slit rectangle at one capacity time.

    ``zt`` holds ``g_t(phi(x))`` for every mesh vertex; ``active`` marks the
    vertices of the target-side component of the rectangle minus the curve.
    """

    grid: MeshGrid
    chain: SlitChain
    xi: float
    zt: np.ndarray
    active: np.ndarray
    tips: tuple[complex, ...] = ()

    @property
    def t(self) -> float:
        return self.chain.capacity

    @property
    def phi(self) -> np.ndarray:
        return self.zt - self.xi


def _segment_cells(grid: MeshGrid, p0: complex, p1: complex) -> list[tuple[int, int]]:
    """Mesh vertices whose closed cell square meets the segment ``p0 p1``."""
    h = grid.h
    a = (p0 - grid.rmap.corner) / h
    b = (p1 - grid.rmap.corner) / h
    lo_i = max(int(math.floor(min(a.real, b.real) - 0.5)), 1)
    hi_i = min(int(math.ceil(max(a.real, b.real) + 0.5)), grid.cols)
    lo_j = max(int(math.floor(min(a.imag, b.imag) - 0.5)), 1)
    hi_j = min(int(math.ceil(max(a.imag, b.imag) + 0.5)), grid.rows)
    d = b - a
    out = []
    for i in range(lo_i, hi_i + 1):
        for j in range(lo_j, hi_j + 1):
            # Liang-Barsky clip of the segment against [i-1/2, i+1/2] x [j-1/2, j+1/2]
            t0, t1 = 0.0, 1.0
            ok = True
            for pk, qk in ((-d.real, a.real - (i - 0.5)), (d.real, (i + 0.5) - a.real),
                           (-d.imag, a.imag - (j - 0.5)), (d.imag, (j + 0.5) - a.imag)):
                if pk == 0.0:
                    if qk < 0.0:
                        ok = False
                        break
                    continue
                r = qk / pk
                if pk < 0:
                    t0 = max(t0, r)
                else:
                    t1 = min(t1, r)
                if t0 > t1:
                    ok = False
                    break
            if ok:
                out.append((i - 1, j - 1))
    return out


class MeshTracker:
    """Grows a slit chain step by step and emits :class:`MeshState` snapshots."""

    def __init__(self, grid: MeshGrid, track_mesh: bool = True):
        self.grid = grid
        self.track_mesh = track_mesh
        self.xi_list: list[float] = []
        self.h_list: list[float] = []
        self.xi = 0.0
        self.zt = grid.phi0.copy()
        self.hit = np.zeros(grid.shape, dtype=bool)
        self.tips: list[complex] = []
        self._last = complex(grid.rmap.a)
        self._b_cell = grid.index_of(grid.rmap.b)
        self.active = self._component(self.hit, self.zt)

    @property
    def chain(self) -> SlitChain:
        return SlitChain(np.array(self.xi_list), np.array(self.h_list))

    @property
    def t(self) -> float:
        return float(np.sum(np.square(self.h_list)) / 4.0)

    def _component(self, hit, zt) -> np.ndarray:
        ok = ~hit & (zt.imag > 0)
        labels, _ = ndimage.label(ok)
        lab = labels[self._b_cell]
        if lab == 0:
            raise NumericalFailure("target cell removed from the mesh")
        return labels == lab

    def tip_position(self) -> complex:
        """Physical position of the current tip, ``phi^{-1}(g_t^{-1}(xi_t))``."""
        return self._tip(self.xi, self.xi_list, self.h_list)

    def _tip(self, xi, xs, hs) -> complex:
        w = kernels.slit_inverse(np.array([xi + 0j]), np.array(xs), np.array(hs))
        return complex(self.grid.rmap.inverse(w)[0])

    def advance(self, xi: float, dt: float) -> complex:
        """Append a vertical slit at ``xi`` of capacity ``dt``; returns the new tip.

        On :class:`NumericalFailure` the tracker is left unchanged.
        """
        xi = float(xi)
        hk = 2.0 * math.sqrt(dt)
        xs = self.xi_list + [xi]
        hs = self.h_list + [hk]
        tip = self._tip(xi, xs, hs)
        if not np.isfinite(tip):
            raise NumericalFailure("tip preimage is not finite")
        if self.track_mesh:
            z = kernels.slit_forward(np.ascontiguousarray(self.zt.ravel()), np.array([xi]),
                                     np.array([hk]))
            zt = z.reshape(self.grid.shape)
            hit = self.hit.copy()
            # a large driving increment starts the slit below the previous tip
            base = self._tip(xi, self.xi_list, self.h_list) if self.xi_list else self._last
            if not np.isfinite(base):
                base = self._last
            for p0 in {base, self._last}:
                for c in _segment_cells(self.grid, p0, tip):
                    hit[c] = True
            self.active = self._component(hit, zt)
            self.zt, self.hit = zt, hit
        self.xi_list, self.h_list, self.xi = xs, hs, xi
        self._last = tip
        self.tips.append(tip)
        return tip

    def state(self) -> MeshState:
        return MeshState(self.grid, self.chain, self.xi, self.zt, self.active, tuple(self.tips))


def initial_state(grid: MeshGrid) -> MeshState:
    return MeshTracker(grid).state()


def state_from_chain(grid: MeshGrid, chain: SlitChain) -> MeshState:
    tracker = MeshTracker(grid)
    for x, hk in zip(chain.xi.tolist(), chain.h.tolist()):
        tracker.advance(x, hk * hk / 4.0)
    return tracker.state()


# ---------------------------------------------------------------------------
# fields

@dataclass(frozen=True, eq=False)
class Field:
    """Values on the mesh vertices (zero outside the active set)."""

    state: MeshState
    values: np.ndarray


def pq_fields(state: MeshState) -> tuple[Field, Field]:
    phi = np.where(state.active, state.phi, 1j)
    if np.any(phi == 0):
        raise NumericalFailure("phi vanishes on an active cell")
    inv = 1.0 / phi
    p = np.where(state.active, -inv.imag / math.pi, 0.0)
    q = np.where(state.active, -(inv * inv).imag / math.pi, 0.0)
    return Field(state, p), Field(state, q)


def kernel_field(state: MeshState) -> Field:
    """``G_t(w, b) / P_t(b) = Im phi_t(w)``."""
    return Field(state, np.where(state.active, state.phi.imag, 0.0))


class HelmholtzSolver:
    """Factorised ``-Delta_h + M^2 w`` on the active vertices of one state.

    ``weight`` is an optional positive coefficient field ``w`` (default 1).
    """

    def __init__(self, active: np.ndarray, h: float, M: float, weight: np.ndarray | None = None):
        self.active = active
        self.h = h
        n = int(active.sum())
        idx = np.full(active.shape, -1, dtype=np.int64)
        idx[active] = np.arange(n)
        self.idx = idx
        rows, cols = [], []
        for sl_a, sl_b in (((slice(1, None), slice(None)), (slice(None, -1), slice(None))),
                           ((slice(None), slice(1, None)), (slice(None), slice(None, -1)))):
            a, b = idx[sl_a], idx[sl_b]
            both = (a >= 0) & (b >= 0)
            rows += [a[both], b[both]]
            cols += [b[both], a[both]]
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        off = sp.csc_matrix((np.ones(r.size), (r, c)), shape=(n, n))
        diag = 4.0 + (M * h) ** 2 * (1.0 if weight is None else weight[active])
        self.matrix = (sp.diags(np.broadcast_to(diag, (n,)).astype(float), format="csc") - off).tocsc()
        self.lu = spla.splu(self.matrix)

    def solve(self, *rhs: np.ndarray) -> list[np.ndarray]:
        b = np.stack([r[self.active] for r in rhs], axis=1) * self.h ** 2
        x = self.lu.solve(b)
        res = np.abs(self.matrix @ x - b).max()
        scale = max(np.abs(b).max(), 1e-300)
        if res > 1e-10 * scale:
            raise NumericalFailure(f"Helmholtz residual {res:.3e} (scale {scale:.3e})")
        out = []
        for k in range(len(rhs)):
            u = np.zeros(self.active.shape)
            u[self.active] = x[:, k]
            out.append(u)
        return out


def helmholtz_solve(state: MeshState, M: float, f: Field | np.ndarray) -> Field:
    """``u = (-Delta + M^2)^{-1} f`` on the active cells, zero Dirichlet data."""
    vals = f.values if isinstance(f, Field) else np.asarray(f, dtype=float)
    solver = HelmholtzSolver(state.active, state.grid.h, M)
    return Field(state, solver.solve(np.where(state.active, vals, 0.0))[0])


@dataclass(frozen=True)
class MassiveKernels:
    P: np.ndarray
    Q: np.ndarray
    K0: np.ndarray
    P_m: np.ndarray
    K: np.ndarray
    N: float


def massive_kernels(state: MeshState, M: float) -> MassiveKernels:
    p, q = pq_fields(state)
    k0 = kernel_field(state).values
    if M == 0:
        return MassiveKernels(p.values, q.values, k0, p.values, k0, 1.0)
    solver = HelmholtzSolver(state.active, state.grid.h, M)
    hp, hk = solver.solve(p.values, k0)
    p_m = p.values - M * M * hp
    k = k0 - M * M * hk
    denom = 1.0 - M * M * state.grid.cell_area * float(np.sum(p_m * k0))
    if denom <= 0:
        raise MeshTooCoarse(f"normalisation denominator {denom:.3e} <= 0 at M={M}")
    return MassiveKernels(p.values, q.values, k0, p_m, k, 1.0 / denom)


@dataclass(frozen=True)
class DriftReport:
    t: float
    N_m: float
    lam: float
    int_P: float
    int_PPm: float
    int_QK: float

    def row(self) -> list[float]:
        return [self.t, self.N_m, self.lam, self.int_P, self.int_PPm, self.int_QK]

    HEADER = ("t", "N_m", "lambda", "int_P", "int_P_Pm", "int_QK")


def drift_lambda(state: MeshState, M: float) -> DriftReport:
    """Drift ``lambda_t = -M^2 N int Q K dA``; exactly zero for ``M = 0``."""
    area = state.grid.cell_area
    if M == 0:
        p, _ = pq_fields(state)
        ip = area * float(p.values.sum())
        ipp = area * float((p.values ** 2).sum())
        return DriftReport(state.t, 1.0, 0.0, ip, ipp, 0.0)
    mk = massive_kernels(state, M)
    iqk = area * float(np.sum(mk.Q * mk.K))
    lam = -M * M * iqk * mk.N
    return DriftReport(state.t, mk.N, lam, area * float(mk.P.sum()),
                       area * float(np.sum(mk.P * mk.P_m)), iqk)


def integral_diagnostics(state: MeshState) -> tuple[float, float]:
    """``(int P dA, int P^2 dA)`` over the active cells."""
    p, _ = pq_fields(state)
    area = state.grid.cell_area
    return area * float(p.values.sum()), area * float((p.values ** 2).sum())


# ---------------------------------------------------------------------------
# Hadamard variation

def green_halfplane(u, v):
    """Green function of the upper half-plane, ``log|(u - conj v)/(u - v)| / (2 pi)``."""
    u = np.asarray(u, dtype=np.complex128)
    return np.log(np.abs((u - np.conj(v)) / (u - v))) / (2.0 * math.pi)


def poisson_halfplane(u):
    return -np.imag(1.0 / np.asarray(u, dtype=np.complex128)) / math.pi


def hadamard_halfplane(phi_w: complex, phi_z: complex, eps: float) -> float:
    """Relative residual of the massless Hadamard formula in the half-plane.

    ``phi_w, phi_z`` are ``g_t(w) - xi_t`` and ``g_t(z) - xi_t``; growing the
    hull by capacity ``eps`` at the tip maps them to ``sqrt(phi^2 + 4 eps)``.
    """
    grow = lambda u: complex(kernels.slit_forward(np.array([u]), np.array([0.0]),
                                                  np.array([2.0 * math.sqrt(eps)]))[0])
    g0 = green_halfplane(phi_w, phi_z)
    g1 = green_halfplane(grow(phi_w), grow(phi_z))
    target = -2.0 * math.pi * poisson_halfplane(phi_w) * poisson_halfplane(phi_z)
    return abs((g1 - g0) / eps - target) / abs(target)


@dataclass(frozen=True)
class HadamardResult:
    classical: float
    massive: float
    derivative: float
    predicted: float


def _full_grid(grid: MeshGrid, values: np.ndarray) -> RectBivariateSpline:
    full = np.zeros((grid.cols + 2, grid.rows + 2))
    full[1:-1, 1:-1] = values
    x = grid.rmap.corner.real + grid.h * np.arange(grid.cols + 2)
    y = grid.rmap.corner.imag + grid.h * np.arange(grid.rows + 2)
    return RectBivariateSpline(x, y, full, kx=3, ky=3)


def _pulled_back(grid: MeshGrid, chain: SlitChain, xi: float, w: complex, z: complex, M: float):
    """Massive Green function and Poisson kernel at ``w`` computed on the base rectangle.

    With ``F = phi^{-1} o g^{-1} o phi`` the rectangle is mapped onto the slit
    domain; Helmholtz problems pull back to ``(-Delta + M^2 J) u = J f`` with
    ``J = |F'|^2``, so only the coefficient changes with the slit.
    """
    rmap = grid.rmap
    y = grid.positions
    fy = rmap.inverse(chain.inverse(grid.phi0))
    jac = np.abs(chain.inverse_derivative(grid.phi0) * rmap.derivative(y)
                 / rmap.derivative(fy)) ** 2
    pw = complex(chain.forward(np.array([rmap.forward(w)]))[0])
    pz = complex(chain.forward(np.array([rmap.forward(z)]))[0])
    w_hat = complex(rmap.inverse(pw))
    g_cls = float(green_halfplane(pw - xi, pz - xi))
    pk_w = float(poisson_halfplane(pw - xi))
    pk_z = float(poisson_halfplane(pz - xi))
    if M == 0:
        return g_cls, pk_w, pk_z, g_cls, pk_w, pk_z
    rhs_g = jac * green_halfplane(grid.phi0, pz)
    rhs_pw = jac * poisson_halfplane(grid.phi0 - xi)
    solver = HelmholtzSolver(np.ones(grid.shape, dtype=bool), grid.h, M, jac)
    sol_g, sol_p = solver.solve(rhs_g, rhs_pw)
    ug = _full_grid(grid, sol_g)
    up = _full_grid(grid, sol_p)
    z_hat = complex(rmap.inverse(pz))
    corr_g = float(ug(w_hat.real, w_hat.imag)[0, 0])
    corr_pw = float(up(w_hat.real, w_hat.imag)[0, 0])
    corr_pz = float(up(z_hat.real, z_hat.imag)[0, 0])
    return (g_cls, pk_w, pk_z, g_cls - M * M * corr_g, pk_w - M * M * corr_pw,
            pk_z - M * M * corr_pz)


def hadamard_check(state: MeshState, eps: float, w: complex, z: complex,
                   M: float = 0.0) -> HadamardResult:
    """Finite-difference test of ``d/dt G_t(w, z) = -2 pi P_t(w) P_t(z)`` and its massive analogue.

    The hull grows by a vertical slit of capacity ``eps`` at the current
    driving value.
    """
    grid, chain, xi = state.grid, state.chain, state.xi
    grown = chain.appended(xi, 2.0 * math.sqrt(eps))
    for p in (w, z):
        u = complex(grown.forward(np.array([grid.rmap.forward(p)]))[0])
        if not u.imag > 0:
            raise ValueError(f"point {p} is swallowed by the grown slit")
    g0, pw, pz, gm0, pmw, pmz = _pulled_back(grid, chain, xi, w, z, M)
    g1, _, _, gm1, _, _ = _pulled_back(grid, grown, xi, w, z, M)
    cls_pred = -2.0 * math.pi * pw * pz
    cls = abs((g1 - g0) / eps - cls_pred) / abs(cls_pred)
    m_pred = -2.0 * math.pi * pmw * pmz
    m_fd = (gm1 - gm0) / eps
    return HadamardResult(cls, abs(m_fd - m_pred) / abs(m_pred), m_fd, m_pred)


__all__ = [
    "DriftReport", "Field", "HadamardResult", "HelmholtzSolver", "MassiveKernels", "MeshGrid",
    "MeshState", "MeshTooCoarse", "MeshTracker", "continuum_mass", "drift_lambda",
    "green_halfplane", "hadamard_check", "hadamard_halfplane", "helmholtz_solve",
    "initial_state", "integral_diagnostics", "kernel_field", "lattice_mass", "massive_kernels",
    "poisson_halfplane", "pq_fields", "rect_grid", "square_grid", "state_from_chain",
]
