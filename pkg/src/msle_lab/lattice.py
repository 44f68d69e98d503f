"""Discrete grid domains, slit removal and target vicinities.

Vertices are integer pairs ``(i, j)``; the physical position of a vertex is
``mesh * (i, j)``.  A domain is given by its interior vertex set together with
the list of boundary edges ``(outside, inside)``.  The same outside vertex may
occur in several boundary edges.
"""

from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

Vertex = tuple[int, int]
Edge = tuple[Vertex, Vertex]

# neighbour order doubles as the tie-break priority for the tip edge
DIRECTIONS: tuple[Vertex, ...] = ((1, 0), (0, 1), (-1, 0), (0, -1))


class DomainError(ValueError):
    """Invalid domain construction."""


class TargetSwallowed(DomainError):
    """The target edge is no longer reachable from the slit domain."""


def survival_factor(m: float, mesh: float) -> float:
    """Per-step weight ``q = 1 - m^2 mesh^2``; requires ``m <= 1/(2 mesh)``."""
    if m < 0:
        raise ValueError(f"mass must be nonnegative, got {m}")
    if m * mesh > 0.5 + 1e-12:
        raise ValueError(f"mass {m} too large for mesh {mesh}: need m*mesh <= 1/2")
    return 1.0 - (m * mesh) ** 2


def _neighbours(v: Vertex) -> list[Vertex]:
    return [(v[0] + dx, v[1] + dy) for dx, dy in DIRECTIONS]


def _component(seed: Vertex, allowed: frozenset[Vertex] | set[Vertex]) -> set[Vertex]:
    seen = {seed}
    queue = deque([seed])
    while queue:
        v = queue.popleft()
        for u in _neighbours(v):
            if u in allowed and u not in seen:
                seen.add(u)
                queue.append(u)
    return seen


def boundary_edges_of(interior: frozenset[Vertex]) -> tuple[Edge, ...]:
    """All (outside, inside) pairs, ordered by inside vertex then direction."""
    edges = []
    for v in sorted(interior):
        for u in _neighbours(v):
            if u not in interior:
                edges.append((u, v))
    return tuple(edges)


@dataclass(frozen=True)
class GridDomain:
    """Finite simply connected piece of the square grid with marked edges.

    ``tip_source`` marks slit domains: partition functions leaving the a-side
    then sum over every edge from the tip vertex into the interior, while
    ``a_edge`` still records one of them (first in E, N, W, S order).
    """

    mesh: float
    interior: frozenset[Vertex]
    boundary_edges: tuple[Edge, ...]
    a_edge: int
    b_edge: int
    origin: Vertex
    tip_source: bool = False
    _checked: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.mesh <= 0:
            raise DomainError("mesh must be positive")
        if not self.interior:
            raise DomainError("interior is empty")
        n_edges = len(self.boundary_edges)
        for name, k in (("a_edge", self.a_edge), ("b_edge", self.b_edge)):
            if not 0 <= k < n_edges:
                raise DomainError(f"{name} index {k} out of range")
        if self.a_edge == self.b_edge:
            raise DomainError("a and b must be distinct boundary edges")
        if self.origin not in self.interior:
            raise DomainError(f"origin {self.origin} is not an interior vertex")
        if not self._checked:
            return
        for out, inn in self.boundary_edges:
            if out in self.interior or inn not in self.interior:
                raise DomainError(f"bad boundary edge {(out, inn)}")
            if abs(out[0] - inn[0]) + abs(out[1] - inn[1]) != 1:
                raise DomainError(f"boundary edge {(out, inn)} joins non-adjacent vertices")
        first = next(iter(self.interior))
        if len(_component(first, self.interior)) != len(self.interior):
            raise DomainError("interior is not connected")

    # combinatorial views -------------------------------------------------

    @cached_property
    def vertices(self) -> tuple[Vertex, ...]:
        return tuple(sorted(self.interior))

    @cached_property
    def index(self) -> dict[Vertex, int]:
        return {v: k for k, v in enumerate(self.vertices)}

    @property
    def size(self) -> int:
        return len(self.interior)

    @cached_property
    def coords(self) -> np.ndarray:
        return np.array(self.vertices, dtype=np.int64).reshape(-1, 2)

    @cached_property
    def neighbour_table(self) -> np.ndarray:
        """``(n, 4)`` int32 table of interior neighbour indices, -1 if outside."""
        idx = self.index
        table = np.full((self.size, 4), -1, dtype=np.int32)
        for k, v in enumerate(self.vertices):
            for d, u in enumerate(_neighbours(v)):
                table[k, d] = idx.get(u, -1)
        return table

    @property
    def a_out(self) -> Vertex:
        return self.boundary_edges[self.a_edge][0]

    @property
    def a_int(self) -> Vertex:
        return self.boundary_edges[self.a_edge][1]

    @property
    def b_out(self) -> Vertex:
        return self.boundary_edges[self.b_edge][0]

    @property
    def b_int(self) -> Vertex:
        return self.boundary_edges[self.b_edge][1]

    @cached_property
    def source_vertices(self) -> tuple[Vertex, ...]:
        """Interior endpoints of the edges through which paths leave the a-side."""
        if not self.tip_source:
            return (self.a_int,)
        tip = self.a_out
        return tuple(inn for out, inn in self.boundary_edges if out == tip)

    def position(self, v: Vertex) -> complex:
        return complex(v[0] * self.mesh, v[1] * self.mesh)

    def with_marks(self, a: Edge | None = None, b: Edge | None = None) -> "GridDomain":
        a = self.boundary_edges[self.a_edge] if a is None else a
        b = self.boundary_edges[self.b_edge] if b is None else b
        edges = self.boundary_edges
        return GridDomain(self.mesh, self.interior, edges, edges.index(a),
                          edges.index(b), self.origin, self.tip_source, False)


def domain_from_vertices(mesh: float, interior: Iterable[Sequence[int]], a: Sequence[Sequence[int]],
                         b: Sequence[Sequence[int]], origin: Sequence[int]) -> GridDomain:
    """Build a domain from an explicit vertex list; ``a``/``b`` are (outside, inside) pairs."""
    verts = frozenset((int(i), int(j)) for i, j in interior)
    edges = boundary_edges_of(verts)
    a_e = (tuple(map(int, a[0])), tuple(map(int, a[1])))
    b_e = (tuple(map(int, b[0])), tuple(map(int, b[1])))
    for name, e in (("a", a_e), ("b", b_e)):
        if e not in edges:
            raise DomainError(f"{name}={e} is not a boundary edge of the domain")
    return GridDomain(mesh, verts, edges, edges.index(a_e), edges.index(b_e),
                      (int(origin[0]), int(origin[1])))


_SIDES = ("bottom", "top", "left", "right")


def rect_edge(cols: int, rows: int, locator) -> Edge:
    """Resolve a boundary-edge locator on the ``cols x rows`` block.

    Accepted forms: ``"bottom-center"`` style strings (a bare side name means
    its center), ``(side, k)`` with 1-based position ``k`` along the side, or an
    explicit ``((i, j), (i, j))`` edge.
    """
    if isinstance(locator, str):
        side, _, where = locator.partition("-")
        if side not in _SIDES or where not in ("", "center"):
            raise DomainError(f"unknown locator {locator!r}")
        span = cols if side in ("bottom", "top") else rows
        locator = (side, (span + 1) // 2)
    if isinstance(locator[0], str):
        side, k = locator
        span = cols if side in ("bottom", "top") else rows
        if not 1 <= k <= span:
            raise DomainError(f"position {k} outside side {side} of length {span}")
        return {
            "bottom": ((k, 0), (k, 1)),
            "top": ((k, rows + 1), (k, rows)),
            "left": ((0, k), (1, k)),
            "right": ((cols + 1, k), (cols, k)),
        }[side]
    out, inn = locator
    return (tuple(out), tuple(inn))


def build_rect_domain(cols: int, rows: int, mesh: float, a_pos="bottom-center",
                      b_pos="top-center", origin: Vertex | None = None) -> GridDomain:
    """Rectangle of ``cols x rows`` interior vertices ``(1..cols) x (1..rows)``.

    Its polygonal representation is the open rectangle
    ``(0, (cols+1) mesh) x (0, (rows+1) mesh)``.
    """
    if cols < 1 or rows < 1:
        raise DomainError("cols and rows must be at least 1")
    interior = frozenset((i, j) for i in range(1, cols + 1) for j in range(1, rows + 1))
    edges = boundary_edges_of(interior)
    a = rect_edge(cols, rows, a_pos)
    b = rect_edge(cols, rows, b_pos)
    if a == b:
        raise DomainError("a and b must be distinct")
    for e in (a, b):
        if e not in edges:
            raise DomainError(f"{e} is not a boundary edge of the block")
    if origin is None:
        origin = ((cols + 1) // 2, (rows + 1) // 2)
    origin = (int(origin[0]), int(origin[1]))
    if origin not in interior:
        raise DomainError(f"origin {origin} outside the block")
    return GridDomain(mesh, interior, edges, edges.index(a), edges.index(b), origin,
                      False, False)


def slit_component(dom: GridDomain, curve: Sequence[Vertex]) -> GridDomain:
    """Component of ``dom`` minus the curve that contains the target edge.

    ``curve`` starts at the a-side outside vertex.  The returned domain has its
    a-side at the curve tip.  An empty curve, or a curve consisting of the
    a-side vertex alone, returns ``dom`` itself.
    """
    curve = [tuple(v) for v in curve]
    removed = {v for v in curve if v in dom.interior}
    if not removed:
        return dom
    b_out, b_int = dom.boundary_edges[dom.b_edge]
    if b_int in removed:
        raise TargetSwallowed("target swallowed: curve reaches the target vertex")
    remaining = frozenset(dom.interior - removed)
    comp = frozenset(_component(b_int, remaining))
    tip = curve[-1]
    edges = boundary_edges_of(comp)
    tip_edges = [k for k, (out, _) in enumerate(edges) if out == tip]
    if not tip_edges:
        raise TargetSwallowed("target swallowed: tip is cut off from the target")
    # boundary_edges_of orders by inside vertex; re-rank by direction priority
    def priority(k):
        inn = edges[k][1]
        return DIRECTIONS.index((inn[0] - tip[0], inn[1] - tip[1]))
    a_k = min(tip_edges, key=priority)
    origin = dom.origin if dom.origin in comp else b_int
    return GridDomain(dom.mesh, comp, edges, a_k, edges.index((b_out, b_int)), origin,
                      True, False)


def inner_distances(dom: GridDomain) -> dict[Vertex, float]:
    """Inner distance from the target point to every interior vertex.

    The target sits at the outside vertex of the b-edge.  The inner distance of
    ``z`` is the smallest radius ``r`` such that ``z`` is joined to the target
    through interior lattice edges staying in the closed ball of radius ``r``;
    along straight edges the farthest point is an endpoint, so this is a
    bottleneck shortest-path problem.
    """
    bx, by = dom.b_out
    h = dom.mesh

    def dist(v):
        return h * float(np.hypot(v[0] - bx, v[1] - by))

    start = dom.b_int
    best = {start: dist(start)}
    heap = [(best[start], start)]
    done = set()
    while heap:
        d, v = heapq.heappop(heap)
        if v in done:
            continue
        done.add(v)
        for u in _neighbours(v):
            if u in dom.interior and u not in done:
                du = max(d, dist(u))
                if du < best.get(u, np.inf):
                    best[u] = du
                    heapq.heappush(heap, (du, u))
    return best


def inner_ball(dom: GridDomain, r: float) -> set[Vertex]:
    """Interior vertices whose inner distance to the target is below ``r``."""
    return {v for v, d in inner_distances(dom).items() if d < r}


def check_curve(curve: Sequence[Vertex], simple: bool = True) -> None:
    for u, v in zip(curve, curve[1:]):
        if abs(u[0] - v[0]) + abs(u[1] - v[1]) != 1:
            raise ValueError(f"curve steps from {u} to non-adjacent {v}")
    if simple and len(set(map(tuple, curve))) != len(curve):
        raise ValueError("curve is not simple")
