"""Samplers for the massive loop-erased walk and its exact laws.

Curves and walk paths are tuples of vertices that start at the outside vertex
of the a-edge and end at the outside vertex of the b-edge; everything in
between is interior.

The conditioned walk is the Doob transform of the killed walk by
``h = Z(., b)``: from ``v`` it moves to an interior neighbour ``u`` with
probability ``(q/4) h(u) / h(v)`` and leaves through the b-edge with
probability ``1_{v = b_int} / h(v)``.  These sum to one because ``h`` solves
``h = (q/4) A h + 1_{b_int}``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
import scipy.linalg as sla

from . import kernels
from .lattice import GridDomain, TargetSwallowed, Vertex, slit_component, survival_factor
from .potential import (Stopped, green_matrix, hit_b_field, observable, observable_from_vertex,
                        partition_ab)

Curve = tuple[Vertex, ...]


@dataclass(frozen=True)
class DensitySample:
    curve: Curve
    log_density: float


# ---------------------------------------------------------------------------
# conditioned walk

def transition_table(dom: GridDomain, m: float) -> tuple[np.ndarray, np.ndarray]:
    """Neighbour table and cumulative step probabilities (E, N, W, S, exit)."""
    q = survival_factor(m, dom.mesh)
    h = hit_b_field(dom, m).values
    nbr = dom.neighbour_table
    probs = np.zeros((dom.size, 5))
    inside = nbr >= 0
    probs[:, :4][inside] = (q / 4.0) * h[nbr[inside]]
    probs[dom.index[dom.b_int], 4] = 1.0
    probs /= h[:, None]
    cum = np.cumsum(probs, axis=1)
    # guard against round-off exits: the last possible move is taken with u < 1
    for v in range(dom.size):
        last = 4 if probs[v, 4] > 0 else int(np.flatnonzero(probs[v, :4] > 0)[-1])
        cum[v, last:] = 1.0
    return np.ascontiguousarray(nbr, dtype=np.int32), np.ascontiguousarray(cum)


def _as_curve(dom: GridDomain, idx: np.ndarray) -> Curve:
    verts = dom.vertices
    return (dom.a_out, *(verts[k] for k in idx.tolist()), dom.b_out)


def conditioned_walk(dom: GridDomain, m: float, bit_generator) -> Curve:
    """Killed walk from a, conditioned to leave through b before dying."""
    nbr, cum = transition_table(dom, m)
    idx = kernels.walk(nbr, cum, dom.index[dom.a_int], bit_generator)
    return _as_curve(dom, idx)


def loop_erase(path: Sequence) -> tuple:
    """Chronological loop erasure of a sequence of hashable sites.

    A path that ends where it started (a- and b-edges sharing one outside
    vertex) keeps its final site instead of collapsing to a single point.
    """
    items = [tuple(v) if isinstance(v, list) else v for v in path]
    tail = []
    if len(items) > 1 and items[-1] == items[0]:
        items, tail = items[:-1], items[-1:]
    if not items:
        return tuple(tail)
    labels = {v: k for k, v in enumerate(dict.fromkeys(items))}
    order = list(labels)
    erased = kernels.loop_erase(np.array([labels[v] for v in items], dtype=np.int64))
    return (*(order[k] for k in erased.tolist()), *tail)


def sample_mlerw(dom: GridDomain, m: float, bit_generator) -> Curve:
    """One massive LERW curve (walk generated and erased on the fly)."""
    nbr, cum = transition_table(dom, m)
    return _as_curve(dom, kernels.lerw(nbr, cum, dom.index[dom.a_int], bit_generator))


def sample_batch(dom: GridDomain, m: float, count: int, bit_generator) -> list[Curve]:
    nbr, cum = transition_table(dom, m)
    flat, offsets = kernels.lerw_batch(nbr, cum, dom.index[dom.a_int], count, bit_generator)
    return [_as_curve(dom, flat[offsets[i]:offsets[i + 1]]) for i in range(count)]


def sample_indices(dom: GridDomain, m: float, count: int, bit_generator) -> list[np.ndarray]:
    """Like :func:`sample_batch` but returns interior index arrays (no endpoints)."""
    nbr, cum = transition_table(dom, m)
    flat, offsets = kernels.lerw_batch(nbr, cum, dom.index[dom.a_int], count, bit_generator)
    return np.split(flat, offsets[1:-1])


def _check_key_range(dom: GridDomain) -> None:
    if (dom.size + 1) ** dom.size >= 2 ** 63:
        raise ValueError(f"curve keys overflow for {dom.size} vertices")


def curve_key(dom: GridDomain, curve: Curve) -> int:
    """Integer code of a curve, matching :func:`sample_keys`."""
    base = dom.size + 1
    return sum((dom.index[v] + 1) * base ** j for j, v in enumerate(curve[1:-1]))


def sample_keys(dom: GridDomain, m: float, count: int, bit_generator) -> np.ndarray:
    """Integer codes of ``count`` sampled curves; only for small domains."""
    _check_key_range(dom)
    nbr, cum = transition_table(dom, m)
    return kernels.lerw_keys(nbr, cum, dom.index[dom.a_int], count, bit_generator)


# ---------------------------------------------------------------------------
# growth representation

def laplacian_walk_step(dom_t: GridDomain, m: float) -> tuple[dict[Vertex, float], float]:
    """Next-vertex law of the curve whose tip is the a-side of ``dom_t``.

    The weight of a candidate ``w`` is ``(q/4) Z_t(w, b)``.  Returns the
    normalised law and the total weight.
    """
    q = survival_factor(m, dom_t.mesh)
    h = hit_b_field(dom_t, m)
    weights = {w: (q / 4.0) * h[w] for w in dom_t.source_vertices}
    total = sum(weights.values())
    if not total > 0:
        raise RuntimeError("trapped tip: no admissible continuation")
    return {w: x / total for w, x in weights.items()}, total


def step_distribution(dom: GridDomain, curve: Sequence[Vertex], m: float) -> dict[Vertex, float]:
    """Law of the next vertex after the partial curve ``curve`` (starting at a_out)."""
    curve = tuple(tuple(v) for v in curve)
    tip = curve[-1]
    if tip == dom.b_out and len(curve) > 1:
        return {}
    if len(curve) == 1:
        return {dom.a_int: 1.0}
    if tip == dom.b_int:
        return {dom.b_out: 1.0}
    probs, _ = laplacian_walk_step(slit_component(dom, curve), m)
    return probs


def chain_log_probability(dom: GridDomain, m: float, curve: Sequence[Vertex]) -> float:
    """``log P(curve)`` as a product of growth-step probabilities."""
    curve = tuple(tuple(v) for v in curve)
    total = 0.0
    for n in range(1, len(curve)):
        p = step_distribution(dom, curve[:n], m).get(curve[n], 0.0)
        if p <= 0.0:
            return -np.inf
        total += np.log(p)
    return total


def log_probability_det(dom: GridDomain, m: float, curve: Sequence[Vertex],
                        green: np.ndarray | None = None, z_ab: float | None = None) -> float:
    """``log P(curve)`` from the loop-measure formula.

    ``P = (q/4)^(k-1) det G[c, c] / Z(a, b)`` where ``c`` are the ``k`` interior
    vertices of the curve.  ``green`` and ``z_ab`` may be passed to reuse work.
    """
    q = survival_factor(m, dom.mesh)
    idx = [dom.index[tuple(v)] for v in curve[1:-1]]
    if green is None:
        green = green_matrix(dom, m)
    if z_ab is None:
        z_ab = partition_ab(dom, m)
    sub = green[np.ix_(idx, idx)]
    chol = sla.cholesky(sub, lower=True, check_finite=False)
    logdet = 2.0 * float(np.log(np.diag(chol)).sum())
    return (len(idx) - 1) * np.log(q / 4.0) + logdet - np.log(z_ab)


def rn_density(dom: GridDomain, m: float, curve: Sequence[Vertex]) -> DensitySample:
    """Log-likelihood ratio of the massive against the massless curve law."""
    curve = tuple(tuple(v) for v in curve)
    if m == 0:
        return DensitySample(curve, 0.0)
    lm = chain_log_probability(dom, m, curve)
    l0 = chain_log_probability(dom, 0.0, curve)
    if not np.isfinite(l0):
        raise ValueError("curve is not in the support of the massless law")
    return DensitySample(curve, lm - l0)


class DensityEvaluator:
    """Fast ``log D`` for many curves on one domain via the determinant formula."""

    def __init__(self, dom: GridDomain, m: float):
        self.dom, self.m = dom, m
        self._g = {mass: green_matrix(dom, mass) for mass in {0.0, float(m)}}
        self._z = {mass: partition_ab(dom, mass) for mass in self._g}

    def log_density_idx(self, idx: np.ndarray) -> float:
        if self.m == 0:
            return 0.0
        q = survival_factor(self.m, self.dom.mesh)
        idx = np.asarray(idx)
        out = (len(idx) - 1) * np.log(q) - np.log(self._z[self.m]) + np.log(self._z[0.0])
        for mass, sign in ((self.m, 1.0), (0.0, -1.0)):
            sub = self._g[mass][np.ix_(idx, idx)]
            chol = sla.cholesky(sub, lower=True, check_finite=False)
            out += sign * 2.0 * float(np.log(np.diag(chol)).sum())
        return float(out)

    def __call__(self, curve: Sequence[Vertex]) -> float:
        return self.log_density_idx(np.array([self.dom.index[tuple(v)] for v in curve[1:-1]]))


# ---------------------------------------------------------------------------
# exhaustive oracle

ENUM_LIMIT = 9


def simple_curves(dom: GridDomain) -> Iterator[Curve]:
    """Every simple interior path from a_int to b_int, with outside endpoints."""
    start, goal = dom.a_int, dom.b_int
    nbr = dom.neighbour_table
    verts = dom.vertices
    s, g = dom.index[start], dom.index[goal]
    stack = [(s, [s], {s})]
    while stack:
        v, path, seen = stack.pop()
        if v == g:
            yield (dom.a_out, *(verts[k] for k in path), dom.b_out)
            continue
        for u in nbr[v]:
            if u >= 0 and u not in seen:
                stack.append((int(u), path + [int(u)], seen | {int(u)}))


def enumerate_tiny(dom: GridDomain, m: float) -> dict[Curve, float]:
    """Exact curve law on domains with at most nine interior vertices."""
    if dom.size > ENUM_LIMIT:
        raise ValueError(f"enumeration limited to {ENUM_LIMIT} interior vertices, got {dom.size}")
    law = {}
    for curve in simple_curves(dom):
        p = float(np.exp(chain_log_probability(dom, m, curve)))
        if p > 0.0:
            law[curve] = p
    return law


def enumerate_det(dom: GridDomain, m: float) -> dict[Curve, float]:
    """Same law from the determinant formula (independent of the growth chain)."""
    if dom.size > ENUM_LIMIT:
        raise ValueError(f"enumeration limited to {ENUM_LIMIT} interior vertices, got {dom.size}")
    g, z = green_matrix(dom, m), partition_ab(dom, m)
    return {c: float(np.exp(log_probability_det(dom, m, c, g, z))) for c in simple_curves(dom)}


def walk_prefix_law(dom: GridDomain, m: float, max_len: int = 200) -> dict[Curve, float]:
    """Curve law by pushing the conditioned walk forward for ``max_len`` steps.

    The erasure of a prefix extended by one step depends only on the erasure of
    the prefix, so the walk is tracked through its erased state.  Mass not yet
    absorbed is reported under the key ``()``.  Used to cross-check the growth
    chain against literal loop erasure.
    """
    q = survival_factor(m, dom.mesh)
    h = hit_b_field(dom, m).values
    nbr = dom.neighbour_table
    b = dom.index[dom.b_int]
    law: dict[Curve, float] = {}
    frontier = {(dom.index[dom.a_int],): 1.0}
    for _ in range(max_len):
        nxt: dict[tuple, float] = {}
        for path, p in frontier.items():
            v = path[-1]
            if v == b:
                curve = _as_curve(dom, np.array(path))
                law[curve] = law.get(curve, 0.0) + p / h[v]
            for u in nbr[v].tolist():
                if u >= 0:
                    key = path[:path.index(u) + 1] if u in path else path + (u,)
                    nxt[key] = nxt.get(key, 0.0) + p * (q / 4.0) * h[u] / h[v]
        frontier = nxt
    law[()] = sum(frontier.values())
    return law


def distinct_domains_up_to(size: int, mesh: float = 1.0) -> list[GridDomain]:
    """Every polyomino with at most ``size`` cells and every ordered (a, b) pair,
    one representative per lattice symmetry class."""
    from .lattice import boundary_edges_of

    def normalise(cells):
        mi = min(c[0] for c in cells)
        mj = min(c[1] for c in cells)
        return frozenset((c[0] - mi + 1, c[1] - mj + 1) for c in cells)

    maps = [lambda i, j: (i, j), lambda i, j: (-j, i), lambda i, j: (-i, -j), lambda i, j: (j, -i),
            lambda i, j: (-i, j), lambda i, j: (i, -j), lambda i, j: (j, i), lambda i, j: (-j, -i)]

    shapes = {frozenset({(1, 1)})}
    layer = set(shapes)
    for _ in range(size - 1):
        grown = set()
        for s in layer:
            for (i, j) in s:
                for di, dj in ((1, 0), (0, 1), (-1, 0), (0, -1)):
                    c = (i + di, j + dj)
                    if c not in s:
                        grown.add(normalise(s | {c}))
        layer = grown
        shapes |= grown

    seen = set()
    out = []
    for s in sorted(shapes, key=lambda s: (len(s), sorted(s))):
        edges = boundary_edges_of(s)
        for a, b in itertools.permutations(edges, 2):
            images = []
            for f in maps:
                cells = [f(*c) for c in s]
                mi = min(c[0] for c in cells) - 1
                mj = min(c[1] for c in cells) - 1

                def g(v, f=f, mi=mi, mj=mj):
                    x = f(*v)
                    return (x[0] - mi, x[1] - mj)

                images.append((frozenset(g(c) for c in s), (g(a[0]), g(a[1])), (g(b[0]), g(b[1]))))
            canon = min(images, key=lambda t: (sorted(t[0]), t[1], t[2]))
            if canon in seen:
                continue
            seen.add(canon)
            out.append(GridDomain(mesh, s, edges, edges.index(a), edges.index(b), a[1]))
    return out


# ---------------------------------------------------------------------------
# martingale observable along the growth chain

def prefixes(dom: GridDomain) -> set[Curve]:
    """Every partial curve (from a_out, before reaching b_int) of positive probability."""
    out = set()
    for c in simple_curves(dom):
        for n in range(1, len(c) - 1):
            out.add(c[:n])
    return out


def martingale_step_defect(dom: GridDomain, m: float, curve: Sequence[Vertex],
                           v: Vertex) -> float:
    """``|E[M(v) after one step] - M(v) now|`` for the partial curve ``curve``.

    A step that hits or disconnects ``v`` freezes the observable at its value
    just before the cut.
    """
    curve = tuple(tuple(x) for x in curve)
    now = slit_component(dom, curve)
    before = observable(now, dom, m, v)
    after = 0.0
    for w, p in step_distribution(dom, curve, m).items():
        if w == dom.b_out:
            value = before
        else:
            try:
                value = observable(slit_component(dom, curve + (w,)), dom, m, v)
            except (Stopped, TargetSwallowed):
                value = observable_from_vertex(now, dom, m, w, v)
        after += p * value
    return abs(after - before)


def max_martingale_defect(dom: GridDomain, m: float) -> float:
    """Largest one-step defect over all prefixes and all surviving vertices."""
    worst = 0.0
    for c in prefixes(dom):
        now = slit_component(dom, c)
        for v in now.interior:
            worst = max(worst, martingale_step_defect(dom, m, c, v))
    return worst


__all__ = [
    "Curve", "DensityEvaluator", "DensitySample", "ENUM_LIMIT", "TargetSwallowed",
    "chain_log_probability", "conditioned_walk", "curve_key", "distinct_domains_up_to",
    "enumerate_det", "enumerate_tiny", "laplacian_walk_step", "log_probability_det",
    "loop_erase", "martingale_step_defect", "max_martingale_defect", "prefixes",
    "rn_density", "sample_batch", "sample_indices", "sample_keys",
    "sample_mlerw", "simple_curves", "step_distribution", "transition_table",
    "walk_prefix_law",
]
