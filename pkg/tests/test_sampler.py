import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msle_lab import rng
from msle_lab.lattice import build_rect_domain, slit_component
from msle_lab.potential import Stopped, observable
from msle_lab.sampler import (DensityEvaluator, conditioned_walk, curve_key, enumerate_det,
                              enumerate_tiny, laplacian_walk_step, loop_erase,
                              martingale_step_defect, max_martingale_defect, prefixes, rn_density,
                              sample_batch, sample_keys, sample_mlerw, simple_curves,
                              step_distribution, transition_table, walk_prefix_law)


def naive_erase(path):
    out = []
    for v in path:
        if v in out:
            del out[out.index(v) + 1:]
        else:
            out.append(v)
    return out


def test_single_vertex_walk():
    dom = build_rect_domain(1, 1, 0.5, "left", "right")
    for m in (0.0, 1.0):
        for s in range(5):
            bg = rng.bit_generator(s, 0)
            assert conditioned_walk(dom, m, bg) == (dom.a_out, (1, 1), dom.b_out)
            assert sample_mlerw(dom, m, bg) == (dom.a_out, (1, 1), dom.b_out)


def test_strip_transitions():
    dom = build_rect_domain(2, 1, 1.0, "left", "right")
    nbr, cum = transition_table(dom, 0.0)
    v = dom.index[(2, 1)]
    probs = np.diff(np.concatenate([[0.0], cum[v]]))
    west = 2
    assert probs[west] == pytest.approx(1 / 16, abs=1e-15)
    assert probs[4] == pytest.approx(15 / 16, abs=1e-15)


def test_empirical_transitions_three_by_three():
    dom = build_rect_domain(3, 3, 0.25)
    m = 1.0
    nbr, cum = transition_table(dom, m)
    probs = np.diff(np.concatenate([np.zeros((dom.size, 1)), cum], axis=1), axis=1)
    counts = np.zeros((dom.size, 5))
    bg = rng.bit_generator(11, 0)
    steps = 0
    while steps < 100_000:
        path = conditioned_walk(dom, m, bg)
        inner = [dom.index[v] for v in path[1:-1]]
        for a, b in zip(inner, inner[1:]):
            counts[a, list(nbr[a]).index(b)] += 1
        counts[inner[-1], 4] += 1
        steps += len(inner)
    visits = counts.sum(axis=1, keepdims=True)
    expected = visits * probs
    sigma = np.sqrt(visits * probs * (1 - probs))
    mask = probs > 0
    assert np.all(np.abs(counts - expected)[mask] <= 3 * sigma[mask] + 1e-9)
    assert np.all(counts[~mask] == 0)


def test_loop_erase_examples():
    a, v, u, b = "a", "v", "u", "b"
    assert loop_erase([a, v, b]) == (a, v, b)
    assert loop_erase([a, v, u, v, b]) == (a, v, b)
    assert loop_erase([0, 1, 2, 1, 0, 3]) == (0, 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=1, max_size=60))
def test_loop_erase_matches_naive(seq):
    if seq[-1] == seq[0] and len(seq) > 1:
        expect = naive_erase(seq[:-1]) + [seq[-1]]
    else:
        expect = naive_erase(seq)
    assert list(loop_erase(seq)) == expect


def test_walk_then_erase_equals_sampler():
    dom = build_rect_domain(5, 4, 0.1)
    for s in range(20):
        walk = conditioned_walk(dom, 2.0, rng.bit_generator(s, 3))
        lerw = sample_mlerw(dom, 2.0, rng.bit_generator(s, 3))
        assert loop_erase(walk) == lerw


def test_curve_law_on_three_by_three():
    dom = build_rect_domain(3, 3, 0.25)
    law = enumerate_tiny(dom, 0.0)
    n = 100_000
    keys = sample_keys(dom, 0.0, n, rng.bit_generator(5, 0))
    counts = Counter(keys.tolist())
    for curve, p in law.items():
        sigma = math.sqrt(n * p * (1 - p))
        assert abs(counts.get(curve_key(dom, curve), 0) - n * p) <= 3 * sigma


def test_curve_law_on_two_by_two_massive():
    dom = build_rect_domain(2, 2, 0.25, "bottom", "top")
    m = 0.5 / dom.mesh
    law = enumerate_tiny(dom, m)
    n = 200_000
    curves = Counter(sample_batch(dom, m, n, rng.bit_generator(6, 0)))
    assert set(curves) <= set(law)
    for curve, p in law.items():
        assert abs(curves[curve] - n * p) <= 3 * math.sqrt(n * p * (1 - p))


def test_laplacian_step_forced_and_first_step():
    dom = build_rect_domain(1, 3, 1.0, "bottom", "top")
    probs, _ = laplacian_walk_step(slit_component(dom, [dom.a_out, (1, 1)]), 0.0)
    assert probs == {(1, 2): 1.0}
    dom = build_rect_domain(2, 2, 0.25, "bottom", "top")
    for m in (0.0, 2.0):
        law = enumerate_det(dom, m)
        first = Counter()
        for c, p in law.items():
            first[c[2]] += p
        step = step_distribution(dom, (dom.a_out, dom.a_int), m)
        for w, p in first.items():
            assert step.get(w, 0.0) == pytest.approx(p, abs=1e-10)


@pytest.mark.parametrize("shape,m", [((2, 2), 0.0), ((2, 2), 2.0), ((3, 3), 0.0), ((3, 2), 1.2)])
def test_growth_chain_matches_walk_erasure(shape, m):
    dom = build_rect_domain(*shape, 0.25)
    chain = enumerate_tiny(dom, m)
    erased = walk_prefix_law(dom, m, max_len=400)
    leftover = erased.pop(())
    assert leftover < 1e-12
    assert set(chain) == set(erased)
    for c, p in chain.items():
        assert erased[c] == pytest.approx(p, abs=1e-10)
    assert sum(chain.values()) == pytest.approx(1.0, abs=1e-10)


def test_enumeration_small_cases():
    one = build_rect_domain(1, 1, 1.0, "left", "right")
    assert enumerate_tiny(one, 0.3) == {(one.a_out, (1, 1), one.b_out): pytest.approx(1.0)}
    strip = build_rect_domain(2, 1, 1.0, "left", "right")
    law = enumerate_tiny(strip, 0.0)
    assert list(law) == [(strip.a_out, (1, 1), (2, 1), strip.b_out)]
    with pytest.raises(ValueError):
        enumerate_tiny(build_rect_domain(4, 3, 1.0), 0.0)


def test_enumeration_against_million_samples():
    dom = build_rect_domain(2, 2, 0.25, "bottom", "top")
    law = enumerate_tiny(dom, 0.0)
    assert sum(law.values()) == pytest.approx(1.0, abs=1e-10)
    n = 1_000_000
    keys = Counter(sample_keys(dom, 0.0, n, rng.bit_generator(1, 7)).tolist())
    for c, p in law.items():
        assert abs(keys[curve_key(dom, c)] - n * p) <= 4 * math.sqrt(n * p * (1 - p))


def test_density_examples():
    dom = build_rect_domain(2, 2, 0.25, "bottom", "top")
    for c in simple_curves(dom):
        assert rn_density(dom, 0.0, c).log_density == 0.0
    one = build_rect_domain(1, 1, 0.5, "left", "right")
    curve = (one.a_out, (1, 1), one.b_out)
    assert rn_density(one, 1.0, curve).log_density == pytest.approx(0.0, abs=1e-15)
    m = 0.5 / dom.mesh
    massive, classical = enumerate_det(dom, m), enumerate_det(dom, 0.0)
    evaluator = DensityEvaluator(dom, m)
    for c in massive:
        ratio = massive[c] / classical[c]
        assert math.exp(rn_density(dom, m, c).log_density) == pytest.approx(ratio, abs=1e-10)
        assert math.exp(evaluator(c)) == pytest.approx(ratio, abs=1e-10)


def test_density_evaluator_on_larger_domain():
    dom = build_rect_domain(5, 5, 1 / 6)
    m = 1.4
    ev = DensityEvaluator(dom, m)
    for s in range(5):
        c = sample_mlerw(dom, m, rng.bit_generator(s, 0))
        assert ev(c) == pytest.approx(rn_density(dom, m, c).log_density, abs=1e-10)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("md", [0.0, 0.3])
def test_martingale_exact(n, md):
    dom = build_rect_domain(n, n, 1.0)
    assert max_martingale_defect(dom, md) <= 1e-9


def test_martingale_needs_frozen_values():
    """Dropping the frozen value after a cut breaks the identity, so the check has teeth."""
    dom = build_rect_domain(3, 3, 1.0)
    worst = 0.0
    for c in prefixes(dom):
        now = slit_component(dom, c)
        for v in now.interior:
            before = observable(now, dom, 0.3, v)
            after = 0.0
            for w, p in step_distribution(dom, c, 0.3).items():
                try:
                    after += p * observable(slit_component(dom, c + (w,)), dom, 0.3, v)
                except Exception as exc:
                    assert isinstance(exc, (Stopped, ValueError))
            worst = max(worst, abs(after - before))
            assert martingale_step_defect(dom, 0.3, c, v) <= 1e-9
    assert worst > 1e-3


def test_streams_are_reproducible():
    dom = build_rect_domain(6, 5, 0.1)
    a = sample_batch(dom, 1.0, 50, rng.bit_generator(9, 2))
    b = sample_batch(dom, 1.0, 50, rng.bit_generator(9, 2))
    c = sample_batch(dom, 1.0, 50, rng.bit_generator(9, 3))
    assert a == b
    assert a != c
