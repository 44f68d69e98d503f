import dataclasses
import math

import numpy as np
import pytest

from msle_lab.conformal import SlitChain
from msle_lab.continuum_drift import (MeshTooCoarse, continuum_mass, drift_lambda, hadamard_check,
                                      hadamard_halfplane, helmholtz_solve, initial_state,
                                      integral_diagnostics, kernel_field, lattice_mass,
                                      massive_kernels, pq_fields, rect_grid, square_grid,
                                      state_from_chain)
from msle_lab.lattice import build_rect_domain
from msle_lab.potential import green_field

R_SQUARE = math.sqrt(2) / 2  # the unit square lies in the disc of this radius around its centre


def symmetric(n=31):
    return initial_state(square_grid(n))


def asymmetric(n=31):
    return initial_state(rect_grid(n, n, 1 / (n + 1), "bottom-center", "right-center"))


def grown(n=31):
    grid = rect_grid(n, n, 1 / (n + 1), "bottom-center", "top-center")
    # continuous driving, so each slit starts at the previous tip
    chain = SlitChain(np.linspace(0.0, 0.3, 40), np.full(40, 2 * math.sqrt(0.0025)))
    return state_from_chain(grid, chain)


def test_pq_at_known_points():
    st = symmetric()
    i, j = st.grid.index_of(0.5 + 0.5j)
    p, q = pq_fields(st)
    assert p.values[i, j] == pytest.approx(1 / math.pi, abs=1e-9)
    assert q.values[i, j] == pytest.approx(0.0, abs=1e-9)
    flat = dataclasses.replace(st, zt=np.full(st.zt.shape, 1 + 1j), xi=0.0)
    p, q = pq_fields(flat)
    assert np.allclose(p.values, 1 / (2 * math.pi), atol=1e-15)
    assert np.allclose(q.values, 1 / (2 * math.pi), atol=1e-15)


def test_reflection_symmetry_at_start():
    p, q = pq_fields(symmetric())
    assert np.abs(p.values - p.values[::-1, :]).max() <= 1e-9
    assert np.abs(q.values + q.values[::-1, :]).max() <= 1e-9
    assert np.all(p.values > 0)


def test_helmholtz_examples():
    st = grown()
    assert np.all(helmholtz_solve(st, 3.0, np.zeros(st.grid.shape)).values == 0)
    f = np.where(st.active, 1.0, 0.0)
    h = st.grid.h
    u1 = helmholtz_solve(st, 0.1 / h, f).values
    u3 = helmholtz_solve(st, 0.3 / h, f).values
    u0 = helmholtz_solve(st, 0.0, f).values
    assert np.all(u1 >= 0) and np.all(u3 >= 0)
    assert np.all(u3 <= u1 + 1e-15) and np.all(u1 <= u0 + 1e-15)
    assert np.all(u3[st.active] < u1[st.active])


@pytest.mark.parametrize("M", [0.0, 2.0, 6.0])
def test_helmholtz_delta_is_lattice_green(M):
    n = 15
    h = 1 / (n + 1)
    st = initial_state(square_grid(n))
    dom = build_rect_domain(n, n, h)
    w = (5, 9)
    f = np.zeros(st.grid.shape)
    f[w[0] - 1, w[1] - 1] = 1 / h ** 2
    u = helmholtz_solve(st, M, f).values
    m = lattice_mass(M, h)
    q = 1 - (m * h) ** 2
    g = green_field(dom, m, w)
    lattice = np.array([[g[(i, j)] for j in range(1, n + 1)] for i in range(1, n + 1)])
    assert np.abs(u - q / 4 * lattice).max() <= 1e-8
    assert continuum_mass(m, h) == pytest.approx(M, rel=1e-12)


def test_massless_kernels_are_exact():
    st = grown()
    mk = massive_kernels(st, 0.0)
    p, _ = pq_fields(st)
    assert np.array_equal(mk.P_m, p.values)
    assert np.array_equal(mk.K, kernel_field(st).values)
    assert mk.N == 1.0
    assert drift_lambda(st, 0.0).lam == 0.0


def test_normalisation_small_mass_expansion():
    st = asymmetric()
    area = st.grid.cell_area
    mk0 = massive_kernels(st, 0.0)
    direct = area * float(np.sum(mk0.P * mk0.K0))
    ms = np.array([0.05, 0.1, 0.2])
    y = np.array([(1 - 1 / massive_kernels(st, M).N) / M ** 2 for M in ms])
    slope, intercept = np.polyfit(ms ** 2, y, 1)
    assert intercept == pytest.approx(direct, rel=1e-4)


def test_kernel_closed_form_against_limit_ratio():
    n = 127
    st = initial_state(rect_grid(n, n, 1 / (n + 1), "bottom-center", "right-center"))
    h = st.grid.h
    w = st.grid.index_of(0.4 + 0.6j)
    f = np.zeros(st.grid.shape)
    f[w] = 1 / h ** 2
    g = helmholtz_solve(st, 0.0, f).values
    p, _ = pq_fields(st)
    ib, jb = st.grid.index_of(1 + 0.5j)
    ratios = [g[ib - k, jb] / p.values[ib - k, jb] for k in (2, 4, 8)]
    k0 = st.phi[w].imag
    assert ratios[0] == pytest.approx(k0, rel=0.02)


@pytest.mark.parametrize("M", [1.0, 2 * math.sqrt(2)])
def test_massive_bounds(M):
    st = grown()
    mk = massive_kernels(st, M)
    act = st.active
    ratio = mk.P_m[act] / mk.P[act]
    assert np.all(ratio > 0) and np.all(ratio <= 1 + 1e-12)
    c_fit = -math.log(ratio.min()) / (M * R_SQUARE) ** 2
    assert 1.0 <= mk.N <= math.exp(c_fit * (M * R_SQUARE) ** 2) * 1.01
    assert np.all(mk.K[act] >= 0) and np.all(mk.K[act] <= mk.K0[act] + 1e-12)


def test_normalisation_denominator_guard():
    st = symmetric(15)
    flat = dataclasses.replace(st, zt=np.full(st.zt.shape, 1j), xi=0.0)
    with pytest.raises(MeshTooCoarse):
        massive_kernels(flat, 10.0)


def test_lambda_symmetric_and_bounded():
    M = 2 * math.sqrt(2)
    assert abs(drift_lambda(symmetric(), M).lam) <= 1e-6
    for st in (asymmetric(), grown()):
        rep = drift_lambda(st, M)
        # |Q| K <= P pointwise, so |lambda| <= M^2 N int P
        assert abs(rep.lam) <= M * M * rep.N_m * rep.int_P
        assert rep.N_m >= 1


def test_lambda_mass_exponent():
    st = asymmetric()
    ms = np.array([0.05, 0.1, 0.2])
    lam = np.array([drift_lambda(st, M).lam for M in ms])
    slope = np.polyfit(np.log(ms), np.log(np.abs(lam)), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)


def test_lambda_translation_invariant():
    M = 2.0
    base = rect_grid(31, 31, 1 / 32, "bottom-center", "right-center")
    moved = rect_grid(31, 31, 1 / 32, "bottom-center", "right-center")
    st1 = initial_state(base)
    from msle_lab.conformal import rect_to_halfplane
    from msle_lab.continuum_drift import MeshGrid
    shift = 3.5 + 0j
    r = base.rmap
    moved = MeshGrid(rect_to_halfplane(r.width, r.height, r.a + shift, r.b + shift,
                                       r.origin + shift, shift), 31, 31)
    st2 = initial_state(moved)
    assert drift_lambda(st2, M).lam == pytest.approx(drift_lambda(st1, M).lam, abs=1e-9)


def test_hadamard_in_halfplane():
    assert hadamard_halfplane(1j, 2j, 1e-4) <= 1e-2


def test_hadamard_massless_equals_classical():
    res = hadamard_check(grown(), 1e-4, 0.3 + 0.6j, 0.7 + 0.4j, 0.0)
    assert res.massive == res.classical
    assert res.classical <= 1e-2


def test_hadamard_refinement():
    M = 2.0
    coarse = hadamard_check(grown(31), 1e-3, 0.3 + 0.6j, 0.7 + 0.4j, M).massive
    fine = hadamard_check(grown(95), 1e-4, 0.3 + 0.6j, 0.7 + 0.4j, M).massive
    assert fine < coarse


def test_integral_diagnostics_refine():
    small = integral_diagnostics(grown(63))
    large = integral_diagnostics(grown(127))
    for a, b in zip(small, large):
        assert abs(a - b) <= 0.05 * abs(b)


def test_integral_diagnostics_at_start():
    # golden values from the first run on the 31-cell unit square
    assert integral_diagnostics(asymmetric(31)) == pytest.approx(
        (0.12286137878627121, 0.0668195250751486), rel=1e-9)
    p = [integral_diagnostics(asymmetric(n)) for n in (63, 127)]
    assert abs(p[0][0] - p[1][0]) <= 0.05 * p[1][0]
    # P ~ sin(theta)/r at a flat start, so the area integral of P^2 grows like log(1/h)
    steps = [b[1] - a[1] for a, b in zip([integral_diagnostics(asymmetric(31))] + p[:1], p)]
    assert steps[0] == pytest.approx(steps[1], rel=0.05)
