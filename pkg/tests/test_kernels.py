import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msle_lab import _kernels_py as pure
from msle_lab import kernels, rng
from msle_lab.lattice import build_rect_domain
from msle_lab.sampler import transition_table

compiled = pytest.importorskip("msle_lab._kernels")


@pytest.fixture(scope="module")
def table():
    dom = build_rect_domain(9, 7, 0.1, "left", ("top", 3))
    nbr, cum = transition_table(dom, 2.0)
    return nbr, cum, dom.index[dom.a_int]


def test_default_backend_is_compiled():
    assert kernels.BACKEND == compiled.BACKEND != pure.BACKEND


def test_env_forces_fallback():
    env = {**os.environ, "MSLE_LAB_PURE": "1"}
    out = subprocess.run([sys.executable, "-c", "from msle_lab import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == pure.BACKEND


@pytest.mark.parametrize("name", ["walk", "lerw"])
def test_single_paths_identical(table, name):
    nbr, cum, start = table
    for s in range(20):
        a = getattr(compiled, name)(nbr, cum, start, rng.bit_generator(s, 1))
        b = getattr(pure, name)(nbr, cum, start, rng.bit_generator(s, 1))
        assert np.array_equal(a, b)


def test_batches_identical(table):
    nbr, cum, start = table
    fa, oa = compiled.lerw_batch(nbr, cum, start, 50, rng.bit_generator(3, 0))
    fb, ob = pure.lerw_batch(nbr, cum, start, 50, rng.bit_generator(3, 0))
    assert np.array_equal(fa, fb) and np.array_equal(oa, ob)
    dom = build_rect_domain(3, 3, 0.25)
    nbr, cum = transition_table(dom, 0.0)
    ka = compiled.lerw_keys(nbr, cum, dom.index[dom.a_int], 500, rng.bit_generator(3, 0))
    kb = pure.lerw_keys(nbr, cum, dom.index[dom.a_int], 500, rng.bit_generator(3, 0))
    assert np.array_equal(ka, kb)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 8), min_size=1, max_size=80))
def test_loop_erase_identical(seq):
    arr = np.array(seq, dtype=np.int64)
    assert np.array_equal(compiled.loop_erase(arr), pure.loop_erase(arr))


def close(a, b):
    # libm and numpy complex square roots may differ in the last bit
    return np.allclose(a, b, rtol=1e-12, atol=1e-14)


def test_slit_maps_agree():
    gen = rng.generator(8, 0)
    xi = gen.normal(size=30)
    h = gen.uniform(0.05, 0.5, size=30)
    z = gen.normal(size=200) + 1j * gen.uniform(0.0, 2.0, size=200)
    z[:5] = z[:5].real + 0j  # points on the real line
    fa = compiled.slit_forward(z, xi, h)
    fb = pure.slit_forward(z, xi, h)
    assert close(fa, fb)
    assert close(compiled.slit_inverse(fa, xi, h), pure.slit_inverse(fb, xi, h))


def test_unzip_agrees():
    gen = rng.generator(9, 0)
    steps = 300
    xs = np.cumsum(gen.normal(size=steps) * 0.05)
    curve = np.array([pure.slit_inverse(np.array([xs[k] + 0j]), xs[:k + 1], np.full(k + 1, 0.1))[0]
                      for k in range(steps)])
    for cap in (np.inf, 0.3):
        a = compiled.unzip(curve, cap)
        b = pure.unzip(curve, cap)
        assert close(a[0], b[0]) and close(a[1], b[1])
        assert a[2:] == b[2:]
