"""Compiled against pure-Python kernels on the hot loops.

Run with ``python benchmarks/bench_kernels.py [--repeat N]``.
"""

import argparse
import timeit

import numpy as np

from msle_lab import _kernels_py as pure
from msle_lab import rng
from msle_lab.lattice import build_rect_domain
from msle_lab.sampler import transition_table

try:
    from msle_lab import _kernels as compiled
except ImportError:  # extension not built
    compiled = None


def cases():
    dom = build_rect_domain(31, 31, 1 / 32)
    nbr, cum = transition_table(dom, 2.0)
    start = dom.index[dom.a_int]
    gen = rng.generator(0, 0)
    xi = np.cumsum(gen.normal(size=400) * 0.05)
    h = np.full(400, 0.1)
    z = gen.normal(size=1024) + 1j * gen.uniform(0.1, 2.0, size=1024)
    curve = np.array([pure.slit_inverse(np.array([xi[k] + 0j]), xi[:k + 1], h[:k + 1])[0]
                      for k in range(xi.size)])
    seq = gen.integers(0, 50, size=20000)
    return {
        "lerw_batch 200 curves 31x31": lambda k: k.lerw_batch(nbr, cum, start, 200,
                                                              rng.bit_generator(1, 0)),
        "loop_erase 20k sites": lambda k: k.loop_erase(seq),
        "slit_forward 1024 pts x 400 maps": lambda k: k.slit_forward(z, xi, h),
        "unzip 400 points": lambda k: k.unzip(curve, np.inf),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    print(f"{'kernel':36s} {'python [s]':>11s} {'compiled [s]':>13s} {'speedup':>8s}")
    for name, run in cases().items():
        t_py = min(timeit.repeat(lambda: run(pure), number=1, repeat=args.repeat))
        if compiled is None:
            print(f"{name:36s} {t_py:11.4f} {'n/a':>13s}")
            continue
        t_c = min(timeit.repeat(lambda: run(compiled), number=1, repeat=args.repeat))
        print(f"{name:36s} {t_py:11.4f} {t_c:13.4f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
