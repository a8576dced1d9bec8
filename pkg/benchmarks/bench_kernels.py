"""Time the numba and numpy versions of each hot kernel on 640x480 inputs.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Both versions are called directly through ``kernels.IMPLEMENTATIONS``, so the
``TERRAINSEG_DISABLE_NUMBA`` flag does not matter here.  The first numba call
(compilation or cache load) is excluded from the timings.
"""

import argparse
import timeit

import numpy as np

from terrainseg import kernels
from terrainseg.imaging import IntegralImage


def cases(rng):
    P = IntegralImage(rng.random((480, 640))).padded
    n = 20000
    xs = rng.integers(20, 620, n)
    ys = rng.integers(20, 460, n)
    sizes = rng.choice(np.array([4, 6, 8, 10]), n)
    m = 768
    sx = rng.uniform(0, 640, m)
    sy = rng.uniform(0, 480, m)
    sig = rng.uniform(2.0, 12.0, m)
    scores = rng.random((m, 5))
    return {
        "haar_responses": (P, xs, ys, sizes),
        "hessian_layer": (P, 27, 2, 240, 320),
        "splat": (sx, sy, sig, scores, 480, 640),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':<16}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, inputs in cases(rng).items():
        nb, np_ = kernels.IMPLEMENTATIONS[name]
        nb(*inputs)
        t_nb = min(timeit.repeat(lambda: nb(*inputs), number=1, repeat=args.repeat)) * 1e3
        t_np = min(timeit.repeat(lambda: np_(*inputs), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_nb:>10.2f}{t_np:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
