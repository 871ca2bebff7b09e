"""Time the numba and pure-numpy versions of each hot kernel side by side.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--batch 16] [--size 64]

Both versions are called directly, so the CINESCAR_DISABLE_NUMBA flag does not
matter here; the first numba call (compilation or cache load) is excluded.
"""

import argparse
import timeit

import numpy as np

from cinescar import metrics, motionext
from cinescar.ndgrad import _bilinear


def _time(fn, repeat):
    fn()  # warm-up / JIT
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def cases(batch, size, rng):
    img = rng.uniform(size=(batch, 1, size, size))
    flow = rng.normal(scale=2.0, size=(batch, 2, size, size))
    gout = rng.normal(size=img.shape)
    fixed = rng.uniform(size=(size, size))
    moving = np.roll(fixed, 1, axis=1)
    gy, gx = np.gradient(fixed)
    lk_flow = np.zeros((2, size, size))
    pts_a = np.argwhere(rng.uniform(size=(size, size)) > 0.8).astype(float)
    pts_b = np.argwhere(rng.uniform(size=(size, size)) > 0.8).astype(float)
    return [
        ("grid_sample forward", lambda: _bilinear.sample_numba(img, flow), lambda: _bilinear.sample_numpy(img, flow)),
        (
            "grid_sample backward",
            lambda: _bilinear.sample_backward_numba(img, flow, gout),
            lambda: _bilinear.sample_backward_numpy(img, flow, gout),
        ),
        (
            "lucas-kanade refine (7x7, 5 iters)",
            lambda: motionext._lk_refine_numba(fixed, moving, gx, gy, lk_flow, 3, 5, 1e-6),
            lambda: motionext._lk_refine_numpy(fixed, moving, gx, gy, lk_flow, 3, 5, 1e-6),
        ),
        (
            "hausdorff directed",
            lambda: metrics._directed_numba(pts_a, pts_b),
            lambda: metrics._directed_numpy(pts_a, pts_b),
        ),
    ]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':36s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, fast, slow in cases(args.batch, args.size, rng):
        a, b = _time(fast, args.repeat), _time(slow, args.repeat)
        print(f"{name:36s} {a * 1e3:10.2f} {b * 1e3:10.2f} {b / a:8.1f}x")


if __name__ == "__main__":
    main()
