"""Time the numba kernels against the pure-numpy fallback.

Renders the same random cloud through both backends and reports wall time
per call for the forward pass and the full forward+backward pass, plus the
largest image difference as a sanity check that the two paths agree.

    python3 benchmarks/bench_backends.py
    python3 benchmarks/bench_backends.py --counts 500 2000 8000 --size 256
"""

import argparse
import os
import time

import numpy as np

from splatrank.gaussians import GaussianCloud
from splatrank.rasterizer import render_backward, render_forward
from splatrank.scenes import make_ring_cameras


def build_scene(count, size, seed=0):
    rng = np.random.default_rng(seed)
    bbox = np.array([[-0.6, -0.6, -0.6], [0.6, 0.6, 0.6]])
    cloud = GaussianCloud.random_init(bbox, count, rng, max_sh_degree=2)
    cloud.raw_opacities[:] = rng.uniform(0.0, 3.0, size=count)
    cam = make_ring_cameras(3, size, radius=2.2)[0]
    return cloud, cam


def time_backend(backend, cloud, cam, repeats):
    os.environ["SPLATRANK_BACKEND"] = backend
    bg = np.ones(3)
    dldc = np.full((cam.height, cam.width, 3), 1e-3)

    def full_pass():
        out = render_forward(cloud, cam, background=bg)
        render_backward(cloud, out, dldc)
        return out

    full_pass()  # warm up (JIT compile on the numba path)

    fwd = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = render_forward(cloud, cam, background=bg)
        fwd.append(time.perf_counter() - t0)
    both = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        full_pass()
        both.append(time.perf_counter() - t0)
    return min(fwd), min(both), out.color


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--counts", type=int, nargs="+", default=[500, 2000, 8000])
    ap.add_argument("--size", type=int, default=128, help="image side length")
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()

    header = (f"{'gaussians':>10} {'image':>7} "
              f"{'numpy fwd':>11} {'numba fwd':>11} {'speedup':>8} "
              f"{'numpy f+b':>11} {'numba f+b':>11} {'speedup':>8} {'max|diff|':>10}")
    print(header)
    print("-" * len(header))
    for count in args.counts:
        cloud, cam = build_scene(count, args.size)
        np_fwd, np_both, np_img = time_backend("numpy", cloud, cam, args.repeats)
        nb_fwd, nb_both, nb_img = time_backend("numba", cloud, cam, args.repeats)
        diff = float(np.abs(np_img - nb_img).max())
        print(f"{count:>10} {args.size:>5}px "
              f"{np_fwd * 1e3:>9.1f}ms {nb_fwd * 1e3:>9.1f}ms {np_fwd / nb_fwd:>7.1f}x "
              f"{np_both * 1e3:>9.1f}ms {nb_both * 1e3:>9.1f}ms "
              f"{np_both / nb_both:>7.1f}x {diff:>10.2e}")


if __name__ == "__main__":
    main()
