"""Time each hot kernel under every available backend.

    python benchmarks/bench_kernels.py [--repeat N]

Workloads are KITTI-sized: one dense_rain streak layer on a 1242x375 frame,
densification of a LiDAR-like sparse map of the same size, and a 200x200
matrix of rotated footprint overlaps. Outputs of the backends are compared
bit for bit before timing.
"""
import argparse
import timeit

import numpy as np

from advscene import degrade as dg
from advscene import kernels
from advscene.eval3d import _corners

WIDTH, HEIGHT = 1242, 375


def workloads(seed):
    rng = np.random.default_rng(seed)
    params = dg.get_preset("dense_rain").params
    streaks = dg.sample_streaks(WIDTH, HEIGHT, params, rng)
    # roughly 5% coverage concentrated in the lower two thirds, like a projected scan
    sparse = np.zeros((HEIGHT, WIDTH))
    rows = rng.integers(HEIGHT // 3, HEIGHT, 25_000)
    cols = rng.integers(0, WIDTH, 25_000)
    sparse[rows, cols] = rng.uniform(2.0, 80.0, 25_000)
    n = 200
    quads = _corners(rng.uniform(-10, 10, n), rng.uniform(0, 40, n), rng.uniform(3, 5, n),
                     rng.uniform(1.4, 2, n), rng.uniform(-np.pi, np.pi, n))
    return {
        "rasterize_streaks": lambda be: be.rasterize_streaks(np.zeros((HEIGHT, WIDTH)), streaks),
        "densify_nearest": lambda be: be.densify_nearest(sparse, 10.0, 80.0),
        "quad_overlap_matrix": lambda be: be.quad_overlap_matrix(quads, quads),
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    names = kernels.available_backends()
    backends = {name: kernels.load_backend(name) for name in names}
    print(f"default backend: {kernels.BACKEND}")
    print(f"{'kernel':<22}" + "".join(f"{name + ' (ms)':>16}" for name in names) + f"{'speedup':>10}")
    for kernel, fn in workloads(args.seed).items():
        outputs = [fn(be) for be in backends.values()]
        if not all(np.array_equal(outputs[0], out) for out in outputs[1:]):
            raise SystemExit(f"{kernel}: backends disagree")
        times = [min(timeit.repeat(lambda: fn(be), number=1, repeat=args.repeat)) * 1e3
                 for be in backends.values()]
        by_name = dict(zip(names, times))
        speedup = f"{by_name['python'] / by_name['cython']:.1f}x" if "cython" in by_name else "-"
        print(f"{kernel:<22}" + "".join(f"{t:16.2f}" for t in times) + f"{speedup:>10}")


if __name__ == "__main__":
    main()
