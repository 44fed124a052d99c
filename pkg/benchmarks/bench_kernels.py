"""Compare the compiled kernels against the numpy fallback.

Run with ``python benchmarks/bench_kernels.py``. Each kernel is timed on a
workload of the size met in a desk-scale fit, and the outputs of both
backends are checked for agreement before timing.
"""

import argparse
import timeit

import numpy as np

from jitteradj import _kernels_py as py
from jitteradj.geometry import Polygon
from jitteradj.mesh import build_mesh

try:
    from jitteradj import _kernels as cy
except ImportError:
    cy = None


def workloads(rng):
    # mixture: 300 clusters with 76 or 151 integration points
    counts = np.where(rng.random(300) < 0.4, 76, 151)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    N = offsets[-1]
    eta = rng.normal(-2.0, 1.0, N)
    la = np.log(np.ones(N) / np.repeat(counts, counts))
    n = rng.integers(15, 36, 300).astype(float)
    y = rng.binomial(n.astype(int), 0.2).astype(float)
    mixture = (eta, la, offsets, y, n)

    phi = np.linspace(0, 2 * np.pi, 240, endpoint=False)
    ring = np.column_stack([500 + 450 * np.cos(phi) * (1 + 0.05 * np.cos(5 * phi)), 400 + 360 * np.sin(phi)])
    pts = rng.uniform([0, 0], [1000, 800], (200_000, 2))
    rings = (pts, ring)

    mesh = build_mesh(Polygon.rectangle(0, 0, 1000, 800), 25.0, 50.0, 150.0)
    loc = mesh.locator
    q = rng.uniform([-100, -100], [1100, 900], (N, 2))
    locate = (q, np.ascontiguousarray(mesh.nodes), mesh.triangles.astype(np.int64), *loc.kernel_args())
    return {"mixture_terms": mixture, "points_in_ring": rings, "points_on_ring": rings, "locate_points": locate}


def check(name, a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    for x, y in zip(a, b):
        if not np.allclose(x, y, rtol=1e-10, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    work = workloads(rng)
    print(f"{'kernel':<16}{'numpy [ms]':>12}{'cython [ms]':>13}{'speedup':>10}")
    for name, a in work.items():
        f_py = getattr(py, name)
        t_py = min(timeit.repeat(lambda: f_py(*a), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:<16}{t_py:12.2f}{'n/a':>13}{'':>10}")
            continue
        f_cy = getattr(cy, name)
        check(name, f_py(*a), f_cy(*a))
        t_cy = min(timeit.repeat(lambda: f_cy(*a), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16}{t_py:12.2f}{t_cy:13.2f}{t_py / t_cy:9.1f}x")


if __name__ == "__main__":
    main()
