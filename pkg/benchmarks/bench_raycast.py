"""Raycast backend benchmark: compiled extension vs numpy fallback.

Usage: python3 benchmarks/bench_raycast.py [repeats]
Also verifies bit identity between the two backends on every scene.
"""

import sys
import time

import numpy as np

from capsnav import kernels


def bench(repeats=200):
    rng = np.random.default_rng(0)
    scenes = []
    for _ in range(20):
        n = int(rng.integers(20, 120))
        scenes.append((
            float(rng.uniform(-5, 5)), float(rng.uniform(-5, 5)),
            rng.uniform(-np.pi, np.pi, 64),
            rng.uniform(-15, 15, n), rng.uniform(-15, 15, n),
            rng.uniform(0.1, 1.5, n),
            rng.integers(1, 4, n).astype(np.int64),
        ))

    def run_py():
        for px, py, ang, cx, cy, cr, cls in scenes:
            kernels._raycast_py(px, py, np.cos(ang), np.sin(ang),
                                cx, cy, cr, cls, 12.0)

    def run_dispatch():
        for px, py, ang, cx, cy, cr, cls in scenes:
            kernels.raycast(px, py, ang, cx, cy, cr, cls, 12.0)

    for px, py, ang, cx, cy, cr, cls in scenes:
        d1, c1 = kernels._raycast_py(px, py, np.cos(ang), np.sin(ang),
                                     cx, cy, cr, cls, 12.0)
        d2, c2 = kernels.raycast(px, py, ang, cx, cy, cr, cls, 12.0)
        assert np.array_equal(d1, d2) and np.array_equal(c1, c2), \
            "backend outputs differ"

    run_py(); run_dispatch()  # warm up
    t0 = time.perf_counter()
    for _ in range(repeats):
        run_py()
    t_py = time.perf_counter() - t0
    t0 = time.perf_counter()
    for _ in range(repeats):
        run_dispatch()
    t_active = time.perf_counter() - t0

    per = repeats * len(scenes)
    print("active backend: %s" % kernels.active_backend())
    print("numpy fallback: %.1f us/scene" % (1e6 * t_py / per))
    print("dispatch path:  %.1f us/scene" % (1e6 * t_active / per))
    if kernels.active_backend() == "cython":
        print("speedup: %.2fx" % (t_py / t_active))
    print("outputs bit-identical on %d scenes" % len(scenes))


if __name__ == "__main__":
    bench(int(sys.argv[1]) if len(sys.argv) > 1 else 200)
