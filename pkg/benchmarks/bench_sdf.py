"""Signed-distance query throughput: numba BVH kernel vs the numpy brute-force path.

    python benchmarks/bench_sdf.py [--queries 20000] [--repeat 3]

Both paths run in-process (``use_numba=True/False``); the environment flag
TACGRAPH_NO_NUMBA=1 selects the numpy path globally.  Results are checked to
agree exactly before timing is reported.
"""

import argparse
import time

import numpy as np

from tacgraph._accel import HAVE_NUMBA, backend
from tacgraph.geometry.mesh import load_mesh


def _time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--queries", type=int, default=20000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--meshes", nargs="+", default=["cube", "cylinder", "lshape", "wrench"])
    args = ap.parse_args(argv)

    print(f"backend: {backend()}  (numba available: {HAVE_NUMBA})")
    print(f"{'mesh':>10} {'faces':>6} {'numba us/q':>11} {'numpy us/q':>11} {'speedup':>8}")
    rng = np.random.default_rng(0)
    for name in args.meshes:
        m = load_mesh(f"builtin:{name}")
        lo, hi = m.bounds
        q = rng.uniform(lo - 0.2 * (hi - lo), hi + 0.2 * (hi - lo), (args.queries, 3))
        ref = m.query(q, use_numba=False)
        t_np = _time(lambda: m.query(q, use_numba=False), args.repeat)
        if HAVE_NUMBA:
            m.query(q[:10], use_numba=True)  # compile outside the timed region
            got = m.query(q, use_numba=True)
            assert np.array_equal(got[0], ref[0]) and np.array_equal(got[3], ref[3]), "paths disagree"
            t_nb = _time(lambda: m.query(q, use_numba=True), args.repeat)
            sp = f"{t_np / t_nb:7.1f}x"
            nb = f"{1e6 * t_nb / len(q):11.2f}"
        else:
            nb, sp = f"{'n/a':>11}", f"{'n/a':>8}"
        print(f"{name:>10} {len(m.faces):6d} {nb} {1e6 * t_np / len(q):11.2f} {sp}")


if __name__ == "__main__":
    main()
