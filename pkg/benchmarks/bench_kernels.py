"""Time the numba and pure-numpy flavours of each kernel, plus a full graph build.

    python3 benchmarks/bench_kernels.py [--repeats 5]

The graph-build rows run the library in two subprocesses, one with
SIAMDIFF_DISABLE_NUMBA=1, since the dispatch is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from siamdiff import _kernels as K


def _best(fn, repeats):
    fn()  # warm-up, also triggers numba compilation
    return min(timeit.repeat(fn, number=1, repeat=repeats))


def kernel_rows(repeats):
    rng = np.random.default_rng(0)
    atoms = rng.normal(size=(1200, 3)) * 12.0
    res = rng.normal(size=(150, 3)) * 10.0
    src, dst = K.radius_pairs_numpy(res, 10.0)
    src, dst = np.r_[src, dst], np.r_[dst, src]
    vals = rng.normal(size=(len(src) * 4, 64))
    idx = rng.integers(0, 150, len(vals))
    bonded = np.zeros((400, 400), bool)
    cases = [
        ("radius_pairs 1200 atoms r=4.5", "radius_pairs", (atoms, 4.5)),
        ("knn_indices 150 nodes k=10", "knn_indices", (res, 10)),
        ("segment_sum %d x 64" % len(vals), "segment_sum", (vals, idx, 150)),
        ("line_graph_pairs %d edges" % len(src), "line_graph_pairs", (src, dst, 150)),
        ("closest_unbonded_pair 400 atoms", "closest_unbonded_pair", (atoms[:400], bonded)),
    ]
    rows = []
    for label, name, args in cases:
        nb_fn, np_fn = getattr(K, name + "_numba"), getattr(K, name + "_numpy")
        rows.append((label, _best(lambda: nb_fn(*args), repeats), _best(lambda: np_fn(*args), repeats)))
    return rows


GRAPH_SNIPPET = """
import timeit
from siamdiff.ingest import GraphConfig, build_graph, load_toy_set
ps = load_toy_set()
cfg = GraphConfig(level="atom")
build_graph(ps[0], cfg)
print(min(timeit.repeat(lambda: [build_graph(p, cfg) for p in ps], number=1, repeat=%d)))
"""


def graph_row(repeats):
    out = []
    for flag in ("", "1"):
        env = dict(os.environ, SIAMDIFF_DISABLE_NUMBA=flag)
        r = subprocess.run([sys.executable, "-c", GRAPH_SNIPPET % repeats], env=env,
                           capture_output=True, text=True, check=True)
        out.append(float(r.stdout.strip()))
    return ("atom graphs, toy set", out[0], out[1])


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args(argv)
    rows = kernel_rows(args.repeats) + [graph_row(args.repeats)]
    w = max(len(r[0]) for r in rows)
    print(f"{'case':<{w}}  {'numba ms':>10}  {'numpy ms':>10}  {'speedup':>8}")
    for label, a, b in rows:
        print(f"{label:<{w}}  {1e3 * a:10.2f}  {1e3 * b:10.2f}  {b / a:7.1f}x")


if __name__ == "__main__":
    main()
