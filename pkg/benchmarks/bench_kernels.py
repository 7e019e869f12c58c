#!/usr/bin/env python3
"""Time the hot kernels under the numba and the pure-python backends.

Each backend runs in its own subprocess because the backend is fixed at
import time by H22STRIP_DISABLE_NUMBA.  Both backends use the same random
stream, so the script also checks that they return identical results.

    python benchmarks/bench_kernels.py [--quick]
"""
import argparse
import hashlib
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import hashlib, json, sys, time
import numpy as np
from h22strip import graph, kernels, sampler, vrjp
from h22strip._accel import backend_name

scale = float(sys.argv[1])
base = graph.complete_k2()
w = graph.Weights.uniform(base)
strip = graph.build_strip(base, -4, 16, w)
sa = sampler._arrays(strip)
pg = vrjp.PinnedGraph(graph.build_strip(base, -60, 60, w))
out = {"backend": backend_name(), "timings": {}, "digests": {}}

def run(name, fn, warm=True):
    if warm:
        fn(small=True)  # compile outside the timing
    t0 = time.perf_counter()
    res = fn(small=False)
    out["timings"][name] = time.perf_counter() - t0
    h = hashlib.sha256()
    for a in (res if isinstance(res, tuple) else (res,)):
        h.update(np.ascontiguousarray(a).tobytes())
    out["digests"][name] = h.hexdigest()

t0 = np.zeros(strip.n_vertices)
def metro(small):
    n = 2 if small else max(2, int(200 * scale))
    return kernels.metropolis(t0, sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps, sa.bw,
                              sa.n0, 0.8, 0.8, n, 1, 7)[0]

def chol(small):
    ab = np.zeros((sa.bw + 1, sa.n))
    rng = np.random.default_rng(0)
    reps = 2 if small else max(2, int(20000 * scale))
    ts = rng.normal(size=(reps, sa.n))
    return np.array([kernels.log_marginal(t, sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps,
                                          sa.bw, ab) for t in ts])

def wil(small):
    reps = 2 if small else max(2, int(2000 * scale))
    t = np.random.default_rng(1).normal(size=sa.n)
    return np.array([kernels.wilson(t, sa.nbr_ptr, sa.nbr_idx, sa.nbr_edge, sa.nbr_beta,
                                    sa.n, strip.root, i) for i in range(reps)])

def walk(small):
    steps = 10 if small else max(10, int(20000 * scale))
    cps = np.array([steps], dtype=np.int64)
    return kernels.vrjp_walk(pg.nbr_ptr, pg.nbr_idx, pg.nbr_beta, pg.rho, pg.n_vertices,
                             20, steps, cps, pg.level, 3)

run("metropolis (K2 strip, 42 vertices)", metro)
run("log_marginal (banded Cholesky)", chol)
run("wilson spanning trees", wil)
run("vrjp skeleton walk", walk)
print(json.dumps(out))
"""


def run_backend(disable, scale):
    env = dict(os.environ)
    env["H22STRIP_DISABLE_NUMBA"] = "1" if disable else "0"
    t0 = time.perf_counter()
    res = subprocess.run([sys.executable, "-c", WORKER, str(scale)], env=env,
                         capture_output=True, text=True, check=True)
    data = json.loads(res.stdout.strip().splitlines()[-1])
    data["wall"] = time.perf_counter() - t0
    return data


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--quick", action="store_true", help="smaller workloads")
    args = ap.parse_args()
    scale = 0.05 if args.quick else 0.25
    fast = run_backend(False, scale)
    slow = run_backend(True, scale)
    print(f"{'kernel':40s} {'numba [s]':>10s} {'python [s]':>11s} {'speedup':>8s}  same result")
    all_same = True
    for name, tn in fast["timings"].items():
        tp = slow["timings"][name]
        same = fast["digests"][name] == slow["digests"][name]
        all_same &= same
        print(f"{name:40s} {tn:10.4f} {tp:11.4f} {tp / tn:8.1f}  {same}")
    print(f"backends: {fast['backend']} / {slow['backend']}; wall {fast['wall']:.1f} s / {slow['wall']:.1f} s")
    tag = hashlib.sha256(json.dumps(fast["digests"], sort_keys=True).encode()).hexdigest()[:12]
    print(f"result digest {tag}; identical across backends: {all_same}")
    return 0 if all_same else 1


if __name__ == "__main__":
    sys.exit(main())
