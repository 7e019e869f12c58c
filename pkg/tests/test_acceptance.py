"""Acceptance criteria, one check per criterion.

Each check returns (passed, detail) and is timed against its runtime
budget.  Under pytest the PASS/FAIL lines appear in the terminal summary;
``python tests/test_acceptance.py [ids...]`` prints them directly.
"""
import math
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from h22strip import graph, measure, sampler, transfer, tree_codec as tc, vrjp
from h22strip.measure import DeformationParams
from h22strip.sampler import SamplerConfig

SEED = 20240611


# ------------------------------------------------------------ shared setup

@lru_cache(maxsize=None)
def k2_model():
    base = graph.complete_k2()
    model = transfer.TransferModel(base, graph.Weights.uniform(base), transfer.GridSpec(),
                                   tc.alphabet(base))
    return model, transfer.perron(model.operator("K"))


@lru_cache(maxsize=None)
def sv_model():
    base = graph.single_vertex()
    model = transfer.TransferModel(base, graph.Weights.uniform(base))
    return model, transfer.perron(model.operator("K"))


def triangle():
    return graph.BaseGraph.from_edges(3, [(0, 1), (1, 2), (0, 2)], pin=0)


# ----------------------------------------------------------- the criteria

def c01_matrix_tree():
    rng = np.random.default_rng(SEED)
    k2, tri = graph.complete_k2(), triangle()
    shapes = [(k2, 0, 1), (k2, -1, 2), (tri, -1, 1), (k2, -2, 3)]
    worst = 0.0
    for base, lo, hi in shapes:
        trees = tc.enumerate_spanning_trees(graph.build_strip(base, lo, hi), max_vertices=12)
        for _ in range(100):
            w = graph.Weights(tuple(rng.uniform(0.3, 2.0, len(base.edges))),
                              tuple(rng.uniform(0.3, 2.0, base.n_vertices)),
                              float(rng.uniform(0.05, 5.0)))
            st = graph.build_strip(base, lo, hi, w)
            t = rng.normal(scale=1.5, size=st.n_vertices)
            logs = np.array([measure.log_tree_weight(st, t, tr) for tr in trees])
            top = logs.max()
            tree_sum = math.exp(top) * np.sum(np.exp(logs - top))
            det = math.exp(measure.log_det_pinned(st, t))
            worst = max(worst, abs(det - tree_sum) / det)
    return worst <= 1e-10, f"max relative error {worst:.2e} over 4 strips x 100 draws (tol 1e-10)"


def c02_normalization():
    sv = graph.single_vertex()
    errs = []
    for eps in (0.3, 1.0, 3.0):
        st = graph.build_strip(sv, 0, 0, graph.Weights.uniform(sv, epsilon=eps))
        errs.append(abs(sampler.single_vertex_quadrature(st) - 1.0))
    cyc = graph.build_strip(graph.complete_k2(), 0, 1)
    est = sampler.normalization_is(cyc, 20000, SEED)
    z = est.zscore(1.0)
    ok = max(errs) <= 1e-6 and abs(z) <= 3
    return ok, (f"single vertex |Z-1| = {max(errs):.1e} (tol 1e-6); "
                f"4-cycle IS mass {est.mean:.4f} +- {est.stderr:.4f} (z = {z:+.2f}, tol 3)")


def c03_change_of_variables():
    rng = np.random.default_rng(SEED)
    st = graph.build_strip(graph.complete_k2(), 0, 1)
    trees = tc.enumerate_spanning_trees(st)
    p = st.pin_vertex
    worst = 0.0
    for _ in range(1000):
        t = rng.normal(scale=1.5, size=st.n_vertices)
        s = rng.normal(scale=1.5, size=st.n_vertices)
        g = measure.to_gradient(st, t, s)
        lj = measure.log_jacobian(st, t)
        hp = measure.pin_hamiltonian(st, t[p], s[p])
        for tree in trees:
            lhs = measure.log_density_tree(st, t, s, tree) + lj
            rhs = -hp - measure.grad_hamiltonian(st, g, tree)
            worst = max(worst, abs(lhs - rhs))
    return worst <= 1e-10, f"max |difference| {worst:.2e} on 1000 configs x {len(trees)} trees (tol 1e-10)"


def c04_codec_bijection():
    k2 = graph.complete_k2()
    alph = tc.alphabet(k2)
    rows, bad = [], 0
    for n_levels in range(2, 6):
        st = graph.build_strip(k2, 0, n_levels - 1)
        trees = tc.enumerate_spanning_trees(st)
        words = set()
        for tree in trees:
            w = tc.encode(st, tree)
            words.add(w)
            if tc.decode(w, st, alph) != tree:
                bad += 1
        rows.append((n_levels, len(trees), len(words), alph.word_count(n_levels),
                     tc.laplacian_tree_count(st)))
    ok = bad == 0 and all(a == b == c == d for _, a, b, c, d in rows)
    counts = ", ".join(f"{n}:{a}" for n, a, *_ in rows)
    return ok, f"round-trip failures {bad}; trees = words = det per level count {counts}"


def c05_local_decomposition():
    rng = np.random.default_rng(SEED)
    k2 = graph.complete_k2()
    st = graph.build_strip(k2, -2, 3, graph.Weights((0.9,), (1.1, 0.7), 1.3))
    lm = measure.LocalModel(k2, st.weights, tc.alphabet(k2))
    worst = 0.0
    for i in range(1000):
        t = rng.normal(size=st.n_vertices)
        s = rng.normal(size=st.n_vertices)
        par = sampler.sample_tree_given_t(st, rng.normal(size=st.n_vertices), i)
        tree = frozenset(st.edge_keys[k] for k in par if k >= 0)
        l = int(rng.integers(0, st.hi + 1))
        g = measure.to_gradient(st, t, s)
        a = measure.interpolated_hamiltonian(st, g, tree, l)
        b = lm.block_sum(st, g, tree, l)
        worst = max(worst, abs(a - b) / max(1.0, abs(a)))
    return worst <= 1e-10, f"max relative difference {worst:.2e} on 1000 triples (tol 1e-10)"


def c06_spectral_suite():
    model, spec = k2_model()
    K = model.operator("K")
    mods = transfer.leading_moduli(K, 3)
    res = max(spec.residual_right, spec.residual_left)
    ok = (res <= 1e-10 and spec.phi_right.min() > 0 and spec.phi_left.min() > 0
          and mods[1] < spec.lam and spec.gap_fit_r2 >= 0.99 and spec.gap_ratio < 1)
    return ok, (f"{model.size} rows: lambda {spec.lam:.6f}, |z_2| {mods[1]:.4f}, residual {res:.1e}, "
                f"min eigvec entry {spec.min_entry:.1e}, gap ratio {spec.gap_ratio:.3f} "
                f"(R^2 {spec.gap_fit_r2:.4f})")


def c07_symmetry():
    d_sv = transfer.symmetry_defect(*sv_model())
    d_k2 = transfer.symmetry_defect(*k2_model())
    model, _ = k2_model()
    skew = transfer.TransferModel(model.base, model.weights, transfer.GridSpec(x_range=(-6.0, 2.0)),
                                  model.alph)
    d_skew = transfer.symmetry_defect(skew)
    ok = d_sv <= 1e-6 and d_k2 <= 1e-6 and d_skew > 1e-4
    return ok, (f"single vertex {d_sv:.1e}, K2 {d_k2:.1e} (tol 1e-6); "
                f"asymmetric grid control {d_skew:.1e} (> 1e-4)")


def c08_c4():
    model, spec = k2_model()
    c4, lin = transfer.c4_estimate(model, spec, alphas=(0.01, 0.02))
    return c4 > 0 and lin <= 1e-8, f"c4 = {c4:.6f} > 0, alpha-linearity error {lin:.1e} (tol 1e-8)"


def c09_energy_crosscheck():
    sv = graph.single_vertex()
    st = graph.build_strip(sv, -2, 3)
    l, alpha = 2, -0.1
    model, _ = sv_model()
    e_tr = transfer.energy_transfer(model, st.lo, st.hi, l, alpha).value
    cfg = SamplerConfig(seed=SEED, burn_in=1000, samples=40000, thin=2)
    res = sampler.mc_energy_entropy(st, l, alpha, cfg)
    z = res.energy.zscore(e_tr)
    return abs(z) <= 3, (f"transfer E = {e_tr:.5f}, Monte Carlo E = {res.energy.mean:.5f} "
                         f"+- {res.energy.stderr:.5f} (z = {z:+.2f}, tol 3)")


def c10_entropy_bound():
    k2 = graph.complete_k2()
    st = graph.build_strip(k2, -2, 5)
    params = DeformationParams()
    cfg = SamplerConfig(seed=SEED, burn_in=1000, samples=8000, thin=3)
    chain = sampler.run_chain(st, cfg)
    scale = params.c9 * params.eta
    alphas = [f * scale for f in (-0.1, -0.05, 0.05, 0.1)]
    lines, ok = [], True
    for l in (2, 4):
        samples = sampler._interpolated_samples(st, chain, cfg, l, with_trees=True)
        zero = sampler.mc_energy_entropy(st, l, 0.0, cfg, params, samples=samples)
        ok &= zero.entropy.mean == 0.0
        for a in alphas:
            r = sampler.mc_energy_entropy(st, l, a, cfg, params, samples=samples)
            ok &= r.entropy_ok(3.0)
            lines.append(f"S({a:+.4f}, l={l}) = {r.entropy.mean:.2e} +- {r.entropy.stderr:.1e}")
    c5 = sampler.entropy_constant(params, st.weights, k2)
    return ok, f"S(0) = 0 exactly; c5 = {c5:.1f}; " + "; ".join(lines)


def c11_main_decay():
    k2 = graph.complete_k2()
    levels = list(range(1, 9))
    curves = {}
    for hi in (10, 16):
        st = graph.build_strip(k2, -4, hi)
        cfg = SamplerConfig(seed=SEED + hi, burn_in=2000, samples=30000, thin=5)
        curves[hi] = sampler.decay_curve(st, levels, cfg)
    c16, c10 = curves[16], curves[10]
    stable = abs(c10.slope - c16.slope) <= 0.2 * abs(c16.slope)
    ok = c16.decreasing(2.0, 1) and c16.slope_negative(1.645) and stable
    est = ", ".join(f"{e:.4f}" for e in c16.estimates)
    # reported only: the transfer-operator curve on the same strip
    model, _ = k2_model()
    lz = [transfer.log_partition(model, -4, 16, l) for l in levels]
    tr_slope = np.polyfit(levels, lz, 1)[0]
    return ok, (f"hi=16 estimates l=1..8: {est}; slope {c16.slope:.4f} +- {c16.slope_stderr:.4f}; "
                f"hi=10 slope {c10.slope:.4f} (relative change "
                f"{abs(c10.slope - c16.slope) / abs(c16.slope):.1%}, tol 20%); "
                f"transfer-operator slope {tr_slope:.4f}")


def c12_vrjp_mixture():
    sv = graph.single_vertex()
    pg = vrjp.PinnedGraph(graph.build_strip(sv, 0, 1))
    cfg = SamplerConfig(seed=SEED, burn_in=1000, samples=10000, thin=5)
    rep = vrjp.mixing_check(pg, 3, n_vrjp=100000, n_env=10000, config=cfg, seed=SEED)
    zmax = max(abs(r["z"]) for r in rep.rows)
    return rep.passed, (f"{len(rep.rows)} paths of length <= 3, max |z| = {zmax:.2f} (tol 3); "
                        f"reversibility defect {rep.reversibility:.1e}; "
                        f"holding-time KS p = {rep.ks_pvalue:.2f}; failures {rep.failures}")


def c13_localization():
    k2 = graph.complete_k2()
    pg = vrjp.PinnedGraph(graph.build_strip(k2, -300, 300))
    rep = vrjp.localization_stats(pg, 10 ** 6, 200, seed=SEED)
    ok = (rep.decay_significant(1.645) and rep.range_log_bounded(1.645)
          and rep.occupation(0) > rep.occupation(10))
    return ok, (f"occupation slope {rep.slope:.3f} +- {rep.slope_stderr:.3f}; "
                f"occ(0) {rep.occupation(0):.3f} > occ(10) {rep.occupation(10):.4f}; "
                f"mean range {rep.range_mean[0]:.1f} at n=1e3, {rep.range_mean[-1]:.1f} at n=1e6, "
                f"max R/log n {rep.range_ratio_max:.2f}; curvature in log n "
                f"{rep.range_curvature:.3f} +- {rep.range_curvature_stderr:.3f}; "
                f"max range {rep.max_range} (strip half-width 300)")


CRITERIA = [
    ("C01", "matrix-tree identity", 10, c01_matrix_tree),
    ("C02", "normalization", 60, c02_normalization),
    ("C03", "change of variables", 30, c03_change_of_variables),
    ("C04", "codec bijection", 60, c04_codec_bijection),
    ("C05", "local decomposition", 30, c05_local_decomposition),
    ("C06", "spectral suite", 120, c06_spectral_suite),
    ("C07", "symmetry identity", 120, c07_symmetry),
    ("C08", "c4 positive and linear", 60, c08_c4),
    ("C09", "energy cross-check", 300, c09_energy_crosscheck),
    ("C10", "entropy bound", 300, c10_entropy_bound),
    ("C11", "main decay", 900, c11_main_decay),
    ("C12", "VRJP mixture", 600, c12_vrjp_mixture),
    ("C13", "localization stats", 600, c13_localization),
]


def run_criterion(cid, title, limit, fn):
    t0 = time.perf_counter()
    try:
        ok, detail = fn()
    except Exception as exc:  # report, do not hide
        ok, detail = False, f"raised {type(exc).__name__}: {exc}"
    dt = time.perf_counter() - t0
    in_time = dt < limit
    tag = "PASS" if ok and in_time else "FAIL"
    line = f"[{tag}] {cid} {title}: {detail} | {dt:.1f} s (limit {limit} s)"
    return ok and in_time, line


@pytest.mark.parametrize("cid,title,limit,fn", CRITERIA, ids=[c[0] for c in CRITERIA])
def test_acceptance(cid, title, limit, fn, acceptance_log):
    ok, line = run_criterion(cid, title, limit, fn)
    acceptance_log.append(line)
    print(line)
    assert ok, line


def main(argv):
    wanted = set(argv) or {c[0] for c in CRITERIA}
    results = []
    for crit in CRITERIA:
        if crit[0] in wanted:
            ok, line = run_criterion(*crit)
            print(line, flush=True)
            results.append(ok)
    print(f"{sum(results)}/{len(results)} criteria passed")
    return 0 if all(results) else 1


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
