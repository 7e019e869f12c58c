import math

import numpy as np
import pytest

from h22strip import graph, measure, sampler, tree_codec
from h22strip.sampler import SamplerConfig, SamplerError


def test_config_validation():
    with pytest.raises(ValueError):
        SamplerConfig(samples=0)
    with pytest.raises(ValueError):
        SamplerConfig(n_batches=5)
    with pytest.raises(ValueError):
        SamplerConfig(t_step=-1.0)
    cfg = SamplerConfig.from_dict({"seed": 3, "samples": 50})
    assert cfg.seed == 3 and cfg.thin == 1


def test_batch_means_iid(rng):
    x = rng.normal(size=40000)
    est = sampler.batch_means(x)
    assert abs(est.mean) < 4 * est.stderr
    assert est.stderr == pytest.approx(1 / math.sqrt(len(x)), rel=0.5)
    with pytest.raises(SamplerError):
        sampler.batch_means(x[:10])


def test_batch_means_sees_autocorrelation(rng):
    n, phi = 50000, 0.9
    e = rng.normal(size=n)
    x = np.empty(n)
    x[0] = 0.0
    for i in range(1, n):
        x[i] = phi * x[i - 1] + e[i]
    est = sampler.batch_means(x)
    naive = x.std() / math.sqrt(n)
    # integrated autocorrelation time (1 + phi) / (1 - phi) = 19
    assert est.stderr / naive == pytest.approx(math.sqrt(19), rel=0.4)
    assert est.n_effective < n / 5


def test_ratio_estimate(rng):
    den = rng.exponential(size=20000)
    num = 2.5 * den
    est = sampler.ratio_estimate(num, den)
    assert est.mean == pytest.approx(2.5) and est.stderr < 1e-12


def test_log_marginal_matches_dense(k2, rng):
    st = graph.build_strip(k2, -2, 3)
    sa = sampler._arrays(st)

    def dense(t):
        p = st.pin_vertex
        eps = st.weights.epsilon
        return (-t.sum() - measure.free_energy_f(st, t) + 0.5 * measure.log_det_pinned(st, t)
                - eps * (math.cosh(t[p]) - 1))

    for _ in range(5):
        t = rng.normal(size=st.n_vertices)
        assert sa.log_marginal(t) == pytest.approx(dense(t), abs=1e-10)
        norm = 0.5 * st.n_vertices * math.log(2 * math.pi)
        assert sampler.log_t_marginal(st, t) == pytest.approx(dense(t) - norm, abs=1e-10)


def test_t_marginal_normalized_single_vertex(sv):
    st = graph.build_strip(sv, 0, 0, graph.Weights.uniform(sv, epsilon=0.7))
    x, w = np.polynomial.legendre.leggauss(400)
    vals = np.exp([sampler.log_t_marginal(st, [20 * xi]) for xi in x])
    assert np.sum(20 * w * vals) == pytest.approx(1.0, abs=1e-9)


def test_s_given_t_covariance(cycle4, rng):
    t = np.array([0.3, -0.2, 0.5, 0.1])
    ss = sampler.sample_s_batch(cycle4, np.tile(t, (40000, 1)), rng)
    cov = np.linalg.inv(measure.pinned_matrix(cycle4, t))
    emp = np.cov(ss.T)
    assert np.allclose(emp, cov, atol=0.05 * np.abs(cov).max())


def test_tree_given_t_frequencies(cycle4):
    t = np.array([0.4, -0.3, 0.8, 0.0])
    trees = tree_codec.enumerate_spanning_trees(cycle4)
    logw = np.array([measure.log_tree_weight(cycle4, t, tr) for tr in trees])
    probs = np.exp(logw - logw.max())
    probs /= probs.sum()
    index = {tr: i for i, tr in enumerate(trees)}
    counts = np.zeros(len(trees))
    n = 8000
    for sd in range(n):
        par = sampler.sample_tree_given_t(cycle4, t, sd)
        tree = frozenset(cycle4.edge_keys[k] for k in par if k >= 0)
        counts[index[tree]] += 1
    se = np.sqrt(probs * (1 - probs) / n)
    assert np.all(np.abs(counts / n - probs) <= 4.5 * se)


def test_chain_is_reproducible(k2):
    st = graph.build_strip(k2, -1, 2)
    cfg = SamplerConfig(seed=7, burn_in=50, samples=200, thin=2)
    a = sampler.run_chain(st, cfg)
    b = sampler.run_chain(st, cfg)
    assert np.array_equal(a.trace, b.trace)
    assert a.status == "ok" and a.trace.shape == (200, st.n_vertices)
    assert all(0.05 <= r <= 0.95 for r in a.acceptance.values())


def test_mcmc_single_vertex_pin_edge(sv, oracles):
    # E[e^{(t_1 - t_0)/2}] on the single-vertex strip is the Perron value
    st = graph.build_strip(sv, 0, 1)
    cfg = SamplerConfig(seed=11, burn_in=500, samples=20000, thin=2)
    est = sampler.mcmc_t(st, cfg, lambda ts: sampler.decay_observable(st, ts, 1))
    assert abs(est.zscore(oracles["single_vertex_lambda"])) < 4


def test_single_vertex_quadrature(sv):
    st = graph.build_strip(sv, 0, 0)
    assert sampler.single_vertex_quadrature(st) == pytest.approx(1.0, abs=1e-10)
    st2 = graph.build_strip(sv, 0, 0, graph.Weights.uniform(sv, epsilon=2.5))
    assert sampler.single_vertex_quadrature(st2) == pytest.approx(1.0, abs=1e-10)
    # E[e^{t0}] = 1: the marginal of e^{t0} has mean 1 for the pinned vertex
    m1 = sampler.single_vertex_quadrature(st, lambda t, s: np.exp(t))
    assert m1 == pytest.approx(1.0, abs=1e-8)
    with pytest.raises(SamplerError):
        sampler.single_vertex_quadrature(graph.build_strip(sv, 0, 1))


def test_normalization_importance_sampling(cycle4):
    est = sampler.normalization_is(cycle4, 4000, seed=5)
    assert abs(est.zscore(1.0)) < 4


def test_decay_curve_guards(k2):
    st = graph.build_strip(k2, -1, 2)
    with pytest.raises(SamplerError):
        sampler.decay_curve(st, [0, 3], SamplerConfig(samples=40))


def test_batch_hamiltonian_matches_scalar(k2, rng):
    st = graph.build_strip(k2, -1, 2)
    m = 6
    ts = rng.normal(size=(m, st.n_vertices))
    ss = rng.normal(size=(m, st.n_vertices))
    parents = [sampler.sample_tree_given_t(st, t, i) for i, t in enumerate(ts)]
    sign, on_path = sampler._tree_tables(st, parents)
    gt, gy = sampler._gradient_batch(st, ts, ss)
    for l in (0, 1, 2):
        h = sampler.interpolated_hamiltonian_batch(st, ts, ss, gt, sign, on_path, l)
        for i in range(m):
            tree = frozenset(st.edge_keys[k] for k in parents[i] if k >= 0)
            g = measure.to_gradient(st, ts[i], ss[i])
            assert h[i] == pytest.approx(measure.interpolated_hamiltonian(st, g, tree, l), abs=1e-10)


def test_energy_entropy_single_vertex(sv, oracles):
    st = graph.build_strip(sv, -1, 2)
    cfg = SamplerConfig(seed=3, burn_in=500, samples=6000, thin=2)
    chain = sampler.run_chain(st, cfg)
    samples = sampler._interpolated_samples(st, chain, cfg, 2, with_trees=True)
    zero = sampler.mc_energy_entropy(st, 2, 0.0, cfg, samples=samples)
    assert zero.entropy.mean == 0.0 and zero.entropy.stderr == 0.0
    alpha = -0.15
    res = sampler.mc_energy_entropy(st, 2, alpha, cfg, samples=samples)
    expect = alpha * 2 * oracles["single_vertex_c4_eta1"]
    assert abs(res.energy.zscore(expect)) < 4
    assert res.entropy_ok() and res.bound_ok()
    with pytest.raises(measure.MeasureError):
        sampler.mc_energy_entropy(st, 2, 0.5, cfg, samples=samples)


def test_pin_block_independent_of_gradients(k2):
    st = graph.build_strip(k2, -1, 2)
    rep = sampler.independence_check(st, SamplerConfig(seed=2, burn_in=200, samples=4000, thin=2))
    assert rep["passed"] and rep["self_control"] == pytest.approx(1.0)
