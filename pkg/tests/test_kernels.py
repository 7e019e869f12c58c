"""The compiled kernels against their own python source (``.py_func``)."""
import numpy as np
import pytest

from h22strip import graph, kernels, measure, sampler, vrjp
from h22strip._accel import backend_name


@pytest.fixture(scope="module")
def arrays(k2):
    st = graph.build_strip(k2, -2, 3, graph.Weights((0.8,), (1.2, 0.6), 1.5))
    return st, sampler._arrays(st)


def test_band_cholesky_logdet(arrays, rng):
    st, sa = arrays
    for _ in range(5):
        t = rng.normal(size=sa.n)
        ab = np.zeros((sa.bw + 1, sa.n))
        kernels.band_fill(t, sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps, sa.bw, ab)
        ld = kernels.band_cholesky(ab, sa.n, sa.bw)
        assert ld == pytest.approx(measure.log_det_pinned(st, t), abs=1e-10)


def test_band_cholesky_not_pd():
    ab = np.array([[1.0, -1.0], [2.0, 0.0]])
    assert np.isnan(kernels.band_cholesky(ab, 2, 1))


def test_band_solve(arrays, rng):
    st, sa = arrays
    t = rng.normal(size=sa.n)
    ab = np.zeros((sa.bw + 1, sa.n))
    kernels.band_fill(t, sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps, sa.bw, ab)
    kernels.band_cholesky(ab, sa.n, sa.bw)
    L = np.zeros((sa.n, sa.n))
    for d in range(sa.bw + 1):
        idx = np.arange(sa.n - d)
        L[idx + d, idx] = ab[d, : sa.n - d]
    assert np.allclose(L @ L.T, measure.pinned_matrix(st, t))
    z = rng.normal(size=sa.n)
    x = z.copy()
    kernels.band_solve_lt(ab, sa.n, sa.bw, x)
    assert np.allclose(L.T @ x, z)


def _same(a, b):
    for x, y in zip(a if isinstance(a, tuple) else (a,), b if isinstance(b, tuple) else (b,)):
        assert np.array_equal(np.asarray(x), np.asarray(y))


def test_metropolis_parity(arrays):
    _, sa = arrays
    args = (np.zeros(sa.n), sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps, sa.bw, sa.n0,
            0.7, 0.9, 6, 2, 123)
    _same(kernels.metropolis(*args), kernels.metropolis.py_func(*args))


def test_wilson_parity(arrays, rng):
    st, sa = arrays
    t = rng.normal(size=sa.n)
    for seed in range(5):
        args = (t, sa.nbr_ptr, sa.nbr_idx, sa.nbr_edge, sa.nbr_beta, sa.n, st.root, seed)
        a = kernels.wilson(*args)
        _same(a, kernels.wilson.py_func(*args))
        tree = frozenset(st.edge_keys[k] for k in a if k >= 0)
        assert st.is_spanning_tree(tree)


def test_vrjp_kernel_parity(k2):
    pg = vrjp.PinnedGraph(graph.build_strip(k2, -8, 8))
    common = (pg.nbr_ptr, pg.nbr_idx, pg.nbr_beta, pg.rho, pg.n_vertices)
    cps = np.array([0, 1, 5, 50, 300], dtype=np.int64)
    walk = common + (4, 300, cps, pg.level, 17)
    _same(kernels.vrjp_walk(*walk), kernels.vrjp_walk.py_func(*walk))
    pre = common + (50, 3, 5)
    _same(kernels.vrjp_prefix(*pre), kernels.vrjp_prefix.py_func(*pre))
    traj = common + (10.0, 1000, 8)
    _same(kernels.vrjp_trajectory(*traj), kernels.vrjp_trajectory.py_func(*traj))


def test_python_kernels_keep_global_rng():
    state = np.random.get_state()[1].copy()
    assert callable(kernels.wilson.py_func)
    if backend_name() == "python":
        kernels.wilson(np.zeros(1), np.array([0, 0]), np.zeros(0, np.int64),
                       np.zeros(0, np.int64), np.zeros(0), 1, 0, 3)
        assert np.array_equal(np.random.get_state()[1], state)
