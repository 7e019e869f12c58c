import json
import math

import numpy as np
import pytest

from h22strip import graph, transfer
from h22strip.measure import DeformationParams
from h22strip.transfer import GridSpec, TransferError


@pytest.fixture(scope="module")
def sv_model(sv):
    return transfer.TransferModel(sv, graph.Weights.uniform(sv))


@pytest.fixture(scope="module")
def k2_small(k2, k2_alph):
    return transfer.TransferModel(k2, graph.Weights.uniform(k2), GridSpec(points_per_dim=5), k2_alph)


@pytest.fixture(scope="module")
def k2_default(k2, k2_alph):
    model = transfer.TransferModel(k2, graph.Weights.uniform(k2), GridSpec(), k2_alph)
    return model, transfer.perron(model.operator("K"))


def test_single_vertex_kernel_values(sv_model, oracles):
    K = sv_model.operator("K").dense()
    assert K.shape == (1, 1)
    assert K[0, 0] == pytest.approx(oracles["single_vertex_lambda"], rel=1e-10)
    # the +-1/2 shifted kernels integrate a normalized density
    assert sv_model.operator("K_plus").dense()[0, 0] == pytest.approx(1.0, rel=1e-10)
    assert sv_model.operator("K_minus").dense()[0, 0] == pytest.approx(1.0, rel=1e-10)
    # odd integrand against an even weight
    assert abs(sv_model.operator("Ktilde", 0.0).dense()[0, 0]) < 1e-14


def test_single_vertex_perron(sv_model, oracles):
    spec = transfer.perron(sv_model.operator("K"))
    assert spec.lam == pytest.approx(oracles["single_vertex_lambda"], rel=1e-12)
    assert float(np.sum(spec.phi_left * spec.phi_right)) == pytest.approx(1.0)


def test_single_vertex_c4_and_energy(sv_model, oracles):
    c4, lin = transfer.c4_estimate(sv_model)
    assert c4 == pytest.approx(oracles["single_vertex_c4_eta1"], rel=1e-8)
    assert lin < 1e-8
    # the pin edges are independent, so E(alpha) = alpha l c4 with no rest term
    for l, alpha in [(1, 0.1), (2, -0.1), (3, 0.05)]:
        est = transfer.energy_transfer(sv_model, -1, 3, l, alpha, c4)
        assert est.value == pytest.approx(alpha * l * oracles["single_vertex_c4_eta1"], rel=1e-8)
        assert abs(est.value0) < 1e-14
        assert abs(est.rest) < 1e-12


def test_single_vertex_partition(sv_model, oracles):
    for l in range(4):
        lz = transfer.log_partition(sv_model, -2, 4, l)
        assert lz == pytest.approx(l * math.log(oracles["single_vertex_lambda"]), abs=1e-11)


def test_single_vertex_c4_shrinks_with_eta(sv, oracles):
    model = transfer.TransferModel(sv, graph.Weights.uniform(sv), eta=0.5)
    c4, _ = transfer.c4_estimate(model)
    assert c4 == pytest.approx(oracles["single_vertex_c4_eta05"], rel=1e-6)


def test_kernel_nonnegative_and_sparse(k2_small, k2_alph):
    m = k2_small
    for kind in ("K", "K_plus", "K_minus"):
        D = m.operator(kind).dense().reshape(m.n_tau, m.n_omega, m.n_tau, m.n_omega)
        assert D.min() >= 0
        blocks = np.abs(D).max(axis=(1, 3))
        assert np.all(blocks[~k2_alph.follows] == 0)
        assert np.all(blocks[k2_alph.follows] > 0)


def test_kernel_reflection_symmetry(k2_small, k2_alph):
    m = k2_small
    D = m.operator("K").dense() / np.tile(m.w, m.n_tau)[None, :]
    k = D.reshape(m.n_tau, m.n_omega, m.n_tau, m.n_omega)
    R = k2_alph.reflection
    scale = k.max()
    for a in range(m.n_tau):
        for b in range(m.n_tau):
            assert np.allclose(k[a, :, b, :], k[R[b], :, R[a], :].T, atol=1e-12 * scale)


def test_matvec_matches_dense(k2_small, rng):
    for kind, alpha in [("K", 0.0), ("K_plus", 0.0), ("Ktilde", 0.07)]:
        op = k2_small.operator(kind, alpha)
        D = op.dense()
        v = rng.random(op.shape[0])
        assert np.allclose(op.matvec(v).ravel(), D @ v, rtol=1e-12, atol=1e-14 * np.abs(D).max())
        assert np.allclose(op.rmatvec(v).ravel(), D.T @ v, rtol=1e-12, atol=1e-14 * np.abs(D).max())


def test_perron_matches_dense_eigensolver(k2_small):
    K = k2_small.operator("K")
    spec = transfer.perron(K)
    top = np.max(np.abs(np.linalg.eigvals(K.dense())))
    assert spec.lam == pytest.approx(top, rel=1e-9)
    assert spec.phi_right.min() > 0 and spec.phi_left.min() > 0
    assert transfer.second_eigenvalue(K) < spec.lam


def test_default_grid_spectrum(k2_default):
    model, spec = k2_default
    assert max(spec.residual_right, spec.residual_left) <= 1e-10
    assert spec.min_entry > 0
    assert 0 < spec.gap_ratio < 1 and spec.gap_fit_r2 >= 0.99
    # regression values for the default grid
    assert spec.lam == pytest.approx(0.948789, abs=2e-6)
    assert transfer.symmetry_defect(model, spec) <= 1e-6


def test_k2_c4_linear_and_energy_slope(k2_default):
    model, spec = k2_default
    c4, lin = transfer.c4_estimate(model, spec)
    assert c4 > 0 and lin < 1e-8
    alpha = 0.01
    diffs = []
    for l in range(3, 9):
        est = transfer.energy_transfer(model, -12, l + 12, l, alpha)
        diffs.append((est.value - est.value0) / alpha)
    slope = np.polyfit(np.arange(3, 9), diffs, 1)[0]
    assert slope == pytest.approx(c4, rel=0.1)


def test_grid_guards(k2, k2_alph):
    with pytest.raises(TransferError):
        GridSpec(points_per_dim=4)
    with pytest.raises(TransferError):
        GridSpec(quad_points=2)
    w = graph.Weights.uniform(k2)
    with pytest.raises(TransferError, match="20000"):
        transfer.TransferModel(k2, w, GridSpec(points_per_dim=31), k2_alph)
    with pytest.raises(TransferError, match="eta"):
        transfer.TransferModel(k2, w, GridSpec(radius=1.0), k2_alph, eta=1.0)
    with pytest.raises(TransferError):
        transfer.TransferModel(k2, w, GridSpec(points_per_dim=5), k2_alph).operator("bogus")


def test_energy_range_guard(sv_model):
    with pytest.raises(TransferError):
        transfer.energy_transfer(sv_model, 0, 2, 3, 0.1)


def test_asymmetric_grid_breaks_symmetry(sv):
    skew = transfer.TransferModel(sv, graph.Weights.uniform(sv), GridSpec(x_range=(-6.0, 2.0)))
    assert transfer.symmetry_defect(skew) > 1e-4
    assert transfer.symmetry_defect(transfer.TransferModel(sv, graph.Weights.uniform(sv))) < 1e-12


def test_predicted_decay():
    wide = DeformationParams(eta=100.0, c9=0.15)
    a, c11 = transfer.predicted_decay(2.0, 1.0, wide)
    assert a == pytest.approx(-1.0) and c11 == pytest.approx(1.0)
    tight = DeformationParams(eta=0.01, c9=0.15)
    a, c11 = transfer.predicted_decay(2.0, 1.0, tight)
    assert a == pytest.approx(-0.0015, rel=1e-6) and c11 > 0
    with pytest.raises(TransferError):
        transfer.predicted_decay(0.0, 1.0, wide)


def test_spectral_json(sv_model):
    spec = transfer.perron(sv_model.operator("K"))
    d = json.loads(spec.to_json())
    assert d["lambda"] == spec.lam and len(d["norms"]) == 20
