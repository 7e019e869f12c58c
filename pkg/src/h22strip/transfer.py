"""Discretized transfer operators and their Perron data.

The state space of a level is (vertical gradients omega, tree letter tau).
Vertical gradients live on a tensor Gauss-Legendre grid on [-R, R]; the
horizontal pin-edge variables (x, y) are integrated out: y exactly (the
Hamiltonian is quadratic in y), x by Gauss-Legendre quadrature.

Write D(omega) for the local t-field relative to the pin.  Given a letter
tau, the tree terms of the horizontal edges contribute sigma . (x + D(omega')
- D(omega)) with sigma_v in {-1, 0, 1}.  So every kernel entry factorizes as

    k((omega, tau), (omega', tau')) = A_tau(omega) G_{m(tau)}(omega, omega')
                                      B_tau(omega') C_tau'(omega') [tau |- tau']

with m(tau) = sum(sigma) (shifted by +-1/2 for K+-).  The operators below
never form the dense matrix unless asked to.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, asdict

import numpy as np
import scipy.sparse.linalg

from .graph import BaseGraph, Weights
from .measure import LocalModel, chi_tilde, DeformationParams
from . import tree_codec as tc


class TransferError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridSpec:
    """Discretization settings.

    ``radius`` defaults to max(6/sqrt(beta_min), 2 eta).  ``x_range``
    overrides the interval used for the horizontal gradient (used to build a
    deliberately asymmetric grid).
    """

    points_per_dim: int = 19
    radius: float | None = None
    quad_points: int = 64
    chi_radial: int = 12
    chi_angular: int = 32
    x_range: tuple | None = None

    def __post_init__(self):
        if self.points_per_dim < 3 or self.points_per_dim % 2 == 0:
            raise TransferError("points_per_dim must be odd and at least 3")
        if self.quad_points < 3:
            raise TransferError("grid too coarse: need at least 3 quadrature nodes")

    def resolved_radius(self, weights: Weights, eta):
        if self.radius is not None:
            return float(self.radius)
        bmin = min(list(weights.vertical) + list(weights.horizontal))
        return max(6.0 / math.sqrt(bmin), 2.0 * eta)


def gauss_legendre(n, a, b):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


KINDS = ("K", "K_plus", "K_minus", "Ktilde")


class TransferModel:
    """Precomputed grid data shared by all operators of one discretization."""

    def __init__(self, base: BaseGraph, weights: Weights, grid: GridSpec | None = None,
                 alph=None, eta=1.0, chunk=64):
        self.grid = grid or GridSpec()
        self.base = base
        self.weights = weights
        self.eta = float(eta)
        self.local = LocalModel(base, weights, alph)
        self.alph = self.local.alph
        self.radius = self.grid.resolved_radius(weights, eta)
        if self.radius <= self.eta:
            raise TransferError("truncation radius must exceed eta")
        n_s = self.local.n_s
        self.n_tau = len(self.alph)

        x1, w1 = gauss_legendre(self.grid.points_per_dim, -self.radius, self.radius)
        dims = 2 * n_s
        if dims:
            pts = np.array(list(itertools.product(x1, repeat=dims)))
            wts = np.prod(np.array(list(itertools.product(w1, repeat=dims))), axis=1)
        else:
            pts = np.zeros((1, 0))
            wts = np.ones(1)
        self.omega = pts.reshape(len(wts), n_s, 2)
        self.w = wts
        self.n_omega = len(wts)
        if self.n_omega * self.n_tau > 20000:
            raise TransferError("grid exceeds 20000 rows")
        self.D, self.St = self.local.local_fields(self.omega)

        # per-letter quantities
        hv = np.empty((self.n_tau, self.n_omega))
        sig = np.zeros((self.n_tau, base.n_vertices))
        logb = np.zeros(self.n_tau)
        for a, tau in enumerate(self.alph.letters):
            hv[a] = self.local.h_vertical(self.omega, tau)
            _, _, h_in, h_sig = self.local.tree_data(tau)
            sig[a] = h_sig
            logb[a] = np.sum(np.log(self.local.beta_h[h_in] / (2 * math.pi)))
        self.hv = hv
        self.sigma = sig
        self.m_tau = sig.sum(axis=1)
        self.log_a = -0.5 * hv + sig @ self.D.T + logb[:, None]
        self.log_b = -(sig @ self.D.T)
        self.log_c = -0.5 * hv + np.log(self.w)[None, :]
        self.fol = self.alph.follows.astype(float)
        bb = self.alph.bb
        self.left_mask = self.alph.follows[bb].astype(float)
        self.right_mask = self.alph.follows[:, bb].astype(float)

        if self.grid.x_range is None:
            xa, xb = -self.radius, self.radius
        else:
            xa, xb = self.grid.x_range
        self.x, self.wx = gauss_legendre(self.grid.quad_points, xa, xb)
        self.shifts = {"K": 0.0, "K_plus": 0.5, "K_minus": -0.5, "Ktilde": 0.0}
        ms = sorted(set(np.round(self.m_tau * 2).astype(int).tolist()))
        self._m_values = {kind: [m / 2 + self.shifts[kind] for m in ms] for kind in KINDS}
        self._G = {}
        self._chunk = chunk
        self._build_core()
        self._build_chi()

    # ------------------------------------------------------------ integrals
    def _yx_integrand(self, i0, i1, x, wx):
        """exp(-sum_v beta_v (cosh(x+delta_v)-1)) times the exact y-integral,
        for omega rows i0:i1, all omega', all x: shape (rows, n_omega, nx)."""
        bh = self.local.beta_h
        D1, S1 = self.D[i0:i1, None, None, :], self.St[i0:i1, None, None, :]
        D2, S2 = self.D[None, :, None, :], self.St[None, :, None, :]
        xx = x[None, None, :, None]
        delta = D2 - D1
        cosh_part = np.sum(bh * (np.cosh(xx + delta) - 1.0), axis=-1)
        c = np.exp(0.5 * (D1 + D2))
        d = (S2 * np.exp(-xx) - S1) * np.exp(0.5 * (D1 + xx + D2))
        qa = np.sum(bh * c * c, axis=-1)
        qb = np.sum(bh * c * d, axis=-1)
        qc = np.sum(bh * d * d, axis=-1)
        qa = np.broadcast_to(qa, cosh_part.shape)
        return np.exp(-cosh_part - 0.5 * (qc - qb * qb / qa)) * np.sqrt(2 * math.pi / qa)

    def _build_core(self):
        n = self.n_omega
        xs = self.x
        # weight vectors per (kind, m)
        wvec = {}
        for kind in KINDS:
            for m in self._m_values[kind]:
                base = self.wx * np.exp(-m * xs)
                wvec[(kind, m)] = base * xs if kind == "Ktilde" else base
        keys = list(wvec)
        W = np.stack([wvec[k] for k in keys], axis=1)
        out = {k: np.empty((n, n)) for k in keys}
        for i0 in range(0, n, self._chunk):
            i1 = min(n, i0 + self._chunk)
            g = self._yx_integrand(i0, i1, xs, None)
            res = g @ W
            for j, k in enumerate(keys):
                out[k][i0:i1] = res[..., j]
        self._G.update(out)

    def _build_chi(self):
        """G^chi_m(omega, omega') = chi_S chi_S' * disk integral of
        chi~(|w_hor|^2/eta^2) e^{-H} over (x, y)."""
        eta = self.eta
        n = self.n_omega
        if self.local.n_s:
            r2 = np.sum(self.omega ** 2, axis=-1) / eta ** 2  # (n, |S|)
            chi_s = np.prod(chi_tilde(r2), axis=1)
        else:
            chi_s = np.ones(n)
        self.chi_s = chi_s
        supp = np.flatnonzero(chi_s > 0)
        # polar nodes on the disk of radius eta, split where chi~ starts to fall
        nr, nt = self.grid.chi_radial, self.grid.chi_angular
        r_in, wr_in = gauss_legendre(nr, 0.0, eta / math.sqrt(2))
        r_out, wr_out = gauss_legendre(nr, eta / math.sqrt(2), eta)
        r = np.concatenate([r_in, r_out])
        wr = np.concatenate([wr_in, wr_out]) * r * chi_tilde(r ** 2 / eta ** 2)
        th = 2 * math.pi * (np.arange(nt) + 0.5) / nt
        px = (r[:, None] * np.cos(th)[None, :]).ravel()
        py = (r[:, None] * np.sin(th)[None, :]).ravel()
        pw = np.repeat(wr, nt) * (2 * math.pi / nt)
        self.chi_nodes = (px, py, pw)
        bh = self.local.beta_h
        for m in self._m_values["K"]:
            self._G[("chi", m)] = np.zeros((n, n))
        if len(supp) == 0:
            return
        D1 = self.D[supp][:, None, None, :]
        S1 = self.St[supp][:, None, None, :]
        D2 = self.D[supp][None, :, None, :]
        S2 = self.St[supp][None, :, None, :]
        xx = px[None, None, :, None]
        yy = py[None, None, :, None]
        tb = D2 + xx
        sb = S2 * np.exp(-xx) + yy * np.exp(-0.5 * xx)
        dt = tb - D1
        yv = (sb - S1) * np.exp(0.5 * (D1 + tb))
        h = np.sum(bh * (np.cosh(dt) - 1.0 + 0.5 * yv ** 2), axis=-1)
        eh = np.exp(-h)
        cs = chi_s[supp]
        for m in self._m_values["K"]:
            val = eh @ (pw * np.exp(-m * px))
            blk = val * cs[:, None] * cs[None, :]
            G = self._G[("chi", m)]
            G[np.ix_(supp, supp)] = blk

    # ------------------------------------------------------------- operators
    def operator(self, kind="K", alpha=0.0):
        if kind not in KINDS and kind != "chi":
            raise TransferError(f"unknown kernel kind {kind!r}")
        return KernelOp(self, kind, alpha)

    def core(self, kind, m):
        return self._G[(kind, m)]

    def letter_groups(self, kind):
        """List of (m, letter indices) for the given kernel kind."""
        shift = self.shifts.get(kind, 0.0)
        groups = {}
        for a in range(self.n_tau):
            m = float(self.m_tau[a]) + shift
            groups.setdefault(m, []).append(a)
        return [(m, np.array(idx)) for m, idx in groups.items()]

    def left_boundary(self):
        """Psi_links = e^{-H_links}, carrying the quadrature weights."""
        return self.left_mask[:, None] * np.exp(-0.5 * self.hv) * self.w[None, :]

    def right_boundary(self):
        """Psi_rechts = e^{-H_rechts} as node values."""
        return self.right_mask[:, None] * np.exp(-0.5 * self.hv)

    @property
    def size(self):
        return self.n_tau * self.n_omega


class KernelOp:
    """Nystrom matrix M[(tau,omega),(tau',omega')] = k(...) w(omega').

    Vectors are arrays of shape (n_tau, n_omega) or their flattening.
    """

    def __init__(self, model: TransferModel, kind, alpha=0.0):
        self.model = model
        self.kind = kind
        self.alpha = float(alpha)
        self.shape = (model.size, model.size)
        A = np.exp(model.log_a)
        B = np.exp(model.log_b)
        self.A, self.B = A, B
        self.C = np.exp(model.log_c)
        groups = []
        for m, idx in model.letter_groups("K" if kind == "chi" else kind):
            if kind == "Ktilde":
                G = model.core("Ktilde", m)
                if self.alpha != 0.0:
                    G = G + self.alpha * model.core("chi", m)
            elif kind == "chi":
                G = model.core("chi", m)
            else:
                G = model.core(kind, m)
            groups.append((G, idx))
        self.groups = groups

    def _as2d(self, v):
        return np.asarray(v, dtype=float).reshape(self.model.n_tau, self.model.n_omega)

    def matvec(self, v):
        v = self._as2d(v)
        z = self.model.fol @ (self.C * v)
        out = np.empty_like(z)
        for G, idx in self.groups:
            out[idx] = self.A[idx] * (G @ (self.B[idx] * z[idx]).T).T
        return out

    def rmatvec(self, v):
        v = self._as2d(v)
        u = np.empty_like(v)
        for G, idx in self.groups:
            u[idx] = self.B[idx] * ((self.A[idx] * v[idx]) @ G)
        return self.C * (self.model.fol.T @ u)

    def dense(self):
        m = self.model
        nt, no = m.n_tau, m.n_omega
        out = np.zeros((nt, no, nt, no))
        for G, idx in self.groups:
            for a in idx:
                row = self.A[a][:, None] * G * self.B[a][None, :]
                out[a] = row[:, None, :] * (m.fol[a][:, None] * self.C)[None, :, :]
        return out.reshape(nt * no, nt * no)

    def linear_operator(self):
        return scipy.sparse.linalg.LinearOperator(
            self.shape, matvec=lambda v: self.matvec(v).ravel(),
            rmatvec=lambda v: self.rmatvec(v).ravel(), dtype=float)


def discretize_kernel(kind, grid: GridSpec, alph, weights: Weights, params=None, base=None):
    """Build a KernelOp; ``params`` (DeformationParams) supplies alpha and eta."""
    params = params or DeformationParams()
    base = base or alph.base
    model = TransferModel(base, weights, grid, alph, eta=params.eta)
    return model.operator(kind, params.alpha if kind == "Ktilde" else 0.0)


# ------------------------------------------------------------------ spectra

@dataclass
class SpectralData:
    lam: float
    phi_right: np.ndarray
    phi_left: np.ndarray
    gap_ratio: float
    gap_fit_r2: float
    residual_right: float
    residual_left: float
    iterations: int
    norms: np.ndarray

    @property
    def min_entry(self):
        """Smallest entry of either eigenvector (0 signals underflow)."""
        return float(min(self.phi_right.min(), self.phi_left.min()))

    def to_json(self):
        return json.dumps({"lambda": self.lam, "gap_ratio": self.gap_ratio,
                           "gap_fit_r2": self.gap_fit_r2, "residual_right": self.residual_right,
                           "residual_left": self.residual_left, "iterations": self.iterations,
                           "norms": self.norms.tolist(), "min_entry": self.min_entry,
                           "phi_right": self.phi_right.ravel().tolist(),
                           "phi_left": self.phi_left.ravel().tolist()})


def _power(apply, v0, tol, max_iter):
    v = v0 / v0.sum()
    lam_old = None
    stable = 0
    for it in range(1, max_iter + 1):
        u = apply(v)
        lam = u.sum()
        v = u / lam
        if lam_old is not None and abs(lam - lam_old) <= tol * abs(lam):
            stable += 1
            if stable >= 3:
                return lam, v, it
        else:
            stable = 0
        lam_old = lam
    raise TransferError("power iteration did not converge")


def perron(K: KernelOp, tol=1e-12, max_iter=20000, n_gap=20, seed=0, fit_from=5):
    """Perron value, right/left eigenvectors with <phi_l, phi_r> = 1, and the
    geometric rate of ||(K/lam)^n - P||.

    ``phi_left`` carries the quadrature weights (it is a measure), so the
    pairing is the plain dot product.
    """
    m = K.model
    v0 = np.ones((m.n_tau, m.n_omega))
    lam, phi_r, it1 = _power(K.matvec, v0, tol, max_iter)
    lam_l, phi_l, it2 = _power(K.rmatvec, v0 * m.w[None, :], tol, max_iter)
    # polish with a few extra steps, then measure residuals
    for _ in range(50):
        phi_r = K.matvec(phi_r) / lam
        phi_l = K.rmatvec(phi_l) / lam
        lam_new = K.matvec(phi_r).sum() / phi_r.sum()
        if abs(lam_new - lam) <= 1e-15 * lam:
            break
        lam = lam_new
    res_r = np.max(np.abs(K.matvec(phi_r) - lam * phi_r)) / (lam * np.max(np.abs(phi_r)))
    res_l = np.max(np.abs(K.rmatvec(phi_l) - lam * phi_l)) / (lam * np.max(np.abs(phi_l)))
    for vec in (phi_r, phi_l):
        if np.min(vec) < -1e-12 * np.max(vec):
            raise TransferError("Perron vector has negative entries")
    phi_r = phi_r / np.sum(phi_l * phi_r)
    norms = gap_norms(K, lam, phi_r, phi_l, n_gap, seed)
    ns = np.arange(1, n_gap + 1)
    sel = ns >= fit_from
    if K.shape[0] == 1:
        a, r2 = 0.0, 1.0
    else:
        a, r2 = _loglinear_fit(ns[sel], norms[sel])
    return SpectralData(float(lam), phi_r, phi_l, a, r2, float(res_r), float(res_l),
                        it1 + it2, norms)


def gap_norms(K: KernelOp, lam, phi_r, phi_l, n_max=20, seed=0, n_probe=8):
    """Randomized Hilbert-Schmidt estimate of ||(K/lam)^n - P|| for n = 1..n_max.

    Uses (K/lam)^n - P = (K/lam - P)^n and probes in the symmetric
    L^2(quadrature) coordinates.
    """
    m = K.model
    rng = np.random.default_rng(seed)
    sq = np.sqrt(m.w)[None, :]
    X = rng.standard_normal((n_probe, m.n_tau, m.n_omega))
    base = np.sqrt(np.sum(X ** 2))
    V = X / sq  # map to node values
    out = np.empty(n_max)
    for n in range(n_max):
        newV = np.empty_like(V)
        for j in range(n_probe):
            u = K.matvec(V[j]) / lam
            newV[j] = u - phi_r * np.sum(phi_l * V[j])
        V = newV
        out[n] = np.sqrt(np.sum((V * sq) ** 2)) / base
    return out


def _loglinear_fit(ns, vals):
    y = np.log(vals)
    A = np.vstack([ns, np.ones_like(ns)]).T.astype(float)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    pred = A @ coef
    ss_res = np.sum((y - pred) ** 2)
    ss_tot = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(math.exp(coef[0])), float(r2)


def leading_moduli(K: KernelOp, k=3):
    """Largest moduli of the spectrum (dense for small grids, else ARPACK), sorted."""
    n = K.shape[0]
    if n <= 400:
        ev = np.linalg.eigvals(K.dense())
    else:
        ev = scipy.sparse.linalg.eigs(K.linear_operator(), k=k, which="LM",
                                      return_eigenvectors=False, tol=1e-10, maxiter=20000)
    return np.sort(np.abs(ev))[::-1]


def second_eigenvalue(K: KernelOp):
    """Modulus of the second largest eigenvalue."""
    return float(leading_moduli(K, 3)[1])


# ------------------------------------------------------------- identities

def pairing(psi, M: KernelOp, phi):
    return float(np.sum(psi * M.matvec(phi)))


def symmetry_defect(model: TransferModel, spec: SpectralData | None = None):
    """|<Phi_l, Ktilde_0 Phi_r>| / lambda."""
    K = model.operator("K")
    spec = spec or perron(K)
    Kt = model.operator("Ktilde", 0.0)
    return abs(pairing(spec.phi_left, Kt, spec.phi_right)) / spec.lam


def chi_pairing(model: TransferModel, spec: SpectralData, alpha):
    """<Phi_l, (Ktilde_alpha - Ktilde_0) Phi_r>."""
    a = pairing(spec.phi_left, model.operator("Ktilde", alpha), spec.phi_right)
    b = pairing(spec.phi_left, model.operator("Ktilde", 0.0), spec.phi_right)
    return a - b


def c4_estimate(model: TransferModel, spec: SpectralData | None = None, alphas=(0.01, 0.02)):
    """c4 from <Phi_l,(Ktilde_alpha - Ktilde_0)Phi_r> = 2 alpha lambda c4 at
    two alphas; returns (c4, relative disagreement between the two)."""
    spec = spec or perron(model.operator("K"))
    vals = [chi_pairing(model, spec, a) / (2 * a * spec.lam) for a in alphas]
    c4 = vals[0]
    if not c4 > 0:
        raise TransferError("c4 is not positive; check grid and cutoff")
    return c4, abs(vals[1] - vals[0]) / abs(vals[0])


# ------------------------------------------------------------------ energy

@dataclass
class EnergyEstimate:
    value: float
    value0: float
    c4: float | None
    rest: float | None
    log_z: float

    def to_json(self):
        return json.dumps(asdict(self))


def _propagate_right(M: KernelOp, v, n):
    logs = 0.0
    for _ in range(n):
        v = M.matvec(v)
        s = v.sum()
        logs += math.log(s)
        v = v / s
    return v, logs


def _propagate_left(M: KernelOp, v, n):
    logs = 0.0
    for _ in range(n):
        v = M.rmatvec(v)
        s = v.sum()
        logs += math.log(s)
        v = v / s
    return v, logs


def energy_terms(model: TransferModel, lo, hi, l, alpha):
    """Per-n terms <Psi_l, K^n Ktilde_alpha K^{l-1-n} Psi_r> / <Psi_l, K^l Psi_r>
    for n = 0..l-1, and log of the denominator."""
    if not (lo <= 0 < l <= hi):
        raise TransferError("need lo <= 0 < l <= hi")
    K = model.operator("K")
    Kp = model.operator("K_plus")
    Km = model.operator("K_minus")
    Kt = model.operator("Ktilde", alpha)
    psi, lp = _propagate_left(Km, model.left_boundary(), -lo)
    phi, lr = _propagate_right(Kp, model.right_boundary(), hi - l)
    # left states psi K^n for n = 0..l, right states K^j phi for j = 0..l
    lefts, llog = [psi], [0.0]
    for _ in range(l):
        v = K.rmatvec(lefts[-1])
        s = v.sum()
        lefts.append(v / s)
        llog.append(llog[-1] + math.log(s))
    rights, rlog = [phi], [0.0]
    for _ in range(l):
        v = K.matvec(rights[-1])
        s = v.sum()
        rights.append(v / s)
        rlog.append(rlog[-1] + math.log(s))
    denom = float(np.sum(lefts[l] * rights[0]))
    if denom <= 1e-300:
        raise TransferError("denominator underflow")
    log_den = math.log(denom) + llog[l]
    terms = []
    for n in range(l):
        num = pairing(lefts[n], Kt, rights[l - 1 - n])
        terms.append(num * math.exp(llog[n] + rlog[l - 1 - n] - log_den))
    return np.array(terms), log_den + lp + lr


def energy_transfer(model: TransferModel, lo, hi, l, alpha, c4=None):
    """E(alpha) = 1/2 sum_n <...Ktilde_alpha...> / <...>, with E(0) and the
    split E(alpha) = alpha l c4 + c3."""
    terms, log_z = energy_terms(model, lo, hi, l, alpha)
    terms0, _ = energy_terms(model, lo, hi, l, 0.0)
    val = 0.5 * float(terms.sum())
    val0 = 0.5 * float(terms0.sum())
    rest = None if c4 is None else val - alpha * l * c4
    return EnergyEstimate(val, val0, c4, rest, log_z)


def log_partition(model: TransferModel, lo, hi, l):
    """log Z^{0l}: the transfer-operator value of E[e^{(t_l - t_0)/2}]."""
    if not (lo <= 0 <= l <= hi):
        raise TransferError("need lo <= 0 <= l <= hi")
    K = model.operator("K")
    psi, lp = _propagate_left(model.operator("K_minus"), model.left_boundary(), -lo)
    psi, lk = _propagate_left(K, psi, l)
    phi, lr = _propagate_right(model.operator("K_plus"), model.right_boundary(), hi - l)
    return math.log(float(np.sum(psi * phi))) + lp + lk + lr


def predicted_decay(c4, c5, params: DeformationParams):
    """alpha* minimizing alpha (c5 alpha + c4) over the admissible range, and
    c11 = -alpha* (c5 alpha* + c4)."""
    if c4 <= 0 or c5 <= 0:
        raise TransferError("need c4 > 0 and c5 > 0")
    a_star = -min(c4 / (2 * c5), params.c9 * params.eta * (1 - 1e-9))
    return a_star, -a_star * (c5 * a_star + c4)
