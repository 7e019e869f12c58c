"""The pinned measure, its gradient coordinates and the related Hamiltonians.

Fields ``t`` and ``s`` are arrays indexed by strip vertex.  Most functions
accept a batch of fields with a leading batch axis as well.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg

from .graph import BaseGraph, StripGraph, Weights
from . import tree_codec as tc

LOG2PI = math.log(2.0 * math.pi)
INF = math.inf


class MeasureError(ValueError):
    pass


# ----------------------------------------------------------- weight matrix

def weight_matrix(strip: StripGraph, t):
    """A_L(t): off-diagonal -beta e^{t_i+t_j} on edges, zero row sums."""
    t = np.asarray(t, dtype=float)
    n = strip.n_vertices
    w = strip.beta * np.exp(t[strip.tail] + t[strip.head])
    a = np.zeros((n, n))
    np.add.at(a, (strip.tail, strip.head), -w)
    np.add.at(a, (strip.head, strip.tail), -w)
    a[np.diag_indices(n)] = -a.sum(axis=1)
    return a


def pinned_matrix(strip: StripGraph, t):
    """A_L(t) + eps_hat, where eps_hat = eps e^{t_0} at the pin vertex."""
    a = weight_matrix(strip, t)
    a[strip.pin_vertex, strip.pin_vertex] += strip.weights.epsilon * math.exp(t[strip.pin_vertex])
    return a


def log_det_pinned(strip: StripGraph, t):
    """log det[A_L(t) + eps_hat] from a partially pivoted LU factorization."""
    m = pinned_matrix(strip, t)
    lu, piv = scipy.linalg.lu_factor(m, check_finite=True)
    d = np.diag(lu)
    sign = np.prod(np.sign(d)) * (-1) ** int(np.sum(piv != np.arange(len(piv))))
    if sign <= 0 or np.any(d == 0):
        raise MeasureError("det[A_L(t) + eps_hat] is not positive")
    return float(np.sum(np.log(np.abs(d))))


def free_energy_f(strip: StripGraph, t):
    t = np.asarray(t, dtype=float)
    return float(np.sum(strip.beta * (np.cosh(t[strip.tail] - t[strip.head]) - 1.0)))


def pin_energy(strip: StripGraph, t0, s0):
    """M(t0, s0) = eps [cosh t0 - 1 + s0^2 e^{t0} / 2]."""
    eps = strip.weights.epsilon
    return eps * (np.cosh(t0) - 1.0 + 0.5 * s0 ** 2 * np.exp(t0))


def log_density(strip: StripGraph, t, s):
    """Log of the pinned density with respect to prod dt_j ds_j."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    a = weight_matrix(strip, t)
    quad = 0.5 * float(s @ a @ s)
    p = strip.pin_vertex
    return (-float(t.sum()) - strip.n_vertices * LOG2PI - free_energy_f(strip, t) - quad
            + log_det_pinned(strip, t) - float(pin_energy(strip, t[p], s[p])))


def log_tree_weight(strip: StripGraph, t, tree):
    """log of eps e^{t0} prod_{e in T} beta_e e^{t_i + t_j}."""
    t = np.asarray(t, dtype=float)
    idx = np.array([strip.edge_index[k] for k in tree], dtype=np.int64)
    val = math.log(strip.weights.epsilon) + t[strip.pin_vertex]
    if len(idx):
        val += float(np.sum(np.log(strip.beta[idx]) + t[strip.tail[idx]] + t[strip.head[idx]]))
    return val


def log_density_tree(strip: StripGraph, t, s, tree):
    """Per-tree term of the density after the matrix-tree expansion."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    p = strip.pin_vertex
    quad = 0.5 * float(s @ weight_matrix(strip, t) @ s)
    return (-float(t.sum()) - strip.n_vertices * LOG2PI - free_energy_f(strip, t) - quad
            + log_tree_weight(strip, t, tree) - float(pin_energy(strip, t[p], s[p])))


def matrix_tree_check(strip: StripGraph, t, max_vertices=12):
    """(det[A+eps_hat], eps e^{t0} sum_T prod beta e^{t_i+t_j}) for small strips."""
    if strip.n_vertices > max_vertices:
        raise MeasureError(f"matrix-tree guard: {strip.n_vertices} > {max_vertices} vertices")
    trees = tc.enumerate_spanning_trees(strip, max_vertices=max_vertices)
    logs = np.array([log_tree_weight(strip, t, tr) for tr in trees])
    top = logs.max()
    tree_sum = math.exp(top) * float(np.sum(np.exp(logs - top)))
    det = math.exp(log_det_pinned(strip, t))
    return det, tree_sum


# ------------------------------------------------------ gradient coordinates

class BackboneFrame:
    """Backbone-tree edges oriented away from r=(lo,p), in BFS order from r."""

    def __init__(self, strip: StripGraph):
        self.strip = strip
        tree = strip.backbone_tree()
        parent, pedge, depth = strip.tree_parents(tree)
        order = np.argsort(depth, kind="stable")
        keys, tails, heads = [], [], []
        for b in order:
            if pedge[b] is not None:
                keys.append(pedge[b])
                tails.append(int(parent[b]))
                heads.append(int(b))
        self.keys = tuple(keys)
        self.index = {k: i for i, k in enumerate(keys)}
        self.tail = np.array(tails, dtype=np.int64)
        self.head = np.array(heads, dtype=np.int64)
        self.parent = parent
        self.depth = depth
        self.tree = tree
        # signed incidence: path r -> i uses edge k
        n = strip.n_vertices
        anc = np.zeros((n, len(keys)))
        pos = {int(h): i for i, h in enumerate(heads)}
        for v in range(n):
            a = v
            while a != strip.root:
                anc[v, pos[a]] = 1.0
                a = int(parent[a])
        self.on_root_path = anc  # [vertex, edge] = 1{edge in gamma^{r v}}
        self.pin_edges = {n: self.index[(2 * n + 1, strip.base.pin)]
                          for n in range(strip.lo, strip.hi)}
        self.beta = strip.beta[[strip.edge_index[k] for k in keys]]


@lru_cache(maxsize=64)
def frame(strip: StripGraph) -> BackboneFrame:
    return BackboneFrame(strip)


@dataclass
class GradientConfig:
    """(t0, s0, grad_t, grad_y) with gradients ordered like ``frame(strip).keys``."""

    t0: float
    s0: float
    grad_t: np.ndarray
    grad_y: np.ndarray

    def __post_init__(self):
        self.grad_t = np.asarray(self.grad_t, dtype=float)
        self.grad_y = np.asarray(self.grad_y, dtype=float)
        if self.grad_t.shape != self.grad_y.shape:
            raise MeasureError("grad_t and grad_y must have equal shapes")
        if not (np.all(np.isfinite(self.grad_t)) and np.all(np.isfinite(self.grad_y))
                and np.isfinite(self.t0) and np.isfinite(self.s0)):
            raise MeasureError("non-finite gradient coordinates")

    def copy(self):
        return GradientConfig(self.t0, self.s0, self.grad_t.copy(), self.grad_y.copy())

    def to_json(self):
        return json.dumps({"t0": self.t0, "s0": self.s0, "grad_t": self.grad_t.tolist(),
                           "grad_y": self.grad_y.tolist()})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(d["t0"], d["s0"], d["grad_t"], d["grad_y"])


def field_to_json(t, s):
    return json.dumps({"t": np.asarray(t).tolist(), "s": np.asarray(s).tolist()})


def field_from_json(text):
    d = json.loads(text)
    return np.array(d["t"], dtype=float), np.array(d["s"], dtype=float)


def to_gradient(strip: StripGraph, t, s) -> GradientConfig:
    fr = frame(strip)
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    ti, tj = t[fr.tail], t[fr.head]
    p = strip.pin_vertex
    return GradientConfig(float(t[p]), float(s[p]), tj - ti,
                          (s[fr.head] - s[fr.tail]) * np.exp(0.5 * (ti + tj)))


def from_gradient(strip: StripGraph, g: GradientConfig):
    """Rebuild (t, s) from gradient coordinates along the backbone tree."""
    fr = frame(strip)
    n = strip.n_vertices
    u = np.zeros(n)
    for k in range(len(fr.keys)):  # BFS order: tails are finished first
        u[fr.head[k]] = u[fr.tail[k]] + g.grad_t[k]
    t = g.t0 + u - u[strip.pin_vertex]
    w = np.zeros(n)
    for k in range(len(fr.keys)):
        i, j = fr.tail[k], fr.head[k]
        w[j] = w[i] + g.grad_y[k] * math.exp(-0.5 * (t[i] + t[j]))
    s = g.s0 + w - w[strip.pin_vertex]
    return t, s


def t_difference(strip: StripGraph, g: GradientConfig, i, j):
    """t_j - t_i as the signed sum of backbone gradients along gamma^{ij}."""
    fr = frame(strip)
    coef = fr.on_root_path[j] - fr.on_root_path[i]
    return float(coef @ g.grad_t)


def y_edge(strip: StripGraph, g: GradientConfig, key):
    """y of strip edge ``key`` in bookkeeping orientation, from the path sum
    over the backbone tree with exponent weights 1 - 2*1{e'' in gamma^{r i_e'}}."""
    fr = frame(strip)
    i, j = strip.edge_endpoints(key)
    path = strip.tree_path(fr.tree, i, j)
    ks = [fr.index[oe.key] for oe in path]
    coef = fr.on_root_path[j] - fr.on_root_path[i]
    total = 0.0
    for k in ks:
        ie = fr.tail[k]
        expo = 0.0
        for k2 in ks:
            if k2 != k:
                expo += g.grad_t[k2] * (1.0 - 2.0 * fr.on_root_path[ie, k2])
        total += g.grad_y[k] * coef[k] * math.exp(0.5 * expo)
    return total


def edge_gradients(strip: StripGraph, t, s):
    """(grad t, y) for every strip edge in bookkeeping orientation."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    ti, tj = t[..., strip.tail], t[..., strip.head]
    return tj - ti, (s[..., strip.head] - s[..., strip.tail]) * np.exp(0.5 * (ti + tj))


# ------------------------------------------------------------ Hamiltonians

def pin_hamiltonian(strip: StripGraph, t0, s0):
    eps = strip.weights.epsilon
    return float(pin_energy(strip, t0, s0)) - math.log(eps / (2 * math.pi))


def log_jacobian(strip: StripGraph, t):
    """log J = -sum_{e in T^bb} (t_i + t_j) / 2."""
    fr = frame(strip)
    t = np.asarray(t, dtype=float)
    return float(-0.5 * np.sum(t[fr.tail] + t[fr.head]))


def _tree_signs(strip: StripGraph, tree):
    """Per strip edge: +1/-1 if in T (orientation away from r vs bookkeeping), 0 if not."""
    sign = np.zeros(strip.n_edges)
    for key, sg in strip.tree_orientation(tree).items():
        sign[strip.edge_index[key]] = sg
    return sign


def grad_hamiltonian(strip: StripGraph, g: GradientConfig, tree):
    """H^{grad,0}_L(omega, T)."""
    t, s = from_gradient(strip, g)
    dt, y = edge_gradients(strip, t, s)
    sign = _tree_signs(strip, tree)
    in_t = sign != 0
    val = float(np.sum(strip.beta * (np.cosh(dt) - 1.0 + 0.5 * y ** 2)))
    val += float(np.sum(sign * dt))
    val -= 0.5 * float(np.sum(g.grad_t))
    val += t[strip.root] - t[strip.pin_vertex]
    val -= float(np.sum(np.log(strip.beta[in_t] / (2 * math.pi))))
    return val


def tree_rewriting_defect(strip: StripGraph, t, tree):
    """sum_T (t_i+t_j) - 2 sum_j t_j + 2 t_r + sum_T grad t^T (vanishes)."""
    t = np.asarray(t, dtype=float)
    sign = _tree_signs(strip, tree)
    in_t = sign != 0
    dt = t[strip.head] - t[strip.tail]
    return float(np.sum((t[strip.tail] + t[strip.head])[in_t]) - 2 * t.sum()
                 + 2 * t[strip.root] + np.sum(sign * dt))


def interpolated_hamiltonian(strip: StripGraph, g: GradientConfig, tree, l):
    """H^{0 l}_L written edge by edge."""
    if not strip.lo <= l <= strip.hi:
        raise MeasureError(f"level l={l} outside [{strip.lo}, {strip.hi}]")
    fr = frame(strip)
    t, s = from_gradient(strip, g)
    dt, y = edge_gradients(strip, t, s)
    sign = _tree_signs(strip, tree)
    bb_path = {oe.key for oe in strip.backbone(tree)}
    val = 0.0
    for k, key in enumerate(strip.edge_keys):
        h = strip.beta[k] * (math.cosh(dt[k]) - 1.0 + 0.5 * y[k] ** 2)
        if sign[k] != 0:
            if key not in bb_path:
                h += sign[k] * dt[k]
            h -= math.log(strip.beta[k] / (2 * math.pi))
        if key in fr.index and key[0] % 2 == 0:  # copies of S are B^c(T^bb)
            h -= 0.5 * g.grad_t[fr.index[key]]
        val += h
    for n in range(strip.lo, 0):
        val -= 0.5 * g.grad_t[fr.pin_edges[n]]
    for n in range(l, strip.hi):
        val += 0.5 * g.grad_t[fr.pin_edges[n]]
    return val


# -------------------------------------------------------- local Hamiltonians

class LocalModel:
    """Local blocks of the interpolated Hamiltonian for a base graph.

    A vertical block ``omega`` is an array of shape (|S|, 2) holding
    (grad t^bb, y^bb) for the copies of the base-tree edges in the order of
    ``base.base_tree``, each oriented away from the pin.  A horizontal block is
    (grad t, y) of the pin edge.  Trees enter through local tree variables.
    """

    def __init__(self, base: BaseGraph, weights: Weights, alph=None):
        self.base = base
        self.weights = weights
        self.alph = tc.alphabet(base) if alph is None else alph
        self.n0 = base.n_vertices
        self.n_s = len(base.base_tree)
        self.beta_v = np.array(weights.vertical)
        self.beta_h = np.array(weights.horizontal)
        # base tree oriented away from the pin, in BFS order
        adj = [[] for _ in range(self.n0)]
        for pos, i in enumerate(base.base_tree):
            u, v = base.edges[i]
            adj[u].append((v, pos))
            adj[v].append((u, pos))
        order, tails, heads = [], [], []
        seen = {base.pin}
        queue = [base.pin]
        while queue:
            a = queue.pop(0)
            for b, pos in adj[a]:
                if b not in seen:
                    seen.add(b)
                    order.append(pos)
                    tails.append(a)
                    heads.append(b)
                    queue.append(b)
        self.s_order = np.array(order, dtype=np.int64)
        self.s_tail = np.array(tails, dtype=np.int64)
        self.s_head = np.array(heads, dtype=np.int64)
        self.e_u = np.array([e[0] for e in base.edges], dtype=np.int64)
        self.e_v = np.array([e[1] for e in base.edges], dtype=np.int64)
        self.s_edge = np.zeros(len(base.edges), dtype=bool)
        self.s_edge[list(base.base_tree)] = True
        # S-edge index (position in base_tree) of each base edge, -1 otherwise
        self.s_pos = np.full(len(base.edges), -1, dtype=np.int64)
        for pos, i in enumerate(base.base_tree):
            self.s_pos[i] = pos
        # sign of the base-tree orientation relative to bookkeeping (u < v)
        self.s_sign = np.ones(self.n_s)
        for k in range(self.n_s):
            pos = self.s_order[k]
            u, v = base.edges[base.base_tree[pos]]
            self.s_sign[pos] = 1.0 if (self.s_tail[k], self.s_head[k]) == (u, v) else -1.0
        self._tree_cache = {}

    # local fields --------------------------------------------------------
    def local_fields(self, omega):
        """(t, s) on one level with t = s = 0 at the pin; omega[..., |S|, 2]."""
        omega = np.asarray(omega, dtype=float)
        shp = omega.shape[:-2]
        t = np.zeros(shp + (self.n0,))
        s = np.zeros(shp + (self.n0,))
        for k in range(self.n_s):
            pos, a, b = self.s_order[k], self.s_tail[k], self.s_head[k]
            t[..., b] = t[..., a] + omega[..., pos, 0]
            s[..., b] = s[..., a] + omega[..., pos, 1] * np.exp(-0.5 * (t[..., a] + t[..., b]))
        return t, s

    # tree information ------------------------------------------------------
    def tree_data(self, tau):
        """Per-letter data: vertical signs/backbone/membership and horizontal
        (+1/2) signs/membership, as numpy arrays."""
        got = self._tree_cache.get(tau)
        if got is not None:
            return got
        info = tc.recover_all(tau, self.base)
        ne = len(self.base.edges)
        v_in = np.zeros(ne, dtype=bool)
        v_sig = np.zeros(ne)  # orientation term coefficient (B^c only)
        for i in range(ne):
            if (0, i) in info:
                v_in[i] = True
                sg, onb = info[(0, i)]
                if not onb:
                    v_sig[i] = sg
        h_in = np.zeros(self.n0, dtype=bool)
        h_sig = np.zeros(self.n0)
        for v in range(self.n0):
            if (1, v) in info:
                h_in[v] = True
                sg, onb = info[(1, v)]
                if not onb:
                    h_sig[v] = sg
        got = (v_in, v_sig, h_in, h_sig)
        self._tree_cache[tau] = got
        return got

    # Hamiltonian pieces ----------------------------------------------------
    def h_vertical(self, omega, tau):
        """H_vertical(omega, tau) = sum over base edges of h_e^vertical."""
        v_in, v_sig, _, _ = self.tree_data(tau)
        t, s = self.local_fields(omega)
        dt = t[..., self.e_v] - t[..., self.e_u]
        y = (s[..., self.e_v] - s[..., self.e_u]) * np.exp(0.5 * (t[..., self.e_u] + t[..., self.e_v]))
        val = np.sum(self.beta_v * (np.cosh(dt) - 1.0 + 0.5 * y ** 2) + v_sig * dt, axis=-1)
        val = val - 0.5 * np.sum(np.asarray(omega)[..., :, 0], axis=-1)
        val = val - np.sum(np.log(self.beta_v[v_in] / (2 * math.pi)))
        return val

    def horizontal_gradients(self, omega, omega_hor, omega2):
        """(grad t_v, y_v) of all horizontal edges v_{1/2} between two levels."""
        t1, s1 = self.local_fields(omega)
        t2, s2 = self.local_fields(omega2)
        x = np.asarray(omega_hor)[..., 0]
        yh = np.asarray(omega_hor)[..., 1]
        x_ = x[..., None]
        ta = t1
        tb = t2 + x_
        sb = s2 * np.exp(-x_) + (yh * np.exp(-0.5 * x))[..., None]
        return tb - ta, (sb - s1) * np.exp(0.5 * (ta + tb))

    def h_hor(self, omega, omega_hor, omega2, tau, tau2):
        if not self.alph.follow(tau, tau2):
            return INF
        _, _, h_in, h_sig = self.tree_data(tau)
        dt, y = self.horizontal_gradients(omega, omega_hor, omega2)
        val = np.sum(self.beta_h * (np.cosh(dt) - 1.0 + 0.5 * y ** 2) + h_sig * dt, axis=-1)
        return val - np.sum(np.log(self.beta_h[h_in] / (2 * math.pi)))

    def h_mitte(self, blk, omega_hor, blk2):
        (om, tau), (om2, tau2) = blk, blk2
        hh = self.h_hor(om, omega_hor, om2, tau, tau2)
        if hh == INF:
            return INF
        return 0.5 * self.h_vertical(om, tau) + hh + 0.5 * self.h_vertical(om2, tau2)

    def h_mitte_pm(self, blk, omega_hor, blk2, sign):
        val = self.h_mitte(blk, omega_hor, blk2)
        return val + 0.5 * sign * float(np.asarray(omega_hor)[0]) if val != INF else INF

    def h_left(self, blk):
        om, tau = blk
        bb = self.alph.letters[self.alph.bb]
        return 0.5 * self.h_vertical(om, tau) if self.alph.follow(bb, tau) else INF

    def h_right(self, blk):
        om, tau = blk
        bb = self.alph.letters[self.alph.bb]
        return 0.5 * self.h_vertical(om, tau) if self.alph.follow(tau, bb) else INF

    def local_hamiltonians(self, blk, omega_hor, blk2):
        """All local pieces for one block (omega, tau), omega_hor, (omega', tau')."""
        return {
            "H_vertical": float(self.h_vertical(*blk)),
            "H_hor": float(self.h_hor(blk[0], omega_hor, blk2[0], blk[1], blk2[1])),
            "H_mitte": float(self.h_mitte(blk, omega_hor, blk2)),
            "H_mitte_plus": float(self.h_mitte_pm(blk, omega_hor, blk2, +1)),
            "H_mitte_minus": float(self.h_mitte_pm(blk, omega_hor, blk2, -1)),
            "H_left": float(self.h_left(blk)),
            "H_right": float(self.h_right(blk)),
        }

    # splitting a global configuration -------------------------------------
    def blocks(self, strip: StripGraph, g: GradientConfig, tree):
        """Per-level vertical blocks (omega_n, tau_n) and horizontal blocks."""
        fr = frame(strip)
        word = tc.local_vars(strip, tree)
        verts, hors = [], []
        for n, tau in zip(range(strip.lo, strip.hi + 1), word):
            om = np.zeros((self.n_s, 2))
            for pos, i in enumerate(self.base.base_tree):
                k = fr.index[(2 * n, i)]
                om[pos] = (g.grad_t[k], g.grad_y[k])
            verts.append((om, tau))
            if n < strip.hi:
                k = fr.pin_edges[n]
                hors.append(np.array([g.grad_t[k], g.grad_y[k]]))
        return verts, hors

    def block_sum(self, strip: StripGraph, g: GradientConfig, tree, l):
        """Interpolated Hamiltonian assembled from the local pieces."""
        verts, hors = self.blocks(strip, g, tree)
        val = self.h_left(verts[0])
        for k, n in enumerate(range(strip.lo, strip.hi)):
            sign = -1 if n < 0 else (0 if n < l else 1)
            val = val + self.h_mitte_pm(verts[k], hors[k], verts[k + 1], sign)
        return val + self.h_right(verts[-1])


def local_hamiltonians(model: LocalModel, blk, omega_hor, blk2):
    return model.local_hamiltonians(blk, omega_hor, blk2)


# ---------------------------------------------------------------- deformation

def chi_tilde(x):
    """C^1 cutoff: 1 for x <= 1/2, 0 for x >= 1, cubic in between (sup|chi'| = 3)."""
    x = np.asarray(x, dtype=float)
    z = np.clip(2.0 * x - 1.0, 0.0, 1.0)
    return 1.0 - z * z * (3.0 - 2.0 * z)


def chi_tilde_prime(x):
    x = np.asarray(x, dtype=float)
    z = np.clip(2.0 * x - 1.0, 0.0, 1.0)
    return -12.0 * z * (1.0 - z)


CHI_PRIME_SUP = 3.0


@dataclass(frozen=True)
class DeformationParams:
    alpha: float = 0.0
    eta: float = 1.0
    c9: float = 0.15

    def __post_init__(self):
        if self.eta <= 0:
            raise MeasureError("eta must be positive")
        if not 0 < self.c9 < 1.0 / (2 * CHI_PRIME_SUP):
            raise MeasureError(f"c9 must lie in (0, {1 / (2 * CHI_PRIME_SUP)})")

    @property
    def alpha_max(self):
        return self.c9 * self.eta

    def check(self):
        if abs(self.alpha) > self.alpha_max * (1 + 1e-12):
            raise MeasureError(f"|alpha|={abs(self.alpha)} exceeds c9*eta={self.alpha_max}")


def _chi_parts(strip: StripGraph, gt, gy, l, eta):
    """For n = 0..l-1: (index of p_{n+1/2}, product of S-cutoffs, y_p)."""
    fr = frame(strip)
    out = []
    for n in range(l):
        k = fr.pin_edges[n]
        prod = 1.0
        for m in (n, n + 1):
            for i in strip.base.base_tree:
                j = fr.index[(2 * m, i)]
                prod *= float(chi_tilde((gt[j] ** 2 + gy[j] ** 2) / eta ** 2))
        out.append((k, prod, gy[k]))
    return out


def chi_values(strip: StripGraph, g: GradientConfig, l, eta):
    """chi_{n+1/2} for n = 0..l-1."""
    return np.array([prod * float(chi_tilde((g.grad_t[k] ** 2 + yp ** 2) / eta ** 2))
                     for k, prod, yp in _chi_parts(strip, g.grad_t, g.grad_y, l, eta)])


def deform(strip: StripGraph, g: GradientConfig, params: DeformationParams, l):
    params.check()
    if not 0 <= l <= strip.hi:
        raise MeasureError("deformation level out of range")
    out = g.copy()
    for k, prod, yp in _chi_parts(strip, g.grad_t, g.grad_y, l, params.eta):
        u = g.grad_t[k]
        out.grad_t[k] = u + params.alpha * prod * float(chi_tilde((u ** 2 + yp ** 2) / params.eta ** 2))
    return out


def deform_inverse(strip: StripGraph, g: GradientConfig, params: DeformationParams, l,
                   tol=1e-14, max_iter=500):
    """Invert ``deform`` coordinatewise by fixed-point iteration."""
    params.check()
    out = g.copy()
    eta = params.eta
    for k, prod, yp in _chi_parts(strip, g.grad_t, g.grad_y, l, eta):
        v = g.grad_t[k]
        u = v
        for _ in range(max_iter):
            u_new = v - params.alpha * prod * float(chi_tilde((u ** 2 + yp ** 2) / eta ** 2))
            if abs(u_new - u) <= tol:
                u = u_new
                break
            u = u_new
        out.grad_t[k] = u
    return out


def deform_log_jacobian(strip: StripGraph, g: GradientConfig, params: DeformationParams, l):
    """sum_n log(1 + alpha * d chi_{n+1/2} / d grad t_{p_{n+1/2}})."""
    params.check()
    eta = params.eta
    total = 0.0
    for k, prod, yp in _chi_parts(strip, g.grad_t, g.grad_y, l, eta):
        u = g.grad_t[k]
        d = prod * float(chi_tilde_prime((u ** 2 + yp ** 2) / eta ** 2)) * 2.0 * u / eta ** 2
        fac = 1.0 + params.alpha * d
        if fac <= 0:
            raise MeasureError("non-positive Jacobian factor")
        total += math.log(fac)
    return total


def entropy_constants(params: DeformationParams, weights: Weights, base: BaseGraph):
    """(c12, c13, c5) from the second-derivative bounds of the entropy term."""
    s = len(base.base_tree)
    eta, c9 = params.eta, params.c9
    c12 = base.n_vertices * max(weights.horizontal) * (
        math.cosh(eta * (2 * s + 1 + c9)) + 3 * s ** 2 * eta ** 2 * math.exp(eta * (2 * s + c9)))
    c13 = 4 * CHI_PRIME_SUP ** 2 / (eta ** 2 * (1 - 2 * c9 * CHI_PRIME_SUP) ** 2)
    return c12, c13, 0.5 * (c12 + c13)


def entropy_constant(params: DeformationParams, weights: Weights, base: BaseGraph):
    return entropy_constants(params, weights, base)[2]
