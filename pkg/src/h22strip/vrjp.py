"""Vertex-reinforced jump process on the strip with the extra vertex rho.

Between jumps only the local time of the occupied vertex grows, so each
neighbour rate beta_ij (1 + L_j) is constant until the next jump: the
holding time is exactly exponential with the summed rate and the target is
categorical.  No time discretization is involved.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from . import kernels
from .graph import StripGraph
from .sampler import SamplerConfig, batch_means, run_chain, _seed32


class VRJPError(ValueError):
    pass


class PinnedGraph:
    """A strip plus rho joined to the pin vertex 0 with weight eps (t_rho = 0)."""

    def __init__(self, strip: StripGraph):
        self.strip = strip
        self.rho = strip.n_vertices
        self.n_vertices = strip.n_vertices + 1
        self.tail = np.concatenate([strip.tail, [self.rho]]).astype(np.int64)
        self.head = np.concatenate([strip.head, [strip.pin_vertex]]).astype(np.int64)
        self.beta = np.concatenate([strip.beta, [strip.weights.epsilon]])
        self.n_edges = len(self.beta)
        self.level = np.concatenate([strip.vertex_level, [0]]).astype(np.int64)
        deg = np.bincount(np.concatenate([self.tail, self.head]), minlength=self.n_vertices)
        ptr = np.concatenate([[0], np.cumsum(deg)]).astype(np.int64)
        idx = np.empty(ptr[-1], dtype=np.int64)
        eid = np.empty(ptr[-1], dtype=np.int64)
        fill = ptr[:-1].copy()
        for k in range(self.n_edges):
            for a, b in ((self.tail[k], self.head[k]), (self.head[k], self.tail[k])):
                idx[fill[a]] = b
                eid[fill[a]] = k
                fill[a] += 1
        self.nbr_ptr, self.nbr_idx, self.nbr_edge = ptr, idx, eid
        self.nbr_beta = self.beta[eid]
        self.edge_of = {}
        for k in range(self.n_edges):
            self.edge_of[(int(self.tail[k]), int(self.head[k]))] = k
            self.edge_of[(int(self.head[k]), int(self.tail[k]))] = k

    def neighbors(self, v):
        return self.nbr_idx[self.nbr_ptr[v]:self.nbr_ptr[v + 1]]

    def label(self, v):
        if v == self.rho:
            return "rho"
        n, b = self.strip.vertex(v)
        return f"({n},{b})"

    def path_label(self, path):
        return "-".join(self.label(v) for v in path)


# --------------------------------------------------------------- process

@dataclass
class Trajectory:
    times: np.ndarray       # jump times
    vertices: np.ndarray    # vertex before the first jump, then after each jump
    local_times: np.ndarray
    horizon: float

    @property
    def n_jumps(self):
        return len(self.times)


def simulate_vrjp(pg: PinnedGraph, horizon, seed, max_jumps=10 ** 6) -> Trajectory:
    """Exact event-driven simulation from rho up to clock ``horizon``."""
    if not horizon > 0:
        raise VRJPError("horizon must be positive")
    times, verts, loc = kernels.vrjp_trajectory(pg.nbr_ptr, pg.nbr_idx, pg.nbr_beta, pg.rho,
                                                pg.n_vertices, float(horizon), int(max_jumps),
                                                _seed32(seed))
    return Trajectory(times, verts, loc, float(horizon))


def skeleton(traj: Trajectory):
    """The discrete chain of visited vertices (length = jumps + 1)."""
    if len(traj.vertices) == 0:
        raise VRJPError("empty trajectory")
    return np.asarray(traj.vertices).copy()


# ------------------------------------------------------------ environment

def env_weights(pg: PinnedGraph, t):
    """W_ij = beta_ij e^{t_i + t_j} per edge, W_{rho 0} = eps e^{t_0}.  Batches allowed."""
    t = np.asarray(t, dtype=float)
    tt = np.concatenate([t, np.zeros(t.shape[:-1] + (1,))], axis=-1)  # t_rho = 0
    return pg.beta * np.exp(tt[..., pg.tail] + tt[..., pg.head])


def stationary(pg: PinnedGraph, W):
    """pi_i = sum_{j ~ i} W_ij (batches allowed)."""
    W = np.asarray(W, dtype=float)
    out = np.zeros(W.shape[:-1] + (pg.n_vertices,))
    np.add.at(out.T, pg.tail, W.T)
    np.add.at(out.T, pg.head, W.T)
    return out


def rwre_path_prob(pg: PinnedGraph, W, path):
    """Probability of ``path`` for the chain jumping with probability proportional to W.

    Works on a batch of environments (last axis = edges).  A non-adjacent step
    gives probability 0.
    """
    path = [int(v) for v in path]
    if not path or path[0] != pg.rho:
        raise VRJPError("path must start at rho")
    W = np.asarray(W, dtype=float)
    pi = stationary(pg, W)
    prob = np.ones(W.shape[:-1])
    for a, b in zip(path[:-1], path[1:]):
        k = pg.edge_of.get((a, b))
        if k is None:
            return np.zeros(W.shape[:-1]) if W.ndim > 1 else 0.0
        prob = prob * W[..., k] / pi[..., a]
    return prob if W.ndim > 1 else float(prob)


def reversibility_defect(pg: PinnedGraph, W):
    """max over edges of |pi_i P(i->j) - pi_j P(j->i)| / W_ij."""
    W = np.atleast_2d(np.asarray(W, dtype=float))
    pi = stationary(pg, W)
    i, j = pg.tail, pg.head
    fwd = pi[:, i] * (W / pi[:, i])
    bwd = pi[:, j] * (W / pi[:, j])
    return float(np.max(np.abs(fwd - bwd) / W))


def enumerate_paths(pg: PinnedGraph, t_max):
    """All nearest-neighbour paths from rho with 1..t_max steps."""
    out = []
    frontier = [(pg.rho,)]
    for _ in range(t_max):
        frontier = [p + (int(v),) for p in frontier for v in pg.neighbors(p[-1])]
        out.extend(frontier)
    return out


# ----------------------------------------------------------- mixing check

@dataclass
class PathLaw:
    probs: dict
    stderr: dict

    def totals(self):
        by_len = {}
        for p, v in self.probs.items():
            by_len.setdefault(len(p) - 1, []).append(v)
        return {n: float(sum(v)) for n, v in sorted(by_len.items())}


def vrjp_path_law(pg: PinnedGraph, t_max, n_runs, seed):
    paths, holds, rates = kernels.vrjp_prefix(pg.nbr_ptr, pg.nbr_idx, pg.nbr_beta, pg.rho,
                                              pg.n_vertices, int(n_runs), int(t_max), _seed32(seed))
    probs, errs = {}, {}
    for p in enumerate_paths(pg, t_max):
        n = len(p)
        hit = np.all(paths[:, :n] == np.array(p), axis=1)
        q = float(hit.mean())
        probs[p] = q
        errs[p] = math.sqrt(max(q * (1 - q), 0.0) / n_runs)
    return PathLaw(probs, errs), holds, rates


def env_path_law(pg: PinnedGraph, t_max, config: SamplerConfig):
    chain = run_chain(pg.strip, config)
    W = env_weights(pg, chain.trace)
    probs, errs = {}, {}
    for p in enumerate_paths(pg, t_max):
        vals = rwre_path_prob(pg, W, p)
        e = batch_means(vals, config.n_batches)
        probs[p], errs[p] = e.mean, e.stderr
    return PathLaw(probs, errs), W


def holding_time_ks(holds, rates):
    """KS test of rate-standardized holding times against Exp(1)."""
    z = (np.asarray(holds) * np.asarray(rates)).ravel()
    res = scipy.stats.kstest(z, "expon")
    return float(res.statistic), float(res.pvalue)


@dataclass
class MixingReport:
    rows: list
    vrjp_totals: dict
    env_totals: dict
    reversibility: float
    ks_pvalue: float
    first_hold_mean: float
    first_hold_stderr: float
    n_vrjp: int
    n_env: int
    passed: bool = False
    failures: list = field(default_factory=list)


def mixing_check(pg: PinnedGraph, t_max=3, n_vrjp=100000, n_env=10000,
                 config: SamplerConfig | None = None, seed=1, n_sigma=3.0) -> MixingReport:
    """Compare skeleton path laws of the process with the mixture of
    W-weighted reversible chains over environments from the pinned measure."""
    if t_max > 3:
        raise VRJPError("t_max must be at most 3")
    if pg.n_vertices > 4:
        raise VRJPError("mixing check is meant for graphs with at most 4 vertices")
    if config is None:
        config = SamplerConfig(seed=seed, samples=n_env, burn_in=500, thin=5)
    elif config.samples != n_env:
        config = SamplerConfig(**{**config.__dict__, "samples": n_env})
    law_v, holds, rates = vrjp_path_law(pg, t_max, n_vrjp, seed)
    law_e, W = env_path_law(pg, t_max, config)
    rows, failures = [], []
    for p in law_v.probs:
        pv, ev = law_v.probs[p], law_v.stderr[p]
        pe, ee = law_e.probs[p], law_e.stderr[p]
        se = math.hypot(ev, ee)
        ok = abs(pv - pe) <= n_sigma * se if se > 0 else abs(pv - pe) <= 1e-12
        rows.append({"path": pg.path_label(p), "steps": len(p) - 1, "vrjp": pv, "vrjp_se": ev,
                     "env": pe, "env_se": ee, "z": (pv - pe) / se if se > 0 else 0.0, "ok": ok})
        if not ok:
            failures.append(pg.path_label(p))
    rev = reversibility_defect(pg, W)
    _, ks_p = holding_time_ks(holds, rates)
    h0 = holds[:, 0]
    vt, et = law_v.totals(), law_e.totals()
    if rev > 1e-12:
        failures.append("reversibility")
    for n in vt:
        if abs(vt[n] - 1) > 1e-9 or abs(et[n] - 1) > 1e-9:
            failures.append(f"total probability at length {n}")
    if ks_p < 0.01:
        failures.append("holding-time KS")
    return MixingReport(rows, vt, et, rev, ks_p, float(h0.mean()),
                        float(h0.std(ddof=1) / math.sqrt(len(h0))), n_vrjp, n_env,
                        not failures, failures)


# ----------------------------------------------------------- localization

def default_checkpoints(n_steps):
    small = np.arange(0, min(n_steps, 200) + 1)
    big = np.geomspace(200, n_steps, 120) if n_steps > 200 else np.array([])
    return np.unique(np.concatenate([small, big.astype(np.int64)])).astype(np.int64)


@dataclass
class LocalizationReport:
    levels: list
    occupation_max: list
    slope: float
    slope_stderr: float
    range_n: list
    range_mean: list
    range_ratio_max: float
    range_log_coef: float
    range_curvature: float
    range_curvature_stderr: float
    range_loglog_slope: float
    max_range: int
    saturated: bool
    n_steps: int
    n_runs: int

    def decay_significant(self, z=1.645):
        return self.slope + z * self.slope_stderr < 0

    def range_log_bounded(self, z=1.645):
        """Mean range linear (or flattening) in log n: the quadratic coefficient
        of R(n) in log n is not significantly positive, and no run reached the
        strip ends."""
        return (not self.saturated) and self.range_curvature - z * self.range_curvature_stderr <= 0.0

    def occupation(self, level):
        return self.occupation_max[self.levels.index(level)]


def _wls(x, y, w):
    a = np.vstack([x, np.ones_like(x)]).T * np.sqrt(w)[:, None]
    b = y * np.sqrt(w)
    coef, *_ = np.linalg.lstsq(a, b, rcond=None)
    resid = b - a @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(resid @ resid) / dof
    cov = np.linalg.inv(a.T @ a) * max(s2, 1.0)
    return float(coef[0]), float(math.sqrt(cov[0, 0]))


def localization_stats(pg: PinnedGraph, n_steps, n_runs, seed, checkpoints=None,
                       range_window=(10 ** 3, 10 ** 6), min_count=10, n_groups=20):
    """Occupation maxima per |level| and range growth of the skeleton.

    The sup over n is approximated by the max over the checkpoints up to
    ``n_steps``, so the reported occupation is a lower bound of the sup.
    """
    strip = pg.strip
    if strip.hi - strip.lo < 30:
        raise VRJPError("localization needs a strip with hi - lo >= 30")
    cps = default_checkpoints(n_steps) if checkpoints is None else np.asarray(checkpoints, np.int64)
    pos, rmax = kernels.vrjp_walk(pg.nbr_ptr, pg.nbr_idx, pg.nbr_beta, pg.rho, pg.n_vertices,
                                  int(n_runs), int(n_steps), cps, pg.level, _seed32(seed))
    nv = pg.n_vertices
    counts = np.bincount((pos + nv * np.arange(len(cps))[None, :]).ravel(),
                         minlength=nv * len(cps)).reshape(len(cps), nv)
    per_vertex = counts.max(axis=0) / n_runs
    per_vertex[pg.rho] = 0.0
    alev = np.abs(pg.level)
    top = int(alev.max())
    occ = np.zeros(top + 1)
    np.maximum.at(occ, alev, per_vertex)
    levels = np.arange(top + 1)
    use = occ * n_runs >= min_count
    x, p = levels[use].astype(float), occ[use]
    if len(x) >= 3:
        slope, slope_se = _wls(x, np.log(p), p * n_runs / np.maximum(1 - p, 1e-12))
    else:
        slope, slope_se = float("nan"), float("nan")

    lo_n, hi_n = range_window
    win = (cps >= lo_n) & (cps <= min(hi_n, n_steps))
    ns = cps[win]
    rm = rmax[:, win].astype(float)
    mean_r = rm.mean(axis=0)
    ratio_max = float(np.max(mean_r / np.log(ns))) if len(ns) else float("nan")
    nan = float("nan")
    b, q, q_se, ll_slope = nan, nan, nan, nan
    if len(ns) >= 4:
        x = np.log(ns)
        # a + b log n + q (log n)^2; run groups give the stderr of q
        q, b, _ = np.polyfit(x, mean_r, 2)
        qs = [np.polyfit(x, rm[g].mean(axis=0), 2)[0]
              for g in np.array_split(np.arange(n_runs), n_groups)]
        q_se = float(np.std(qs, ddof=1) / math.sqrt(n_groups))
        b = float(np.polyfit(x, mean_r, 1)[0])
        ll_slope = float(np.polyfit(np.log(x), np.log(np.maximum(mean_r, 1e-12)), 1)[0])
    max_range = int(rmax.max())
    saturated = max_range >= min(-strip.lo, strip.hi) - 1
    return LocalizationReport(levels.tolist(), occ.tolist(), slope, slope_se, ns.tolist(),
                              mean_r.tolist(), ratio_max, b, float(q), q_se, ll_slope,
                              max_range, saturated,
                              int(n_steps), int(n_runs))


__all__ = ["PinnedGraph", "Trajectory", "simulate_vrjp", "skeleton", "env_weights",
           "stationary", "rwre_path_prob", "reversibility_defect", "enumerate_paths",
           "PathLaw", "mixing_check", "MixingReport", "localization_stats",
           "LocalizationReport", "holding_time_ks", "default_checkpoints"]
