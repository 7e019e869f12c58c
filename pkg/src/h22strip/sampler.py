"""Monte Carlo for the pinned measure and the interpolated measure.

The chain lives on the t field only.  Integrating out s exactly (a centered
Gaussian with precision A_L(t) + eps_hat) leaves the marginal

    prod_j e^{-t_j} e^{-F_L(grad t)} det[A_L(t) + eps_hat]^{1/2} e^{-eps (cosh t0 - 1)}

because the density carries det^{+1} and the Gaussian integral gives
det^{-1/2}.  Whenever an observable needs s it is drawn afresh from the
conditional Gaussian.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, asdict

import numpy as np
import scipy.linalg

from . import kernels
from .graph import StripGraph
from .measure import (DeformationParams, MeasureError, chi_tilde, chi_tilde_prime,
                      entropy_constant, frame, log_density, pinned_matrix)

MIN_BATCHES = 20
MIN_ESS = 50.0


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings.  ``samples`` retained states, one every ``thin`` sweeps."""

    seed: int = 1
    burn_in: int = 1000
    samples: int = 10000
    thin: int = 1
    t_step: float = 0.8
    shift_step: float | None = None
    n_batches: int = MIN_BATCHES
    tune: bool = True
    n_chains: int = 1

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.t_step > 0:
            raise ValueError("t_step must be positive")
        if self.thin < 1 or self.burn_in < 0:
            raise ValueError("thin >= 1 and burn_in >= 0 required")
        if self.n_batches < MIN_BATCHES:
            raise ValueError(f"need at least {MIN_BATCHES} batches")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class EstimateWithError:
    mean: float
    stderr: float
    n_effective: float
    n_batches: int = MIN_BATCHES

    def __post_init__(self):
        if self.stderr < 0:
            raise ValueError("negative stderr")

    def zscore(self, target):
        if self.stderr == 0:
            return 0.0 if self.mean == target else math.inf
        return (self.mean - target) / self.stderr

    def to_dict(self):
        return asdict(self)


def _seed32(seed):
    # numba and the legacy numpy generator both take 32-bit seeds
    return int(np.random.SeedSequence(int(seed)).generate_state(1)[0])


def batch_means(x, n_batches=MIN_BATCHES) -> EstimateWithError:
    """Batch-means mean and stderr of a (possibly autocorrelated) series."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < n_batches:
        raise SamplerError(f"{n} samples cannot fill {n_batches} batches")
    size = n // n_batches
    b = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    mean = float(x.mean())
    se = float(b.std(ddof=1) / math.sqrt(n_batches))
    var = float(x.var())
    n_eff = n if se == 0 else min(float(n), var / se ** 2)
    return EstimateWithError(mean, se, n_eff, n_batches)


def ratio_estimate(num, den, n_batches=MIN_BATCHES) -> EstimateWithError:
    """mean(num) / mean(den) with a delta-method batch-means stderr."""
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    r = float(num.mean() / den.mean())
    lin = (num - r * den) / den.mean()
    e = batch_means(lin, n_batches)
    ess = float(den.sum() ** 2 / np.sum(den ** 2))
    return EstimateWithError(r, e.stderr, min(e.n_effective, ess), n_batches)


# ------------------------------------------------------------ strip arrays

class _StripArrays:
    def __init__(self, strip: StripGraph):
        self.strip = strip
        self.tail = np.ascontiguousarray(strip.tail)
        self.head = np.ascontiguousarray(strip.head)
        self.beta = np.ascontiguousarray(strip.beta)
        self.n = strip.n_vertices
        self.pin = strip.pin_vertex
        self.eps = float(strip.weights.epsilon)
        self.bw = int(np.max(np.abs(self.tail - self.head))) if strip.n_edges else 0
        self.n0 = strip.n0
        # adjacency for Wilson's algorithm
        deg = np.zeros(self.n, dtype=np.int64)
        np.add.at(deg, self.tail, 1)
        np.add.at(deg, self.head, 1)
        ptr = np.concatenate([[0], np.cumsum(deg)])
        idx = np.empty(ptr[-1], dtype=np.int64)
        eid = np.empty(ptr[-1], dtype=np.int64)
        bet = np.empty(ptr[-1])
        fill = ptr[:-1].copy()
        for k in range(strip.n_edges):
            for a, b in ((self.tail[k], self.head[k]), (self.head[k], self.tail[k])):
                idx[fill[a]] = b
                eid[fill[a]] = k
                bet[fill[a]] = self.beta[k]
                fill[a] += 1
        self.nbr_ptr, self.nbr_idx, self.nbr_edge, self.nbr_beta = ptr, idx, eid, bet

    def log_marginal(self, t):
        ab = np.zeros((self.bw + 1, self.n))
        return kernels.log_marginal(np.asarray(t, dtype=float), self.tail, self.head, self.beta,
                                    self.n, self.pin, self.eps, self.bw, ab)


def log_t_marginal(strip: StripGraph, t):
    """log of the s-integrated density of t (normalized, includes (2 pi)^{-N/2})."""
    sa = _StripArrays(strip)
    return sa.log_marginal(t) - 0.5 * strip.n_vertices * math.log(2 * math.pi)


# ---------------------------------------------------------- conditionals

def sample_s_given_t(strip: StripGraph, t, rng: np.random.Generator):
    """Exact draw of s from N(0, (A_L(t) + eps_hat)^{-1}) by dense Cholesky."""
    m = pinned_matrix(strip, t)
    try:
        c = scipy.linalg.cholesky(m, lower=True)
    except np.linalg.LinAlgError as exc:
        raise MeasureError("A_L(t) + eps_hat is not positive definite") from exc
    z = rng.standard_normal(strip.n_vertices)
    return scipy.linalg.solve_triangular(c.T, z, lower=False)


def sample_s_batch(strip: StripGraph, ts, rng: np.random.Generator):
    ts = np.atleast_2d(ts)
    return np.array([sample_s_given_t(strip, t, rng) for t in ts])


def sample_tree_given_t(strip: StripGraph, t, seed):
    """Spanning tree T with probability proportional to prod_{e in T} beta_e e^{t_i+t_j}.

    Returns the parent edge index of each vertex towards r = (lo, p), -1 at r.
    """
    sa = _arrays(strip)
    return kernels.wilson(np.asarray(t, dtype=float), sa.nbr_ptr, sa.nbr_idx, sa.nbr_edge,
                          sa.nbr_beta, sa.n, strip.root, _seed32(seed))


_ARRAYS = {}


def _arrays(strip):
    sa = _ARRAYS.get(id(strip))
    if sa is None or sa.strip is not strip:
        sa = _StripArrays(strip)
        _ARRAYS[id(strip)] = sa
    return sa


# --------------------------------------------------------------- the chain

@dataclass
class ChainResult:
    trace: np.ndarray
    acceptance: dict
    steps: tuple
    status: str = "ok"
    warnings: list = field(default_factory=list)


def _tune(sa, t, config, seed):
    site, shift = config.t_step, config.shift_step or config.t_step
    if not config.tune:
        return site, shift, t
    for it in range(12):
        trace, acc, prop = kernels.metropolis(t, sa.tail, sa.head, sa.beta, sa.n, sa.pin,
                                              sa.eps, sa.bw, sa.n0, site, shift, 50, 50, seed + it)
        t = trace[-1]
        rate = acc / np.maximum(prop, 1)
        # aim at roughly 40% acceptance for both move types
        site *= math.exp(np.clip(rate[0] - 0.4, -0.3, 0.3) * 2.5)
        if prop[1] > 0:
            shift *= math.exp(np.clip(rate[1] - 0.4, -0.3, 0.3) * 2.5)
        else:
            shift = site
    return site, shift, t


def run_chain(strip: StripGraph, config: SamplerConfig, t_init=None) -> ChainResult:
    """Metropolis chain(s) on the t marginal; the trace holds the retained t fields."""
    sa = _arrays(strip)
    traces, accs, props = [], np.zeros(3), np.zeros(3)
    steps = None
    seeds = np.random.SeedSequence(int(config.seed)).spawn(config.n_chains)
    for ss in seeds:
        s32 = int(ss.generate_state(1)[0] % (2 ** 31 - 1000))
        t = np.zeros(sa.n) if t_init is None else np.array(t_init, dtype=float)
        site, shift, t = _tune(sa, t, config, s32)
        steps = (site, shift)
        if config.burn_in:
            tr, _, _ = kernels.metropolis(t, sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps,
                                          sa.bw, sa.n0, site, shift, config.burn_in,
                                          config.burn_in, s32 + 500)
            t = tr[-1]
        tr, acc, prop = kernels.metropolis(t, sa.tail, sa.head, sa.beta, sa.n, sa.pin, sa.eps,
                                           sa.bw, sa.n0, site, shift,
                                           config.samples * config.thin, config.thin, s32 + 501)
        traces.append(tr)
        accs += acc
        props += prop
    rates = accs / np.maximum(props, 1)
    acceptance = {"site": float(rates[0]), "shift": float(rates[1]), "global": float(rates[2])}
    res = ChainResult(np.concatenate(traces), acceptance, steps)
    for name, r in acceptance.items():
        if props[["site", "shift", "global"].index(name)] > 0 and not 0.05 <= r <= 0.95:
            res.status = "warning"
            res.warnings.append(f"{name} acceptance {r:.3f} outside [0.05, 0.95]")
    for msg in res.warnings:
        warnings.warn(msg)
    return res


def mcmc_t(strip: StripGraph, config: SamplerConfig, observable, needs_s=False,
           chain: ChainResult | None = None) -> EstimateWithError:
    """Estimate E[observable] under the pinned measure.

    ``observable`` maps a batch of t fields (and s fields if ``needs_s``) to
    one value per sample.
    """
    if chain is None:
        chain = run_chain(strip, config)
    ts = chain.trace
    if needs_s:
        rng = np.random.default_rng(config.seed)
        vals = observable(ts, sample_s_batch(strip, ts, rng))
    else:
        vals = observable(ts)
    vals = np.broadcast_to(np.asarray(vals, dtype=float), (len(ts),))
    return batch_means(vals, config.n_batches)


# ------------------------------------------------------------- decay curve

@dataclass
class DecayCurve:
    levels: list
    estimates: list
    stderrs: list
    n_effective: list
    slope: float
    slope_stderr: float
    intercept: float
    diff_means: list
    diff_stderrs: list
    hi: int
    lo: int
    acceptance: dict

    def rows(self):
        return list(zip(self.levels, self.estimates, self.stderrs, self.n_effective))

    def decreasing(self, n_sigma=2.0, allowed=1):
        """Strict decrease between adjacent levels, with up to ``allowed`` pairs
        that are only within ``n_sigma`` of decreasing."""
        soft = 0
        for d, se in zip(self.diff_means, self.diff_stderrs):
            if d > 0:
                continue
            if d > -n_sigma * se:
                soft += 1
            else:
                return False
        return soft <= allowed

    def slope_negative(self, z=1.645):
        return self.slope + z * self.slope_stderr < 0

    def to_dict(self):
        return asdict(self)


def decay_observable(strip: StripGraph, ts, l):
    p = strip.pin_vertex
    return np.exp(0.5 * (ts[:, strip.vid(l, strip.base.pin)] - ts[:, p]))


def _fit(levels, logs):
    a = np.vstack([levels, np.ones_like(levels)]).T
    coef, *_ = np.linalg.lstsq(a, logs, rcond=None)
    return coef


def decay_curve(strip: StripGraph, l_list, config: SamplerConfig,
                chain: ChainResult | None = None) -> DecayCurve:
    """Estimates of E[e^{(t_l - t_0)/2}] for each l, a log-linear fit and
    batch-means errors for the fitted slope and for adjacent differences."""
    l_list = [int(l) for l in l_list]
    for l in l_list:
        if not strip.lo <= l <= strip.hi:
            raise SamplerError(f"level {l} outside [{strip.lo}, {strip.hi}]")
    if chain is None:
        chain = run_chain(strip, config)
    obs = np.stack([decay_observable(strip, chain.trace, l) for l in l_list], axis=1)
    ests = [batch_means(obs[:, i], config.n_batches) for i in range(len(l_list))]
    for l, e in zip(l_list, ests):
        if e.stderr > 0 and e.mean <= 3 * e.stderr:
            raise SamplerError(f"estimate at l={l} is consistent with 0; too few samples")
    levels = np.array(l_list, dtype=float)
    fit_mask = levels != 0
    if fit_mask.sum() < 2:
        fit_mask[:] = True
    means = np.array([e.mean for e in ests])
    slope, intercept = _fit(levels[fit_mask], np.log(means[fit_mask]))
    # batch-level slopes carry the correlations between levels
    nb = config.n_batches
    size = len(obs) // nb
    bmeans = obs[: size * nb].reshape(nb, size, -1).mean(axis=1)
    bslopes = np.array([_fit(levels[fit_mask], np.log(bm[fit_mask]))[0] for bm in bmeans])
    slope_se = float(bslopes.std(ddof=1) / math.sqrt(nb))
    diffs = obs[:, :-1] - obs[:, 1:]
    dest = [batch_means(diffs[:, i], nb) for i in range(diffs.shape[1])]
    return DecayCurve(l_list, [e.mean for e in ests], [e.stderr for e in ests],
                      [e.n_effective for e in ests], float(slope), slope_se, float(intercept),
                      [d.mean for d in dest], [d.stderr for d in dest], strip.hi, strip.lo,
                      chain.acceptance)


# ------------------------------------------------------ independence check

def _gradient_batch(strip: StripGraph, ts, ss):
    fr = frame(strip)
    ti, tj = ts[:, fr.tail], ts[:, fr.head]
    return tj - ti, (ss[:, fr.head] - ss[:, fr.tail]) * np.exp(0.5 * (ti + tj))


def independence_check(strip: StripGraph, config: SamplerConfig, n_coords=10,
                       chain: ChainResult | None = None):
    """Correlations between the pin block (t0, s0) and random gradient coordinates."""
    if chain is None:
        chain = run_chain(strip, config)
    ts = chain.trace
    rng = np.random.default_rng(config.seed)
    ss = sample_s_batch(strip, ts, rng)
    gt, gy = _gradient_batch(strip, ts, ss)
    coords = np.concatenate([gt, gy], axis=1)
    names = [f"grad_t[{k}]" for k in range(gt.shape[1])] + [f"grad_y[{k}]" for k in range(gy.shape[1])]
    pick = rng.choice(coords.shape[1], size=min(n_coords, coords.shape[1]), replace=False)
    p = strip.pin_vertex
    pins = {"t0": ts[:, p], "s0": ss[:, p]}
    n_eff = min(batch_means(ts[:, p], config.n_batches).n_effective,
                min(batch_means(coords[:, k], config.n_batches).n_effective for k in pick))
    bound = 3.0 / math.sqrt(n_eff)
    rows = []
    for pname, pv in pins.items():
        for k in pick:
            c = float(np.corrcoef(pv, coords[:, k])[0, 1])
            rows.append({"pin": pname, "coord": names[k], "corr": c, "ok": abs(c) <= bound})
    control = float(np.corrcoef(ts[:, p], ts[:, p].copy())[0, 1])
    return {"n_effective": n_eff, "bound": bound, "rows": rows,
            "passed": all(r["ok"] for r in rows), "self_control": control}


# --------------------------------------------------- energy and entropy

def _from_gradient_batch(strip, t0, s0, gt, gy):
    fr = frame(strip)
    p = strip.pin_vertex
    anc = fr.on_root_path
    u = gt @ anc.T
    t = t0[:, None] + u - u[:, [p]]
    w = (gy * np.exp(-0.5 * (t[:, fr.tail] + t[:, fr.head]))) @ anc.T
    s = s0[:, None] + w - w[:, [p]]
    return t, s


def _tree_tables(strip, parents):
    """Sign (+1/-1/0) per strip edge and backbone-path mask for a batch of trees
    given by parent edges towards r."""
    m = len(parents)
    sign = np.zeros((m, strip.n_edges))
    on_path = np.zeros((m, strip.n_edges), dtype=bool)
    verts = np.arange(strip.n_vertices)
    for i, par in enumerate(parents):
        has = par >= 0
        e = par[has]
        sign[i, e] = np.where(strip.head[e] == verts[has], 1.0, -1.0)
        v = strip.top
        while v != strip.root:
            k = par[v]
            on_path[i, k] = True
            v = strip.tail[k] if strip.head[k] == v else strip.head[k]
    return sign, on_path


def interpolated_hamiltonian_batch(strip: StripGraph, t, s, gt, sign, on_path, l):
    """Vectorized H^{0 l} for batches of (t, s, backbone gradients, tree)."""
    fr = frame(strip)
    dt = t[:, strip.head] - t[:, strip.tail]
    y = (s[:, strip.head] - s[:, strip.tail]) * np.exp(0.5 * (t[:, strip.head] + t[:, strip.tail]))
    val = np.sum(strip.beta * (np.cosh(dt) - 1.0 + 0.5 * y ** 2), axis=1)
    off = (sign != 0) & ~on_path
    val += np.sum(np.where(off, sign * dt, 0.0), axis=1)
    val -= np.sum(np.where(sign != 0, np.log(strip.beta / (2 * math.pi)), 0.0), axis=1)
    vert = np.array([k[0] % 2 == 0 for k in fr.keys])
    val -= 0.5 * np.sum(gt[:, vert], axis=1)
    for n in range(strip.lo, 0):
        val -= 0.5 * gt[:, fr.pin_edges[n]]
    for n in range(l, strip.hi):
        val += 0.5 * gt[:, fr.pin_edges[n]]
    return val


def _chi_batch(strip, gt, gy, l, eta):
    """chi_{n+1/2} and d chi / d grad t_p for n < l, per sample."""
    fr = frame(strip)
    chis, dchis = [], []
    for n in range(l):
        k = fr.pin_edges[n]
        prod = np.ones(len(gt))
        for m in (n, n + 1):
            for i in strip.base.base_tree:
                j = fr.index[(2 * m, i)]
                prod = prod * chi_tilde((gt[:, j] ** 2 + gy[:, j] ** 2) / eta ** 2)
        u = gt[:, k]
        x = (u ** 2 + gy[:, k] ** 2) / eta ** 2
        chis.append(prod * chi_tilde(x))
        dchis.append(prod * chi_tilde_prime(x) * 2.0 * u / eta ** 2)
    return np.array(chis).T.reshape(len(gt), l), np.array(dchis).T.reshape(len(gt), l)


@dataclass
class EnergyEntropy:
    energy: EstimateWithError
    entropy: EstimateWithError
    log_z: EstimateWithError
    c5: float
    ess: float
    alpha: float
    l: int

    @property
    def entropy_upper(self):
        return self.c5 * self.alpha ** 2 * self.l

    def entropy_ok(self, n_sigma=3.0):
        s = self.entropy
        return -n_sigma * s.stderr <= s.mean <= self.entropy_upper + n_sigma * s.stderr

    def bound_ok(self, n_sigma=3.0):
        """log Z^{0l} <= E(alpha) + S(alpha) within the combined error."""
        err = math.sqrt(self.log_z.stderr ** 2 + self.energy.stderr ** 2 + self.entropy.stderr ** 2)
        return self.log_z.mean <= self.energy.mean + self.entropy.mean + n_sigma * err

    def to_dict(self):
        d = asdict(self)
        d["entropy_upper"] = self.entropy_upper
        return d


def _interpolated_samples(strip, chain, config, l, with_trees):
    ts = chain.trace
    rng = np.random.default_rng(config.seed)
    ss = sample_s_batch(strip, ts, rng)
    p = strip.pin_vertex
    w = np.exp(0.5 * (ts[:, strip.vid(l, strip.base.pin)] - ts[:, p]))
    parents = None
    if with_trees:
        seeds = rng.integers(0, 2 ** 31 - 1, size=len(ts))
        parents = [sample_tree_given_t(strip, t, sd) for t, sd in zip(ts, seeds)]
    return ts, ss, w, parents


def mc_energy_entropy(strip: StripGraph, l, alpha, config: SamplerConfig,
                      params: DeformationParams | None = None,
                      chain: ChainResult | None = None, samples=None) -> EnergyEntropy:
    """Energy and entropy of the deformed interpolated measure by reweighting
    pinned-measure samples with e^{Delta H} = e^{(t_l - t_0)/2}."""
    params = DeformationParams(alpha=alpha) if params is None else params
    if params.alpha != alpha:
        params = DeformationParams(alpha=alpha, eta=params.eta, c9=params.c9)
    params.check()
    if not 0 < l <= strip.hi:
        raise SamplerError("need 0 < l <= hi")
    if samples is None:
        if chain is None:
            chain = run_chain(strip, config)
        samples = _interpolated_samples(strip, chain, config, l, with_trees=True)
    ts, ss, w, parents = samples
    ess = float(w.sum() ** 2 / np.sum(w ** 2))
    if ess < MIN_ESS:
        raise SamplerError(f"effective sample size {ess:.1f} < {MIN_ESS} under reweighting")
    nb = config.n_batches
    fr = frame(strip)
    gt, gy = _gradient_batch(strip, ts, ss)
    chi, _ = _chi_batch(strip, gt, gy, l, params.eta)
    pins = [fr.pin_edges[n] for n in range(l)]
    e_obs = 0.5 * (gt[:, pins].sum(axis=1) + alpha * chi.sum(axis=1))
    energy = ratio_estimate(e_obs * w, w, nb)

    if alpha == 0.0:
        entropy = EstimateWithError(0.0, 0.0, energy.n_effective, nb)
    else:
        sign, on_path = _tree_tables(strip, parents)
        p = strip.pin_vertex
        h0 = interpolated_hamiltonian_batch(strip, ts, ss, gt, sign, on_path, l)
        gt2 = gt.copy()
        u = gt[:, pins]
        chi_u, dchi = _chi_batch(strip, gt, gy, l, params.eta)
        gt2[:, pins] = u + alpha * chi_u
        t2, s2 = _from_gradient_batch(strip, ts[:, p], ss[:, p], gt2, gy)
        h1 = interpolated_hamiltonian_batch(strip, t2, s2, gt2, sign, on_path, l)
        fac = 1.0 + alpha * dchi
        if np.any(fac <= 0):
            raise MeasureError("non-positive Jacobian factor")
        s_obs = h1 - h0 - np.sum(np.log(fac), axis=1)
        entropy = ratio_estimate(s_obs * w, w, nb)

    log_z = batch_means(w, nb)
    log_z = EstimateWithError(math.log(log_z.mean), log_z.stderr / log_z.mean,
                              log_z.n_effective, nb)
    c5 = entropy_constant(params, strip.weights, strip.base)
    return EnergyEntropy(energy, entropy, log_z, c5, ess, float(alpha), int(l))


# ----------------------------------------------------- normalization checks

def single_vertex_quadrature(strip: StripGraph, f=None, n_t=400, n_u=200, t_max=12.0, u_max=12.0):
    """Tensor Gauss-Legendre integral of f(t0, s0) times the pinned density
    on a single-vertex strip, using s0 = u e^{-t0/2}."""
    if strip.n_vertices != 1:
        raise SamplerError("single-vertex strip required")
    eps = strip.weights.epsilon
    xt, wt = np.polynomial.legendre.leggauss(n_t)
    xu, wu = np.polynomial.legendre.leggauss(n_u)
    t = t_max * xt
    u = u_max * xu
    tt, uu = np.meshgrid(t, u, indexing="ij")
    ss = uu * np.exp(-0.5 * tt)
    # density: e^{-t} (2 pi)^{-1} eps e^{t} e^{-eps (cosh t - 1) - eps s^2 e^t / 2}
    logd = (math.log(eps / (2 * math.pi)) - eps * (np.cosh(tt) - 1.0) - 0.5 * eps * uu ** 2)
    jac = np.exp(-0.5 * tt)
    vals = np.exp(logd) * jac
    if f is not None:
        vals = vals * f(tt, ss)
    return float(np.einsum("i,j,ij->", wt * t_max, wu * u_max, vals))


def log_density_batch(strip: StripGraph, ts, ss):
    return np.array([log_density(strip, t, s) for t, s in zip(ts, ss)])


def normalization_is(strip: StripGraph, n_samples, seed, t_scale=1.5):
    """Importance-sampling estimate of the total mass of the pinned density.

    Proposal: t ~ N(0, t_scale^2 I) and s | t ~ N(0, (A_L(t) + eps_hat)^{-1}).
    Returns an EstimateWithError for E_q[mu / q], which should be 1.
    """
    rng = np.random.default_rng(seed)
    n = strip.n_vertices
    ts = t_scale * rng.standard_normal((n_samples, n))
    ss = np.empty_like(ts)
    log_q = np.empty(n_samples)
    for i, t in enumerate(ts):
        m = pinned_matrix(strip, t)
        c = np.linalg.cholesky(m)
        z = rng.standard_normal(n)
        s = scipy.linalg.solve_triangular(c.T, z, lower=False)
        ss[i] = s
        log_q[i] = (-0.5 * float(t @ t) / t_scale ** 2 - n * math.log(t_scale)
                    - 0.5 * n * math.log(2 * math.pi)
                    + float(np.sum(np.log(np.diag(c)))) - 0.5 * float(z @ z)
                    - 0.5 * n * math.log(2 * math.pi))
    w = np.exp(log_density_batch(strip, ts, ss) - log_q)
    return batch_means(w)
