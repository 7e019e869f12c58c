"""Hot loops: banded Cholesky, Metropolis sweeps, Wilson's algorithm, VRJP.

All randomness comes from ``np.random.random()`` after ``np.random.seed``
so the compiled and the python backends agree draw for draw.
"""
import math

import numpy as np

from ._accel import kernel


@kernel
def band_fill(t, tail, head, beta, n, pin, eps, bw, ab):
    """Lower band storage ab[d, i] = M[i, i-d] of A_L(t) + eps_hat."""
    for d in range(bw + 1):
        for i in range(n):
            ab[d, i] = 0.0
    for k in range(tail.shape[0]):
        i = tail[k]
        j = head[k]
        w = beta[k] * math.exp(t[i] + t[j])
        if i > j:
            i, j = j, i
        ab[j - i, i] -= w
        ab[0, i] += w
        ab[0, j] += w
    ab[0, pin] += eps * math.exp(t[pin])


@kernel
def band_cholesky(ab, n, bw):
    """In-place banded Cholesky; returns log det, or nan if not positive definite."""
    logdet = 0.0
    for j in range(n):
        s = ab[0, j]
        k0 = j - bw if j - bw > 0 else 0
        for k in range(k0, j):
            v = ab[j - k, k]
            s -= v * v
        if not s > 0.0:
            return np.nan
        d = math.sqrt(s)
        ab[0, j] = d
        logdet += 2.0 * math.log(d)
        iend = j + bw if j + bw < n - 1 else n - 1
        for i in range(j + 1, iend + 1):
            s2 = ab[i - j, j]
            k1 = i - bw if i - bw > 0 else 0
            for k in range(k1, j):
                s2 -= ab[i - k, k] * ab[j - k, k]
            ab[i - j, j] = s2 / d
    return logdet


@kernel
def band_solve_lt(ab, n, bw, z):
    """Solve L^T x = z in place for the banded Cholesky factor L."""
    for j in range(n - 1, -1, -1):
        s = z[j]
        iend = j + bw if j + bw < n - 1 else n - 1
        for i in range(j + 1, iend + 1):
            s -= ab[i - j, j] * z[i]
        z[j] = s / ab[0, j]


@kernel
def log_marginal(t, tail, head, beta, n, pin, eps, bw, ab):
    """log of the s-integrated t density, up to a constant."""
    band_fill(t, tail, head, beta, n, pin, eps, bw, ab)
    ld = band_cholesky(ab, n, bw)
    if ld != ld:
        return -np.inf
    val = 0.5 * ld - eps * (math.cosh(t[pin]) - 1.0)
    for i in range(n):
        val -= t[i]
    for k in range(tail.shape[0]):
        val -= beta[k] * (math.cosh(t[tail[k]] - t[head[k]]) - 1.0)
    return val


@kernel
def metropolis(t, tail, head, beta, n, pin, eps, bw, n0, step_site, step_shift,
               n_sweeps, thin, seed):
    """Random-walk Metropolis on the t marginal.

    One sweep = a move at every site, a shift of every block of levels cut
    off by a horizontal layer (the block not containing the pin level), and
    a shift of the whole field.  Returns (trace of t every ``thin`` sweeps,
    acceptance counts [site, shift, global], proposal counts).
    """
    np.random.seed(seed)
    ab = np.zeros((bw + 1, n))
    t = t.copy()
    cur = log_marginal(t, tail, head, beta, n, pin, eps, bw, ab)
    n_levels = n // n0
    pin_level = pin // n0
    n_rec = n_sweeps // thin
    trace = np.empty((n_rec, n))
    acc = np.zeros(3)
    prop = np.zeros(3)
    rec = 0
    for sweep in range(n_sweeps):
        for i in range(n):
            old = t[i]
            t[i] = old + step_site * (2.0 * np.random.random() - 1.0)
            new = log_marginal(t, tail, head, beta, n, pin, eps, bw, ab)
            prop[0] += 1
            if math.log(1.0 - np.random.random()) < new - cur:
                cur = new
                acc[0] += 1
            else:
                t[i] = old
        for c in range(1, n_levels):
            delta = step_shift * (2.0 * np.random.random() - 1.0)
            if c > pin_level:
                a, b = c * n0, n
            else:
                a, b = 0, c * n0
            for i in range(a, b):
                t[i] += delta
            new = log_marginal(t, tail, head, beta, n, pin, eps, bw, ab)
            prop[1] += 1
            if math.log(1.0 - np.random.random()) < new - cur:
                cur = new
                acc[1] += 1
            else:
                for i in range(a, b):
                    t[i] -= delta
        delta = step_shift * (2.0 * np.random.random() - 1.0)
        for i in range(n):
            t[i] += delta
        new = log_marginal(t, tail, head, beta, n, pin, eps, bw, ab)
        prop[2] += 1
        if math.log(1.0 - np.random.random()) < new - cur:
            cur = new
            acc[2] += 1
        else:
            for i in range(n):
                t[i] -= delta
        if (sweep + 1) % thin == 0 and rec < n_rec:
            trace[rec] = t
            rec += 1
    return trace, acc, prop


@kernel
def wilson(t, nbr_ptr, nbr_idx, nbr_edge, nbr_beta, n, root, seed):
    """Random spanning tree with weights beta_ij e^{t_i + t_j} (Wilson).

    Returns the parent-edge id of every vertex (-1 at the root).
    """
    np.random.seed(seed)
    in_tree = np.zeros(n, dtype=np.bool_)
    nxt = np.full(n, -1, dtype=np.int64)
    nxt_edge = np.full(n, -1, dtype=np.int64)
    in_tree[root] = True
    for start in range(n):
        u = start
        while not in_tree[u]:
            tot = 0.0
            for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
                tot += nbr_beta[k] * math.exp(t[nbr_idx[k]])
            r = np.random.random() * tot
            acc = 0.0
            pick = nbr_ptr[u + 1] - 1
            for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
                acc += nbr_beta[k] * math.exp(t[nbr_idx[k]])
                if r < acc:
                    pick = k
                    break
            nxt[u] = nbr_idx[pick]
            nxt_edge[u] = nbr_edge[pick]
            u = nxt[u]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u]
    nxt_edge[root] = -1
    return nxt_edge


@kernel
def vrjp_walk(nbr_ptr, nbr_idx, nbr_beta, start, n_vertices, n_runs, n_steps,
              checkpoints, vlevel, seed):
    """Skeletons of the reinforced jump process (initial local times 1).

    Rates from i are beta_ij (1 + L_j); only L_i grows while at i, so the
    holding time is exponential with the summed rate.  Records the position
    and the running max |level| at each checkpoint step.
    """
    np.random.seed(seed)
    n_cp = checkpoints.shape[0]
    pos = np.empty((n_runs, n_cp), dtype=np.int64)
    rmax = np.empty((n_runs, n_cp), dtype=np.int64)
    loc = np.zeros(n_vertices)
    for run in range(n_runs):
        for i in range(n_vertices):
            loc[i] = 0.0
        u = start
        m = abs(vlevel[u])
        cp = 0
        while cp < n_cp and checkpoints[cp] == 0:
            pos[run, cp] = u
            rmax[run, cp] = m
            cp += 1
        for step in range(1, n_steps + 1):
            tot = 0.0
            for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
                tot += nbr_beta[k] * (1.0 + loc[nbr_idx[k]])
            hold = -math.log(1.0 - np.random.random()) / tot
            loc[u] += hold
            r = np.random.random() * tot
            acc = 0.0
            pick = nbr_ptr[u + 1] - 1
            for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
                acc += nbr_beta[k] * (1.0 + loc[nbr_idx[k]])
                if r < acc:
                    pick = k
                    break
            u = nbr_idx[pick]
            lv = abs(vlevel[u])
            if lv > m:
                m = lv
            while cp < n_cp and checkpoints[cp] == step:
                pos[run, cp] = u
                rmax[run, cp] = m
                cp += 1
            if cp >= n_cp:
                break
    return pos, rmax


@kernel
def vrjp_prefix(nbr_ptr, nbr_idx, nbr_beta, start, n_vertices, n_runs, tmax, seed):
    """First ``tmax`` jumps of many independent runs: skeleton prefixes, the
    holding times before each jump and the total jump rate during each hold."""
    np.random.seed(seed)
    paths = np.empty((n_runs, tmax + 1), dtype=np.int64)
    holds = np.empty((n_runs, tmax))
    rates = np.empty((n_runs, tmax))
    loc = np.zeros(n_vertices)
    for run in range(n_runs):
        for i in range(n_vertices):
            loc[i] = 0.0
        u = start
        paths[run, 0] = u
        for step in range(tmax):
            tot = 0.0
            for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
                tot += nbr_beta[k] * (1.0 + loc[nbr_idx[k]])
            hold = -math.log(1.0 - np.random.random()) / tot
            loc[u] += hold
            holds[run, step] = hold
            rates[run, step] = tot
            r = np.random.random() * tot
            acc = 0.0
            pick = nbr_ptr[u + 1] - 1
            for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
                acc += nbr_beta[k] * (1.0 + loc[nbr_idx[k]])
                if r < acc:
                    pick = k
                    break
            u = nbr_idx[pick]
            paths[run, step + 1] = u
    return paths, holds, rates


@kernel
def vrjp_trajectory(nbr_ptr, nbr_idx, nbr_beta, start, n_vertices, horizon, max_jumps, seed):
    """One trajectory up to clock ``horizon``: jump times, visited vertices,
    final local times."""
    np.random.seed(seed)
    times = np.empty(max_jumps)
    verts = np.empty(max_jumps + 1, dtype=np.int64)
    loc = np.zeros(n_vertices)
    u = start
    verts[0] = u
    clock = 0.0
    n_jumps = 0
    while n_jumps < max_jumps:
        tot = 0.0
        for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
            tot += nbr_beta[k] * (1.0 + loc[nbr_idx[k]])
        hold = -math.log(1.0 - np.random.random()) / tot
        if clock + hold > horizon:
            loc[u] += horizon - clock
            clock = horizon
            break
        clock += hold
        loc[u] += hold
        r = np.random.random() * tot
        acc = 0.0
        pick = nbr_ptr[u + 1] - 1
        for k in range(nbr_ptr[u], nbr_ptr[u + 1]):
            acc += nbr_beta[k] * (1.0 + loc[nbr_idx[k]])
            if r < acc:
                pick = k
                break
        u = nbr_idx[pick]
        times[n_jumps] = clock
        n_jumps += 1
        verts[n_jumps] = u
    return times[:n_jumps], verts[:n_jumps + 1], loc
