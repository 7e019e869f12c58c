"""Spanning trees of strips, local tree variables and the word code.

A spanning tree is a ``frozenset`` of edge keys ``(level2, idx)`` (see
:mod:`h22strip.graph`).  Outside ``[lo, hi]`` a tree is continued by copies of
the backbone tree, which is how a finite tree is read as a tree of the
two-sided infinite strip.  One padding level on each side already carries all
the information the local variables need.
"""
from __future__ import annotations

import json
from collections import deque
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .graph import BaseGraph, GraphError, StripGraph, Weights, build_strip

MAX_ENUM_VERTICES = 14


class CodecError(ValueError):
    pass


class LocalTreeVar(NamedTuple):
    """(A_left, b_left, F, b_right, A_right) at level 0.

    Partitions are tuples of sorted tuples (sorted), ``F`` is a sorted tuple of
    edge keys with ``level2`` in {-1, 0, 1}.
    """

    a_left: tuple
    b_left: int
    forest: tuple
    b_right: int
    a_right: tuple


class EdgeStatus(NamedTuple):
    in_tree: bool
    tail_is_lower: bool | None  # tree orientation equals the bookkeeping one
    on_backbone: bool | None


# ---------------------------------------------------------------- enumeration

def _enumerate_pairs(n_vertices, pairs, limit=None):
    """All spanning trees of a multigraph-free edge list, as index tuples."""
    m = len(pairs)
    out = []

    def find(par, a):
        while par[a] != a:
            a = par[a]
        return a

    def connectable(par, start):
        # can chosen edges plus edges[start:] still connect everything?
        p = list(par)
        for k in range(start, m):
            u, v = pairs[k]
            ru, rv = find(p, u), find(p, v)
            if ru != rv:
                p[ru] = rv
        root = find(p, 0)
        return all(find(p, a) == root for a in range(n_vertices))

    chosen = []

    def rec(k, par, n_comp):
        if n_comp == 1:
            out.append(tuple(chosen))
            if limit is not None and len(out) > limit:
                raise CodecError("spanning tree enumeration limit exceeded")
            return
        if k == m:
            return
        u, v = pairs[k]
        ru, rv = find(par, u), find(par, v)
        if ru != rv:
            p2 = list(par)
            p2[ru] = rv
            chosen.append(k)
            rec(k + 1, p2, n_comp - 1)
            chosen.pop()
        if connectable(par, k + 1):
            rec(k + 1, par, n_comp)

    if n_vertices == 1:
        return [()]
    rec(0, list(range(n_vertices)), n_vertices)
    return out


def enumerate_spanning_trees(strip: StripGraph, max_vertices=MAX_ENUM_VERTICES):
    """Every spanning tree of ``strip`` as a frozenset of edge keys."""
    if strip.n_vertices > max_vertices:
        raise CodecError(f"enumeration guard: {strip.n_vertices} > {max_vertices} vertices")
    pairs = list(zip(strip.tail.tolist(), strip.head.tolist()))
    keys = strip.edge_keys
    return [frozenset(keys[k] for k in t) for t in _enumerate_pairs(strip.n_vertices, pairs)]


def laplacian_tree_count(strip: StripGraph):
    """Unweighted matrix-tree count (determinant of a Laplacian minor)."""
    n = strip.n_vertices
    if n == 1:
        return 1
    lap = np.zeros((n, n))
    for a, b in zip(strip.tail, strip.head):
        lap[a, b] -= 1
        lap[b, a] -= 1
        lap[a, a] += 1
        lap[b, b] += 1
    return int(round(np.linalg.det(lap[1:, 1:])))


# ------------------------------------------------------------ local variables

class _UF:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, a):
        p = self.p
        while p[a] != a:
            p[a] = p[p[a]]
            a = p[a]
        return a

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[ra] = rb


def _padded(strip: StripGraph, tree):
    """Padded strip one level wider on each side and the padded tree."""
    pad = StripGraph(strip.base, strip.lo - 1, strip.hi + 1, strip.weights)
    extra = set()
    for n in (strip.lo - 1, strip.hi + 1):
        extra.update((2 * n, i) for i in strip.base.base_tree)
    extra.add((2 * strip.lo - 1, strip.base.pin))
    extra.add((2 * strip.hi + 1, strip.base.pin))
    return pad, frozenset(tree) | extra


def _partition(uf, pad, level, members):
    groups = {}
    for v in members:
        groups.setdefault(uf.find(pad.vid(level, v)), []).append(v)
    return tuple(sorted(tuple(sorted(g)) for g in groups.values()))


def local_vars(strip: StripGraph, tree):
    """Local tree variables tau_n for n = lo..hi (the word of ``tree``)."""
    tree = frozenset(tree)
    pad, ptree = _padded(strip, tree)
    lo, hi, n0 = strip.lo, strip.hi, strip.n0
    by_level = {}
    for key in ptree:
        by_level.setdefault(key[0], []).append(key)

    # left partitions: sweep upward adding edges of level2 <= 2n - 1
    a_left = {}
    uf = _UF(pad.n_vertices)
    added = 2 * (lo - 1) - 1
    for n in range(lo, hi + 1):
        while added < 2 * n - 1:
            added += 1
            for key in by_level.get(added, ()):
                uf.union(*pad.edge_endpoints(key))
        members = [v for v in range(n0) if (2 * n - 1, v) in ptree]
        a_left[n] = _partition(uf, pad, n - 1, members)
    a_right = {}
    uf = _UF(pad.n_vertices)
    added = 2 * (hi + 1) + 1
    for n in range(hi, lo - 1, -1):
        while added > 2 * n + 1:
            added -= 1
            for key in by_level.get(added, ()):
                uf.union(*pad.edge_endpoints(key))
        members = [v for v in range(n0) if (2 * n + 1, v) in ptree]
        a_right[n] = _partition(uf, pad, n + 1, members)

    path = pad.tree_path(ptree, pad.vid(lo - 1, strip.base.pin), pad.vid(hi + 1, strip.base.pin))
    seq = [path[0].tail] + [oe.head for oe in path]
    first, last = {}, {}
    for a in seq:
        lev, v = pad.vertex(a)
        first.setdefault(lev, v)
        last[lev] = v

    word = []
    for n in range(lo, hi + 1):
        forest = tuple(sorted((k[0] - 2 * n, k[1]) for l2 in (2 * n - 1, 2 * n, 2 * n + 1)
                              for k in by_level.get(l2, ())))
        word.append(LocalTreeVar(a_left[n], first[n], forest, last[n], a_right[n]))
    return word


def local_var(strip: StripGraph, tree, n: int):
    """tau_{n,T}; levels outside [lo, hi] give the backbone variable."""
    if n < strip.lo or n > strip.hi:
        return tau_backbone(strip.base)
    return local_vars(strip, tree)[n - strip.lo]


def encode(strip: StripGraph, tree):
    return tuple(local_vars(strip, tree))


@lru_cache(maxsize=None)
def tau_backbone(base: BaseGraph):
    p = base.pin
    forest = tuple(sorted([(-1, p), (1, p)] + [(0, i) for i in base.base_tree]))
    return LocalTreeVar(((p,),), p, forest, p, ((p,),))


def reflect_var(tau: LocalTreeVar) -> LocalTreeVar:
    forest = tuple(sorted((-l2, idx) for l2, idx in tau.forest))
    return LocalTreeVar(tau.a_right, tau.b_right, forest, tau.b_left, tau.a_left)


# ---------------------------------------------------------- auxiliary tree

@lru_cache(maxsize=65536)
def _aux_info(tau: LocalTreeVar, base: BaseGraph):
    """Depths from -inf and the -inf..+inf path inside the auxiliary tree.

    Nodes: base vertices 0..n0-1, left classes n0.., right classes after.
    Returns (depth per node, set of aux edges on the backbone path, node of
    each horizontal forest edge's outer end).
    """
    n0 = base.n_vertices
    lcls = {v: n0 + k for k, blk in enumerate(tau.a_left) for v in blk}
    off = n0 + len(tau.a_left)
    rcls = {v: off + k for k, blk in enumerate(tau.a_right) for v in blk}
    n_nodes = off + len(tau.a_right)
    adj = [[] for _ in range(n_nodes)]
    outer = {}
    for l2, idx in tau.forest:
        if l2 == 0:
            a, b = base.edges[idx]
        elif l2 == -1:
            a, b = lcls[idx], idx
        else:
            a, b = idx, rcls[idx]
        outer[(l2, idx)] = (a, b)
        adj[a].append((b, (l2, idx)))
        adj[b].append((a, (l2, idx)))
    src = lcls[tau.b_left]
    dst = rcls[tau.b_right]
    depth = [-1] * n_nodes
    parent = [None] * n_nodes
    depth[src] = 0
    queue = deque([src])
    while queue:
        a = queue.popleft()
        for b, key in adj[a]:
            if depth[b] < 0:
                depth[b] = depth[a] + 1
                parent[b] = (a, key)
                queue.append(b)
    if depth[dst] < 0:
        raise CodecError("auxiliary graph does not connect -inf to +inf")
    on_path = set()
    a = dst
    while a != src:
        a, key = parent[a]
        on_path.add(key)
    return tuple(depth), frozenset(on_path), outer


def recover_edge(tau: LocalTreeVar, key, base: BaseGraph) -> EdgeStatus:
    """Tree membership, orientation and backbone membership of the level-0
    copy of ``key`` (level2 in {-1, 0, 1}), read off ``tau`` alone."""
    if key[0] not in (-1, 0, 1):
        raise CodecError("edge level must be -1/2, 0 or 1/2")
    if key not in tau.forest:
        return EdgeStatus(False, None, None)
    depth, on_path, outer = _aux_info(tau, base)
    a, b = outer[key]
    # (a, b) is listed in bookkeeping order: lower id / lower level first
    return EdgeStatus(True, depth[a] < depth[b], key in on_path)


def recover_all(tau: LocalTreeVar, base: BaseGraph):
    """Dict key -> (sign, on_backbone) for every forest edge; sign = +1 when
    the tree orientation agrees with the bookkeeping one."""
    depth, on_path, outer = _aux_info(tau, base)
    out = {}
    for key, (a, b) in outer.items():
        out[key] = (1 if depth[a] < depth[b] else -1, key in on_path)
    return out


def edge_truth(strip: StripGraph, tree, n, key):
    """Ground-truth EdgeStatus of edge ``key`` shifted to level n, computed
    from the full padded tree."""
    pad, ptree = _padded(strip, tree)
    full = (key[0] + 2 * n, key[1])
    if full not in ptree:
        return EdgeStatus(False, None, None)
    root = pad.vid(strip.lo - 1, strip.base.pin)
    parent, pedge, depth = pad.tree_parents(ptree, root=root)
    a, b = pad.edge_endpoints(full)
    path = pad.tree_path(ptree, root, pad.vid(strip.hi + 1, strip.base.pin))
    on_bb = any(oe.key == full for oe in path)
    return EdgeStatus(True, bool(depth[a] < depth[b]), on_bb)


# ----------------------------------------------------------------- alphabet

class Alphabet:
    """Finite letter set with the matching relation as a boolean table."""

    def __init__(self, base: BaseGraph, letters, follows, sizes_used=()):
        self.base = base
        self.letters = list(letters)
        self.index = {t: i for i, t in enumerate(self.letters)}
        self.follows = np.asarray(follows, dtype=bool)
        self.bb = self.index[tau_backbone(base)]
        self.sizes_used = tuple(sizes_used)
        self.reflection = np.array([self.index.get(reflect_var(t), -1) for t in self.letters])

    def __len__(self):
        return len(self.letters)

    @property
    def n_pairs(self):
        return int(self.follows.sum())

    def follow(self, a, b):
        return bool(self.follows[self.index[a], self.index[b]])

    def diameter(self):
        """Largest BFS distance between two letters of (Theta, |-)."""
        n = len(self)
        best = 0
        for s in range(n):
            dist = np.full(n, -1)
            dist[s] = 0
            queue = deque([s])
            while queue:
                a = queue.popleft()
                for b in np.flatnonzero(self.follows[a]):
                    if dist[b] < 0:
                        dist[b] = dist[a] + 1
                        queue.append(b)
            if (dist < 0).any():
                return -1
            best = max(best, int(dist.max()))
        return best

    def word_count(self, n_levels):
        """Number of valid words of length ``n_levels`` (exact integer)."""
        vec = [0] * len(self)
        vec[self.bb] = 1
        vec = np.array(vec, dtype=object)
        mat = self.follows.astype(np.int64).astype(object)
        for _ in range(n_levels + 1):
            vec = vec.dot(mat)
        return int(vec[self.bb])

    def words(self, n_levels):
        """Enumerate valid words of the given length."""
        fol = [np.flatnonzero(self.follows[a]).tolist() for a in range(len(self))]
        bb = self.bb
        out = []

        def rec(prefix, last):
            if len(prefix) == n_levels:
                if self.follows[last, bb]:
                    out.append(tuple(self.letters[i] for i in prefix))
                return
            for b in fol[last]:
                prefix.append(b)
                rec(prefix, b)
                prefix.pop()

        rec([], bb)
        return out

    def to_json(self):
        return json.dumps({
            "base": {"n_vertices": self.base.n_vertices,
                     "edges": [list(e) for e in self.base.edges],
                     "pin": self.base.pin,
                     "base_tree": list(self.base.base_tree)},
            "letters": [[[list(b) for b in t.a_left], t.b_left, [list(k) for k in t.forest],
                         t.b_right, [list(b) for b in t.a_right]] for t in self.letters],
            "follows": [[int(a), int(b)] for a, b in zip(*np.nonzero(self.follows))],
            "sizes_used": list(self.sizes_used),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        b = d["base"]
        base = BaseGraph(b["n_vertices"], tuple(tuple(e) for e in b["edges"]), b["pin"],
                         tuple(b["base_tree"]))
        letters = [LocalTreeVar(tuple(tuple(x) for x in al), bl, tuple(tuple(k) for k in f),
                                br, tuple(tuple(x) for x in ar))
                   for al, bl, f, br, ar in d["letters"]]
        fol = np.zeros((len(letters), len(letters)), dtype=bool)
        for a, c in d["follows"]:
            fol[a, c] = True
        return cls(base, letters, fol, d.get("sizes_used", ()))


def _collect(base, n_levels, limit):
    strip = build_strip(base, 0, n_levels - 1, Weights.uniform(base))
    pairs = list(zip(strip.tail.tolist(), strip.head.tolist()))
    keys = strip.edge_keys
    bb = tau_backbone(base)
    letters, follows = set(), set()
    for t in _enumerate_pairs(strip.n_vertices, pairs, limit=limit):
        word = local_vars(strip, frozenset(keys[k] for k in t))
        full = [bb] + word + [bb]
        letters.update(word)
        follows.update(zip(full[:-1], full[1:]))
    letters.add(bb)
    return letters, follows


_ALPHABET_CACHE = {}


def alphabet(base: BaseGraph, max_levels=10, tree_limit=400000):
    """Letters and matching pairs seen on strips with 1, 2, ... levels, until
    both sets are unchanged for two consecutive strip sizes."""
    if base in _ALPHABET_CACHE:
        return _ALPHABET_CACHE[base]
    history = []
    for m in range(1, max_levels + 1):
        try:
            letters, follows = _collect(base, m, tree_limit)
        except CodecError:
            raise CodecError(f"alphabet did not stabilize before the enumeration limit "
                             f"(reached {m} levels)") from None
        history.append((letters, follows))
        if len(history) >= 3 and history[-1] == history[-2] == history[-3]:
            break
    else:
        raise CodecError(f"alphabet did not stabilize within {max_levels} levels")
    bb = tau_backbone(base)
    ordered = [bb] + sorted(t for t in letters if t != bb)
    idx = {t: i for i, t in enumerate(ordered)}
    fol = np.zeros((len(ordered), len(ordered)), dtype=bool)
    for a, b in follows:
        fol[idx[a], idx[b]] = True
    alph = Alphabet(base, ordered, fol, sizes_used=range(1, m + 1))
    _ALPHABET_CACHE[base] = alph
    return alph


# -------------------------------------------------------------- decoding

def check_word(word, alph: Alphabet):
    bb = alph.letters[alph.bb]
    full = [bb] + list(word) + [bb]
    for n, (a, b) in enumerate(zip(full[:-1], full[1:])):
        if a not in alph.index or b not in alph.index:
            raise CodecError(f"letter at position {n} is not in the alphabet")
        if not alph.follow(a, b):
            raise CodecError(f"matching violated between positions {n - 1} and {n}")


def decode(word, strip: StripGraph, alph: Alphabet | None = None):
    """Glue the shifted forests of ``word`` into a spanning tree of ``strip``."""
    if len(word) != strip.n_levels:
        raise CodecError("word length does not match the strip")
    if alph is None:
        alph = alphabet(strip.base)
    check_word(word, alph)
    edges = set()
    for n, tau in zip(range(strip.lo, strip.hi + 1), word):
        for l2, idx in tau.forest:
            key = (l2 + 2 * n, idx)
            if key in strip.edge_index:
                edges.add(key)
    tree = frozenset(edges)
    if not strip.is_spanning_tree(tree):
        raise CodecError("glued edge set is not a spanning tree")
    return tree
