"""Base graphs, finite strips, backbone trees and reflections.

Vertices of a strip are pairs ``(level, v)``; internally they are numbered
``(level - lo) * |V0| + v``.  Edges are keyed by ``(level2, idx)`` where
``level2`` is twice the edge level: an even ``level2 = 2n`` denotes the copy at
level ``n`` of the base edge ``idx`` and an odd ``level2 = 2n + 1`` denotes the
horizontal edge joining ``(n, idx)`` and ``(n + 1, idx)``.  Keeping doubled
levels as integers keeps half-integer levels exact.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np


class GraphError(ValueError):
    """Raised for malformed base graphs, weights or strip extents."""


class OrientedEdge(NamedTuple):
    key: tuple
    tail: int
    head: int


def _find(parent, a):
    while parent[a] != a:
        parent[a] = parent[parent[a]]
        a = parent[a]
    return a


def is_spanning_tree_edges(n_vertices: int, pairs: Iterable[tuple]) -> bool:
    """Union-find check that ``pairs`` form a spanning tree on ``n_vertices``."""
    pairs = list(pairs)
    if len(pairs) != n_vertices - 1:
        return False
    parent = list(range(n_vertices))
    for u, v in pairs:
        ru, rv = _find(parent, u), _find(parent, v)
        if ru == rv:
            return False
        parent[ru] = rv
    return True


@dataclass(frozen=True)
class BaseGraph:
    """Finite base graph G0 with a pin vertex and a spanning tree S.

    Edges are stored as sorted pairs ``(u, v)`` with ``u < v``; ``base_tree``
    holds indices into ``edges``.
    """

    n_vertices: int
    edges: tuple
    pin: int
    base_tree: tuple

    def __post_init__(self):
        if self.n_vertices < 1:
            raise GraphError("base graph needs at least one vertex")
        norm = []
        for e in self.edges:
            u, v = int(e[0]), int(e[1])
            if u == v or not (0 <= u < self.n_vertices and 0 <= v < self.n_vertices):
                raise GraphError(f"bad base edge {e}")
            norm.append((min(u, v), max(u, v)))
        if len(set(norm)) != len(norm):
            raise GraphError("duplicate base edges")
        object.__setattr__(self, "edges", tuple(norm))
        object.__setattr__(self, "base_tree", tuple(sorted(int(i) for i in self.base_tree)))
        if not 0 <= self.pin < self.n_vertices:
            raise GraphError("pin is not a vertex of the base graph")
        if not is_spanning_tree_edges(self.n_vertices, norm):
            # connectivity check first, so the error names the real problem
            parent = list(range(self.n_vertices))
            for u, v in norm:
                parent[_find(parent, u)] = _find(parent, v)
            if len({_find(parent, a) for a in range(self.n_vertices)}) != 1:
                raise GraphError("base graph is disconnected")
        if any(not 0 <= i < len(norm) for i in self.base_tree):
            raise GraphError("base tree references unknown edge")
        if not is_spanning_tree_edges(self.n_vertices, [norm[i] for i in self.base_tree]):
            raise GraphError("base tree S is not a spanning tree of G0")

    @classmethod
    def from_edges(cls, n_vertices, edges, pin=0, base_tree_edges=None):
        """Build from explicit edge pairs; ``base_tree_edges`` defaults to a BFS tree."""
        edges = [tuple(sorted((int(a), int(b)))) for a, b in edges]
        if base_tree_edges is None:
            idx = _bfs_tree(n_vertices, edges, pin)
        else:
            lookup = {e: i for i, e in enumerate(edges)}
            try:
                idx = [lookup[tuple(sorted((int(a), int(b))))] for a, b in base_tree_edges]
            except KeyError as exc:
                raise GraphError(f"base tree edge {exc} is not in the edge list") from None
        return cls(n_vertices, tuple(edges), int(pin), tuple(idx))

    @property
    def tree_edges(self):
        return [self.edges[i] for i in self.base_tree]


def _bfs_tree(n, edges, root):
    adj = [[] for _ in range(n)]
    for i, (u, v) in enumerate(edges):
        adj[u].append((v, i))
        adj[v].append((u, i))
    seen = {root}
    out = []
    queue = deque([root])
    while queue:
        a = queue.popleft()
        for b, i in adj[a]:
            if b not in seen:
                seen.add(b)
                out.append(i)
                queue.append(b)
    if len(seen) != n:
        raise GraphError("base graph is disconnected")
    return out


def single_vertex():
    return BaseGraph(1, (), 0, ())


def complete_k2():
    return BaseGraph(2, ((0, 1),), 0, (0,))


@dataclass(frozen=True)
class Weights:
    """Translation invariant weights: one per base edge, one per base vertex, and eps."""

    vertical: tuple
    horizontal: tuple
    epsilon: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "vertical", tuple(float(b) for b in self.vertical))
        object.__setattr__(self, "horizontal", tuple(float(b) for b in self.horizontal))
        for name, vals in (("vertical", self.vertical), ("horizontal", self.horizontal)):
            for i, b in enumerate(vals):
                if not np.isfinite(b) or b <= 0:
                    raise GraphError(f"weights.{name}[{i}] must be positive, got {b}")
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise GraphError(f"weights.epsilon must be positive, got {self.epsilon}")
        object.__setattr__(self, "epsilon", float(self.epsilon))

    @classmethod
    def uniform(cls, base: BaseGraph, beta=1.0, epsilon=1.0):
        return cls((beta,) * len(base.edges), (beta,) * base.n_vertices, epsilon)


class StripGraph:
    """The finite strip {lo..hi} x G0 with translation invariant weights.

    Immutable after construction.  Edge ``k`` has endpoints ``tail[k]`` and
    ``head[k]`` in the bookkeeping orientation (lower level to higher level for
    horizontal edges, lower base id to higher base id for vertical ones).
    """

    def __init__(self, base: BaseGraph, lo: int, hi: int, weights: Weights):
        lo, hi = int(lo), int(hi)
        if lo > 0 or hi < 0:
            raise GraphError(f"need lo <= 0 <= hi, got lo={lo}, hi={hi}")
        if len(weights.vertical) != len(base.edges) or len(weights.horizontal) != base.n_vertices:
            raise GraphError("weights do not match the base graph")
        self.base = base
        self.lo = lo
        self.hi = hi
        self.weights = weights
        self.n0 = base.n_vertices
        self.n_levels = hi - lo + 1
        self.n_vertices = self.n_levels * self.n0

        keys, tails, heads, betas = [], [], [], []
        for n in range(lo, hi + 1):
            for i, (u, v) in enumerate(base.edges):
                keys.append((2 * n, i))
                tails.append(self.vid(n, u))
                heads.append(self.vid(n, v))
                betas.append(weights.vertical[i])
            if n < hi:
                for v in range(self.n0):
                    keys.append((2 * n + 1, v))
                    tails.append(self.vid(n, v))
                    heads.append(self.vid(n + 1, v))
                    betas.append(weights.horizontal[v])
        self.edge_keys = tuple(keys)
        self.edge_index = {k: i for i, k in enumerate(keys)}
        self.tail = np.array(tails, dtype=np.int64)
        self.head = np.array(heads, dtype=np.int64)
        self.beta = np.array(betas, dtype=float)
        self.n_edges = len(keys)
        for arr in (self.tail, self.head, self.beta):
            arr.flags.writeable = False
        self.vertex_level = np.repeat(np.arange(lo, hi + 1), self.n0)
        self.vertex_base = np.tile(np.arange(self.n0), self.n_levels)
        self.vertex_level.flags.writeable = False
        self.vertex_base.flags.writeable = False
        self.pin_vertex = self.vid(0, base.pin)
        self.root = self.vid(lo, base.pin)
        self.top = self.vid(hi, base.pin)
        self._adj = [[] for _ in range(self.n_vertices)]
        for k in range(self.n_edges):
            self._adj[tails[k]].append((heads[k], k))
            self._adj[heads[k]].append((tails[k], k))
        self._backbone = None

    def __repr__(self):
        return (f"StripGraph(|V0|={self.n0}, |E0|={len(self.base.edges)}, "
                f"lo={self.lo}, hi={self.hi})")

    def vid(self, level, v):
        if not (self.lo <= level <= self.hi and 0 <= v < self.n0):
            raise GraphError(f"vertex ({level}, {v}) not in strip")
        return (level - self.lo) * self.n0 + v

    def vertex(self, i):
        """Inverse of ``vid``."""
        if not 0 <= i < self.n_vertices:
            raise GraphError(f"vertex index {i} not in strip")
        return int(self.vertex_level[i]), int(self.vertex_base[i])

    def neighbors(self, i):
        return self._adj[i]

    def edge_endpoints(self, key):
        k = self.edge_index[key]
        return int(self.tail[k]), int(self.head[k])

    def is_horizontal(self, key):
        return key[0] % 2 != 0

    def edge_level(self, key):
        """Edge level as a float (n or n + 1/2)."""
        return key[0] / 2.0

    def backbone_tree(self):
        """T^bb: a copy of S on every level plus the pin edges p_{n+1/2}."""
        if self._backbone is None:
            keys = []
            for n in range(self.lo, self.hi + 1):
                keys.extend((2 * n, i) for i in self.base.base_tree)
                if n < self.hi:
                    keys.append((2 * n + 1, self.base.pin))
            self._backbone = frozenset(keys)
        return self._backbone

    def tree_pairs(self, tree):
        return [self.edge_endpoints(k) for k in tree]

    def is_spanning_tree(self, tree):
        try:
            pairs = self.tree_pairs(tree)
        except KeyError:
            return False
        return is_spanning_tree_edges(self.n_vertices, pairs)

    def tree_adjacency(self, tree):
        adj = [[] for _ in range(self.n_vertices)]
        for key in tree:
            a, b = self.edge_endpoints(key)
            adj[a].append((b, key))
            adj[b].append((a, key))
        return adj

    def tree_parents(self, tree, root=None):
        """BFS parent pointers of ``tree`` rooted at ``root`` (default r=(lo,p)).

        Returns (parent vertex array, parent edge key list, depth array).
        """
        root = self.root if root is None else root
        adj = self.tree_adjacency(tree)
        parent = np.full(self.n_vertices, -1, dtype=np.int64)
        pedge = [None] * self.n_vertices
        depth = np.full(self.n_vertices, -1, dtype=np.int64)
        depth[root] = 0
        queue = deque([root])
        while queue:
            a = queue.popleft()
            for b, key in adj[a]:
                if depth[b] < 0:
                    depth[b] = depth[a] + 1
                    parent[b] = a
                    pedge[b] = key
                    queue.append(b)
        if (depth < 0).any():
            raise GraphError("edge set does not span the strip")
        return parent, pedge, depth

    def tree_orientation(self, tree):
        """Map edge key -> +1 if the tree orientation (away from r) agrees with
        the bookkeeping orientation, else -1."""
        parent, pedge, _ = self.tree_parents(tree)
        out = {}
        for b in range(self.n_vertices):
            key = pedge[b]
            if key is not None:
                out[key] = 1 if self.edge_endpoints(key)[1] == b else -1
        return out

    def tree_path(self, tree, i, j):
        """Unique path from i to j in ``tree`` as a list of OrientedEdge."""
        for a in (i, j):
            if not 0 <= a < self.n_vertices:
                raise GraphError(f"vertex index {a} not in strip")
        if i == j:
            return []
        parent, pedge, depth = self.tree_parents(tree, root=i)
        path = []
        b = j
        while b != i:
            a = int(parent[b])
            path.append(OrientedEdge(pedge[b], a, b))
            b = a
        path.reverse()
        return path

    def backbone(self, tree):
        """B(T): the tree path from r=(lo,p) to (hi,p)."""
        return self.tree_path(tree, self.root, self.top)

    def reflect(self, obj):
        """Reflect an edge key or an edge set through level 0.

        Requires the reflected level to lie inside the strip.
        """
        if isinstance(obj, tuple) and len(obj) == 2 and isinstance(obj[0], (int, np.integer)):
            l2, idx = obj
            key = (-int(l2), int(idx))
            if key not in self.edge_index:
                raise GraphError(f"reflected edge {key} lies outside the strip")
            return key
        return frozenset(self.reflect(k) for k in obj)


def build_strip(base: BaseGraph, lo: int, hi: int, weights: Weights | None = None) -> StripGraph:
    if weights is None:
        weights = Weights.uniform(base)
    return StripGraph(base, lo, hi, weights)


def backbone_tree(strip: StripGraph):
    return strip.backbone_tree()


def tree_path(strip: StripGraph, tree, i, j):
    return strip.tree_path(tree, i, j)


def reflect(strip: StripGraph, obj):
    return strip.reflect(obj)


def load_base_config(source):
    """Read a base graph and weights from a JSON file path or a dict.

    Expected keys: ``n_vertices``, ``edges``, ``base_tree``, ``pin``,
    ``beta_vertical`` (list or scalar), ``beta_horizontal`` (list or scalar),
    ``epsilon``.
    """
    if isinstance(source, dict):
        cfg = source
    else:
        with open(source) as fh:
            cfg = json.load(fh)
    try:
        n = int(cfg["n_vertices"])
        edges = [tuple(e) for e in cfg.get("edges", [])]
        base = BaseGraph.from_edges(n, edges, pin=int(cfg.get("pin", 0)),
                                    base_tree_edges=cfg.get("base_tree"))
    except KeyError as exc:
        raise GraphError(f"missing field {exc}") from None
    bv = cfg.get("beta_vertical", 1.0)
    bh = cfg.get("beta_horizontal", 1.0)
    if np.isscalar(bv):
        bv = [bv] * len(base.edges)
    if np.isscalar(bh):
        bh = [bh] * n
    weights = Weights(tuple(bv), tuple(bh), float(cfg.get("epsilon", 1.0)))
    return base, weights


def base_config_dict(base: BaseGraph, weights: Weights):
    return {
        "n_vertices": base.n_vertices,
        "edges": [list(e) for e in base.edges],
        "base_tree": [list(base.edges[i]) for i in base.base_tree],
        "pin": base.pin,
        "beta_vertical": list(weights.vertical),
        "beta_horizontal": list(weights.horizontal),
        "epsilon": weights.epsilon,
    }
