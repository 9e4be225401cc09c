"""Augmented sublevel-set merge trees of the vector magnitude and classic robustness.

Critical points enter the vertex graph as Steiner vertices with magnitude 0,
joined to the three corners of their triangle.  Vertices are swept in
``(f0, vertex id)`` order; a union-find over the edges records every merge of
two components as an internal node whose degree is the sum of its children.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .critical_points import CriticalPoint
from .field import TriangleMesh

try:
    from numba import njit
except ImportError:  # pragma: no cover - pure-python fallback
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn

UNBOUNDED = math.inf


@njit(cache=True)
def _sweep(n, lo, hi, f0, minima, vdeg, vcp):
    """Union-find sweep over edges already sorted by the rank of their upper vertex.

    Returns per-node arrays (birth, degree, parent, n_cps, leaf_vertex) and the
    node count.  Leaves are created for ``minima`` in the given order.
    """
    max_nodes = 2 * len(minima) + 1
    birth = np.empty(max_nodes, np.float64)
    degree = np.zeros(max_nodes, np.int64)
    parent = np.full(max_nodes, -1, np.int64)
    ncp = np.zeros(max_nodes, np.int64)
    leaf_vertex = np.full(max_nodes, -1, np.int64)

    uf = np.full(n, -1, np.int64)
    size = np.ones(n, np.int64)
    top = np.full(n, -1, np.int64)
    nn = 0
    for k in range(len(minima)):
        v = minima[k]
        uf[v] = v
        birth[nn] = f0[v]
        degree[nn] = vdeg[v]
        ncp[nn] = vcp[v]
        leaf_vertex[nn] = v
        top[v] = nn
        nn += 1

    for e in range(len(lo)):
        a = lo[e]
        b = hi[e]
        ra = a
        while uf[ra] != ra:
            uf[ra] = uf[uf[ra]]
            ra = uf[ra]
        if uf[b] == -1:
            # first lower neighbour of b: b extends that component
            uf[b] = ra
            size[ra] += 1
            continue
        rb = b
        while uf[rb] != rb:
            uf[rb] = uf[uf[rb]]
            rb = uf[rb]
        if ra == rb:
            continue
        m = nn
        nn += 1
        na, nb = top[ra], top[rb]
        birth[m] = f0[b]
        degree[m] = degree[na] + degree[nb]
        ncp[m] = ncp[na] + ncp[nb]
        parent[na] = m
        parent[nb] = m
        if size[ra] < size[rb]:
            ra, rb = rb, ra
        uf[rb] = ra
        size[ra] += size[rb]
        top[ra] = m
    return birth[:nn], degree[:nn], parent[:nn], ncp[:nn], leaf_vertex[:nn]


def warm_up() -> None:
    """Load (or compile) the sweep kernel so later timings exclude it."""
    z = np.zeros(1, np.int64)
    _sweep(1, z[:0], z[:0], np.zeros(1), z, z, z)


@dataclass
class AugmentedMergeTree:
    """Merge tree stored as flat per-node arrays.

    ``leaf_of`` maps CP id to its leaf node.  Leaves with no CP are positive
    local minima of the magnitude and carry degree 0.
    """

    birth: np.ndarray
    degree: np.ndarray
    parent: np.ndarray
    n_cps: np.ndarray
    leaf_of: Dict[int, int]
    leaf_cp: Dict[int, int] = field(default_factory=dict)
    _children: Optional[List[List[int]]] = field(default=None, repr=False)

    def __post_init__(self):
        self.leaf_cp = {node: cp for cp, node in self.leaf_of.items()}

    @property
    def n_nodes(self) -> int:
        return len(self.birth)

    @property
    def roots(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(self.parent < 0)]

    @property
    def root(self) -> int:
        r = self.roots
        if len(r) != 1:
            raise ValueError(f"tree has {len(r)} roots")
        return r[0]

    @property
    def children(self) -> List[List[int]]:
        if self._children is None:
            ch: List[List[int]] = [[] for _ in range(self.n_nodes)]
            for i, p in enumerate(self.parent):
                if p >= 0:
                    ch[p].append(i)
            self._children = ch
        return self._children

    def members(self, node: int) -> List[int]:
        """Sorted CP ids in the subtree of ``node``."""
        out, stack = [], [node]
        while stack:
            k = stack.pop()
            if k in self.leaf_cp:
                out.append(self.leaf_cp[k])
            stack.extend(self.children[k])
        return sorted(out)

    def ancestors(self, node: int) -> List[int]:
        """``node`` followed by its ancestors up to the root."""
        out = [node]
        while self.parent[out[-1]] >= 0:
            out.append(int(self.parent[out[-1]]))
        return out

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {
                    "id": i,
                    "birth": float(self.birth[i]),
                    "degree": int(self.degree[i]),
                    "parent": int(self.parent[i]) if self.parent[i] >= 0 else None,
                    "members": self.members(i),
                }
                for i in range(self.n_nodes)
            ],
            "leaf_of": {str(k): v for k, v in sorted(self.leaf_of.items())},
        }

    def dump_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")


class GraphOrder:
    """Vertex graph of a mesh plus Steiner CP vertices, presorted by magnitude.

    The global ``(f0, id)`` order is computed once; trees of any sub-domain
    reuse it by masking edges, so restricted trees cost only the sweep.
    """

    def __init__(self, mesh: TriangleMesh, f0: np.ndarray, cps: Sequence[CriticalPoint]):
        V = mesh.n_vertices
        self.V = V
        self.cps = list(cps)
        n = V + len(self.cps)
        self.n = n
        f = np.zeros(n)
        f[:V] = f0
        self.f0 = f
        self.vdeg = np.zeros(n, np.int64)
        self.vcp = np.zeros(n, np.int64)
        for i, cp in enumerate(self.cps):
            self.vdeg[V + i] = cp.degree
            self.vcp[V + i] = 1
        # Steiner vertices precede mesh vertices of equal magnitude so every CP is a leaf
        order = np.lexsort((np.arange(n), np.arange(n) < V, f))
        rank = np.empty(n, np.int64)
        rank[order] = np.arange(n)
        self.rank = rank

        # triangle -> mesh edge ids, so sub-domain edge sets are a cheap mask
        tri = mesh.triangles
        e = mesh.edges
        key = e[:, 0] * V + e[:, 1]
        pairs = np.stack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]], axis=1)
        pairs.sort(axis=2)
        self.tri_edges = np.searchsorted(key, pairs[..., 0] * V + pairs[..., 1])
        cp_tri = np.array([cp.triangle for cp in self.cps], dtype=np.int64)
        self.cp_tri = cp_tri
        steiner = np.column_stack([np.repeat(V + np.arange(len(cp_tri)), 3), tri[cp_tri].ravel()]) if len(cp_tri) else np.zeros((0, 2), np.int64)
        all_e = np.concatenate([e, steiner]).astype(np.int64)
        # edge k belongs to mesh edge k (< E) or to Steiner vertex (k - E) // 3
        a, b = all_e[:, 0], all_e[:, 1]
        up = rank[a] > rank[b]
        hi = np.where(up, a, b)
        lo = np.where(up, b, a)
        eorder = np.lexsort((rank[lo], rank[hi]))
        self.E = len(e)
        self.edge_lo = lo[eorder]
        self.edge_hi = hi[eorder]
        self.edge_src = eorder
        self.n_triangles = mesh.n_triangles

    def tree(self, tri_mask: Optional[np.ndarray] = None, cp_mask: Optional[np.ndarray] = None) -> AugmentedMergeTree:
        """Merge tree of the sub-domain made of ``tri_mask`` triangles and ``cp_mask`` CPs."""
        E = self.E
        ncp = len(self.cps)
        if tri_mask is None:
            tri_mask = np.ones(self.n_triangles, bool)
        if cp_mask is None:
            cp_mask = tri_mask[self.cp_tri] if ncp else np.zeros(0, bool)
        emask = np.zeros(E + 3 * ncp, bool)
        emask[self.tri_edges[tri_mask].ravel()] = True
        if ncp:
            emask[E:] = np.repeat(cp_mask, 3)
        keep = emask[self.edge_src]
        lo, hi = self.edge_lo[keep], self.edge_hi[keep]
        active = np.zeros(self.n, bool)
        active[lo] = True
        active[hi] = True
        has_lower = np.zeros(self.n, bool)
        has_lower[hi] = True
        minima = np.flatnonzero(active & ~has_lower)
        minima = minima[np.argsort(self.rank[minima])]
        birth, deg, parent, n_cps, leaf_vertex = _sweep(self.n, lo, hi, self.f0, minima, self.vdeg, self.vcp)
        leaf_of = {}
        for node in np.flatnonzero(leaf_vertex >= self.V):
            leaf_of[self.cps[leaf_vertex[node] - self.V].id] = int(node)
        return AugmentedMergeTree(birth, deg, parent, n_cps, leaf_of)


def build_merge_tree(mesh: TriangleMesh, f0: np.ndarray, cps: Sequence[CriticalPoint]) -> AugmentedMergeTree:
    """Augmented merge tree of the magnitude ``f0`` over the whole mesh."""
    return GraphOrder(mesh, np.asarray(f0, dtype=float), cps).tree()


def classic_robustness(tree: AugmentedMergeTree, cp_id: int) -> float:
    """Birth value of the lowest ancestor with degree 0 that holds at least one CP.

    Returns ``UNBOUNDED`` when no such ancestor exists.
    """
    try:
        node = tree.leaf_of[cp_id]
    except KeyError:
        raise KeyError(f"unknown cp_id {cp_id}") from None
    parent, degree, n_cps = tree.parent, tree.degree, tree.n_cps
    while node >= 0:
        if degree[node] == 0 and n_cps[node] > 0:
            return float(tree.birth[node])
        node = parent[node]
    return UNBOUNDED
