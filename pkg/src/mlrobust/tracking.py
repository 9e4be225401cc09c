"""Critical-point trajectories as the zero set of the spacetime PL field.

Each triangle x frame-interval prism is cut into three tetrahedra.  The zero
set of a linear map R^3 -> R^2 inside a tet is a segment that enters and
leaves through two faces, so punctured faces become trajectory nodes and
tets become the links between them.  Face punctures use the same symbolic
perturbation as per-frame extraction, keyed on spacetime vertex ids
``frame * V + v``; horizontal faces therefore reproduce the per-frame CPs
exactly.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .critical_points import CriticalPoint, zero_barycentric, zero_in_simplex
from .field import TimeVaryingField

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpacetimeTet:
    vertices: Tuple[int, int, int, int]  # spacetime ids frame * V + v
    points: np.ndarray  # (4, 3) x, y, t
    vectors: np.ndarray  # (4, 2)
    prism: int
    local: int


class SpacetimeMesh:
    """All tets of a field, stored as arrays; indexing yields :class:`SpacetimeTet`."""

    def __init__(self, field: TimeVaryingField):
        if field.T < 2:
            raise ValueError("tracking needs at least two frames")
        self.field = field
        mesh = field.mesh
        V, nt = mesh.n_vertices, mesh.n_triangles
        self.V = V
        s = np.sort(mesh.triangles, axis=1)
        a, b, c = s[:, 0], s[:, 1], s[:, 2]
        # staircase: the quad over edge (u < w) is cut along u@t0 -- w@t1 on both sides
        per = np.stack(
            [
                np.stack([a, b, c, V + c], 1),
                np.stack([a, b, V + b, V + c], 1),
                np.stack([a, V + a, V + b, V + c], 1),
            ],
            axis=1,
        )  # (nt, 3, 4) for one interval, offsets relative to frame k
        T = field.T
        offs = (np.arange(T - 1) * V)[:, None, None, None]
        self.tets = (per[None] + offs).reshape(-1, 4)
        self.prism = np.repeat(np.arange((T - 1) * nt), 3)
        self.local = np.tile(np.arange(3), (T - 1) * nt)
        self._points: Optional[np.ndarray] = None
        self._vectors: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.tets)

    def __getitem__(self, i: int) -> SpacetimeTet:
        ids = self.tets[i]
        return SpacetimeTet(tuple(int(x) for x in ids), self.points[ids], self.vectors[ids], int(self.prism[i]), int(self.local[i]))

    def __iter__(self) -> Iterator[SpacetimeTet]:
        return (self[i] for i in range(len(self)))

    @property
    def points(self) -> np.ndarray:
        if self._points is None:
            f = self.field
            xy = np.tile(f.mesh.vertices, (f.T, 1))
            t = np.repeat(f.times, self.V)
            self._points = np.column_stack([xy, t])
        return self._points

    @property
    def vectors(self) -> np.ndarray:
        if self._vectors is None:
            self._vectors = np.concatenate([fr.vectors for fr in self.field.frames])
        return self._vectors

    def faces(self) -> Tuple[np.ndarray, np.ndarray]:
        """Unique faces ``(F, 3)`` (sorted ids) and the ``(M, 4)`` face ids of each tet."""
        t = np.sort(self.tets, axis=1)
        tri = np.stack([t[:, [1, 2, 3]], t[:, [0, 2, 3]], t[:, [0, 1, 3]], t[:, [0, 1, 2]]], axis=1).reshape(-1, 3)
        uniq, inv = np.unique(tri, axis=0, return_inverse=True)
        return uniq, inv.reshape(-1, 4)


def build_spacetime_mesh(field: TimeVaryingField) -> SpacetimeMesh:
    return SpacetimeMesh(field)


@dataclass
class TrajectoryNode:
    index: int
    x: float
    y: float
    t: float
    frame: Optional[int] = None  # set for nodes lying on a frame slice
    degree: Optional[int] = None
    minR: Optional[float] = None
    cp_id: Optional[int] = None
    anchor: Optional[int] = None  # index of the slice node an interior node inherits from

    @property
    def annotated(self) -> bool:
        return self.frame is not None and self.minR is not None

    def to_dict(self) -> dict:
        d = {"index": self.index, "x": self.x, "y": self.y, "t": self.t}
        if self.frame is not None:
            d["frame"] = self.frame
        if self.cp_id is not None:
            d["cp_id"] = self.cp_id
        if self.degree is not None:
            d["degree"] = self.degree
        if self.minR is not None:
            d["minR"] = "inf" if math.isinf(self.minR) else self.minR
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrajectoryNode":
        m = d.get("minR")
        return cls(int(d["index"]), float(d["x"]), float(d["y"]), float(d["t"]), d.get("frame"), d.get("degree"), None if m is None else float(m), d.get("cp_id"))


@dataclass
class Trajectory:
    id: int
    nodes: List[TrajectoryNode]
    provenance: object = "original"
    closed: bool = False

    @property
    def annotated_nodes(self) -> List[TrajectoryNode]:
        return [n for n in self.nodes if n.annotated]

    @property
    def times(self) -> np.ndarray:
        return np.array([n.t for n in self.nodes])

    def to_dict(self) -> dict:
        return {"id": self.id, "provenance": self.provenance, "closed": self.closed, "nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: dict) -> "Trajectory":
        return cls(int(d["id"]), [TrajectoryNode.from_dict(n) for n in d["nodes"]], d.get("provenance", "original"), bool(d.get("closed", False)))


def _link_faces(n_faces: int, tet_faces: np.ndarray, punct: np.ndarray) -> List[List[int]]:
    adj: List[List[int]] = [[] for _ in range(n_faces)]
    hit = punct[tet_faces]
    count = hit.sum(axis=1)
    odd = np.flatnonzero((count != 0) & (count != 2))
    if len(odd):
        log.warning("%d tet(s) with %s punctured faces; pairing in face-id order", len(odd), sorted(set(count[odd].tolist())))
    for i in np.flatnonzero(count >= 2):
        fs = sorted(tet_faces[i][hit[i]].tolist())
        for p in range(0, len(fs) - 1, 2):
            adj[fs[p]].append(fs[p + 1])
            adj[fs[p + 1]].append(fs[p])
    return adj


def extract_trajectories(st: SpacetimeMesh) -> List[Trajectory]:
    """Stitch punctured faces into polylines; loops are allowed, junctions split."""
    faces, tet_faces = st.faces()
    vals = st.vectors[faces]
    punct, _ = zero_in_simplex(vals, faces)
    pidx = np.flatnonzero(punct)
    lam = zero_barycentric(vals[pidx])
    pos = np.einsum("ki,kij->kj", lam, st.points[faces[pidx]])
    frame_of = faces[pidx] // st.V
    horizontal = (frame_of[:, 0] == frame_of[:, 1]) & (frame_of[:, 1] == frame_of[:, 2])
    times = st.field.times
    pos[horizontal, 2] = times[frame_of[horizontal, 0]]

    where = {int(f): k for k, f in enumerate(pidx)}
    adj_full = _link_faces(len(faces), tet_faces, punct)
    adj = {where[f]: sorted(where[g] for g in adj_full[f]) for f in pidx.tolist()}
    key = lambda k: (pos[k, 2], pos[k, 0], pos[k, 1], k)  # noqa: E731

    # split at junctions: a node with >= 3 links ends every branch through it
    junction = {k for k, nb in adj.items() if len(nb) >= 3}
    seen_edges = set()
    paths: List[Tuple[List[int], bool]] = []

    def walk(start: int, nxt: int) -> List[int]:
        path = [start]
        prev, cur = start, nxt
        seen_edges.add((min(prev, cur), max(prev, cur)))
        while True:
            path.append(cur)
            if cur in junction or cur == start:
                return path
            cands = [n for n in adj[cur] if (min(cur, n), max(cur, n)) not in seen_edges]
            if not cands:
                return path
            prev, cur = cur, min(cands, key=key)
            seen_edges.add((min(prev, cur), max(prev, cur)))

    ends = sorted([k for k, nb in adj.items() if len(nb) != 2], key=key)
    for k in ends:
        if not adj[k]:
            paths.append(([k], False))
            continue
        for n in sorted(adj[k], key=key):
            if (min(k, n), max(k, n)) not in seen_edges:
                p = walk(k, n)
                paths.append((p, False))
    for k in sorted(adj, key=key):
        for n in sorted(adj[k], key=key):
            if (min(k, n), max(k, n)) not in seen_edges:
                p = walk(k, n)
                closed = p[-1] == p[0]
                paths.append((p[:-1] if closed else p, closed))

    out: List[Trajectory] = []
    paths.sort(key=lambda pc: key(pc[0][0]) + (len(pc[0]),))
    for tid, (p, closed) in enumerate(paths):
        nodes = []
        for i, k in enumerate(p):
            fr = int(frame_of[k, 0]) if horizontal[k] else None
            nodes.append(TrajectoryNode(i, float(pos[k, 0]), float(pos[k, 1]), float(pos[k, 2]), fr))
        out.append(Trajectory(tid, nodes, "original", closed))
    return out


def track(field: TimeVaryingField) -> List[Trajectory]:
    return extract_trajectories(build_spacetime_mesh(field))


def slice_annotate(
    traj: Trajectory,
    cps_by_frame: Sequence[Sequence[CriticalPoint]],
    minR: Mapping[Tuple[int, int], float],
    L: float,
) -> Trajectory:
    """Attach degree and minR from the matching frame CP to every slice node.

    ``minR`` maps ``(frame, cp_id)`` to the CP's minimum multilevel
    robustness.  Interior nodes copy the annotation of the nearer (in time)
    of the surrounding annotated nodes, the earlier one on ties.
    """
    tol = 1e-6 * L
    nodes = [replace(n, degree=None, minR=None, cp_id=None, anchor=None) for n in traj.nodes]
    for n in nodes:
        if n.frame is None:
            continue
        cps = cps_by_frame[n.frame]
        if not cps:
            log.warning("trajectory %d: no CPs in frame %d", traj.id, n.frame)
            continue
        d = [math.hypot(cp.position[0] - n.x, cp.position[1] - n.y) for cp in cps]
        j = int(np.argmin(d))
        if d[j] > tol:
            log.warning("trajectory %d node %d: no CP within tolerance in frame %d", traj.id, n.index, n.frame)
            continue
        cp = cps[j]
        n.cp_id, n.degree = cp.id, cp.degree
        n.minR = minR.get((n.frame, cp.id))
        n.anchor = n.index
    _assign_anchors(nodes)
    by_index = {n.index: n for n in nodes}
    for n in nodes:
        if n.frame is None and n.anchor is not None:
            src = by_index[n.anchor]
            n.degree, n.minR, n.cp_id = src.degree, src.minR, src.cp_id
    return Trajectory(traj.id, nodes, traj.provenance, traj.closed)


def write_trajectories_json(path, trajs: Sequence[Trajectory]) -> None:
    with open(path, "w") as fh:
        json.dump([t.to_dict() for t in trajs], fh, indent=1)
        fh.write("\n")


def read_trajectories_json(path) -> List[Trajectory]:
    with open(path) as fh:
        data = json.load(fh)
    out = [Trajectory.from_dict(d) for d in data]
    for t in out:
        _restore_anchors(t)
    return out


def _restore_anchors(traj: Trajectory) -> None:
    for n in traj.nodes:
        n.anchor = n.index if n.frame is not None and n.degree is not None else None
    _assign_anchors(traj.nodes)


def _assign_anchors(nodes: List[TrajectoryNode]) -> None:
    """Point each unanchored node at the nearer (in time) anchored neighbour; ties go backwards."""
    marked = [i for i, n in enumerate(nodes) if n.anchor is not None]
    if not marked:
        return
    for i, n in enumerate(nodes):
        if n.anchor is not None:
            continue
        k = int(np.searchsorted(marked, i))
        prev = nodes[marked[k - 1]] if k > 0 else None
        nxt = nodes[marked[k]] if k < len(marked) else None
        if prev is None or (nxt is not None and abs(nxt.t - n.t) < abs(prev.t - n.t)):
            n.anchor = nxt.anchor
        else:
            n.anchor = prev.anchor
