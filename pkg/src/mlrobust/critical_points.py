"""Zeros of piecewise-linear vector fields and their Poincaré indices.

Degenerate configurations (a vertex value exactly on the line through the
origin and another vertex value, or an exactly-zero vertex vector) are
resolved by simulation of simplicity: vertex ``i`` is displaced by
``(eps**(2**(2i)), eps**(2**(2i+1)))`` for an infinitesimal ``eps``.  Signs
depend only on the values and on global vertex ids, so the same zero is
reported exactly once and identically on every run.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .field import FieldFrame, TriangleMesh, fmt, interpolate

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class CriticalPoint:
    id: int
    frame_index: int
    position: Tuple[float, float]
    triangle: int
    degree: int
    barycentric: Tuple[float, float, float]


def cross2(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]


def _sos_sign_ordered(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Perturbed sign of cross(p, q) where p belongs to the lower vertex id."""
    c = cross2(p, q)
    return np.select(
        [c != 0, q[..., 1] != 0, q[..., 0] != 0, p[..., 1] != 0],
        [np.sign(c), np.sign(q[..., 1]), -np.sign(q[..., 0]), -np.sign(p[..., 1])],
        default=-1.0,
    ).astype(np.int8)


def sos_cross_sign(va: np.ndarray, vb: np.ndarray, ia: np.ndarray, ib: np.ndarray) -> np.ndarray:
    """Sign of cross(va, vb) in {-1, +1} under the vertex-id perturbation.

    Antisymmetric: swapping the two arguments flips the result.
    """
    ia = np.asarray(ia)
    ib = np.asarray(ib)
    swap = ia > ib
    lo = np.where(swap[..., None], vb, va)
    hi = np.where(swap[..., None], va, vb)
    s = _sos_sign_ordered(lo, hi)
    return np.where(swap, -s, s).astype(np.int8)


def zero_in_simplex(values: np.ndarray, ids: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Test which 2-simplices contain a zero of the linear interpolant.

    ``values`` is ``(M, 3, 2)`` vertex vectors, ``ids`` the ``(M, 3)`` global
    vertex ids.  Returns ``(inside, orientation)`` where ``orientation`` is the
    common edge sign (+1/-1) for inside simplices and 0 elsewhere.
    """
    s01 = sos_cross_sign(values[:, 0], values[:, 1], ids[:, 0], ids[:, 1])
    s12 = sos_cross_sign(values[:, 1], values[:, 2], ids[:, 1], ids[:, 2])
    s20 = sos_cross_sign(values[:, 2], values[:, 0], ids[:, 2], ids[:, 0])
    inside = (s01 == s12) & (s12 == s20)
    return inside, np.where(inside, s01, 0).astype(np.int8)


def zero_barycentric(values: np.ndarray) -> np.ndarray:
    """Barycentric coordinates of the zero of each linear simplex, clamped to [0, 1]."""
    w = np.stack(
        [cross2(values[:, 1], values[:, 2]), cross2(values[:, 2], values[:, 0]), cross2(values[:, 0], values[:, 1])],
        axis=1,
    )
    tot = w.sum(axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        lam = w / tot
    bad = ~np.isfinite(lam).all(axis=1)
    lam[bad] = 1.0 / 3.0
    lam = np.clip(lam, 0.0, 1.0)
    return lam / lam.sum(axis=1, keepdims=True)


def _winding(values: np.ndarray, ids: np.ndarray) -> float:
    """Total signed angle / 2pi of the linear path through ``values`` (closed)."""
    total = 0.0
    n = len(values)
    for k in range(n):
        a, b = values[k], values[(k + 1) % n]
        c = float(a[0] * b[1] - a[1] * b[0])
        d = float(a[0] * b[0] + a[1] * b[1])
        if c == 0.0 and d < 0.0:
            s = sos_cross_sign(a[None], b[None], np.array([ids[k]]), np.array([ids[(k + 1) % n]]))[0]
            total += float(s) * math.pi
        else:
            total += math.atan2(c, d)
    return total / TWO_PI


def degree(cp: CriticalPoint, frame: FieldFrame, mesh: TriangleMesh) -> int:
    """Winding number of the field along the counterclockwise boundary of the CP's triangle."""
    tri = mesh.triangles[cp.triangle]
    vals = frame.vectors[tri]
    if not (np.hypot(vals[:, 0], vals[:, 1]) > 0).all():
        # exact zero at a corner: the winding angle is undefined, the perturbed orientation is not
        _, orient = zero_in_simplex(vals[None], tri[None])
        return int(orient[0])
    w = _winding(vals, tri)
    r = round(w)
    if abs(w - r) > 0.25:
        raise ValueError(f"ill-conditioned degree (winding {w:.3f})")
    return int(r)


def extract_critical_points(frame: FieldFrame, mesh: TriangleMesh) -> List[CriticalPoint]:
    """One critical point per triangle whose interpolant vanishes inside it."""
    tris = mesh.triangles
    vals = frame.vectors[tris]
    inside, _ = zero_in_simplex(vals, tris)
    idx = np.flatnonzero(inside)
    if len(idx) == 0:
        return []
    lam = zero_barycentric(vals[idx])
    pos = np.einsum("ki,kij->kj", lam, mesh.vertices[tris[idx]])
    out: List[CriticalPoint] = []
    for k, t in enumerate(idx):
        cp = CriticalPoint(len(out), frame.frame_index, (float(pos[k, 0]), float(pos[k, 1])), int(t), 0, tuple(float(x) for x in lam[k]))
        d = degree(cp, frame, mesh)
        if d == 0:
            log.warning("frame %d: discarding degree-0 zero in triangle %d", frame.frame_index, t)
            continue
        out.append(CriticalPoint(cp.id, cp.frame_index, cp.position, cp.triangle, d, cp.barycentric))
    return out


def _segment_edge_params(p: np.ndarray, q: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Parameters in (0, 1) where segment p->q crosses mesh edges."""
    e = mesh.edges
    a = mesh.vertices[e[:, 0]]
    b = mesh.vertices[e[:, 1]]
    d = q - p
    u = b - a
    den = d[0] * u[:, 1] - d[1] * u[:, 0]
    ok = den != 0
    w = a - p
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (w[:, 0] * u[:, 1] - w[:, 1] * u[:, 0]) / den
        r = (w[:, 0] * d[1] - w[:, 1] * d[0]) / den
    hit = ok & (s > 0) & (s < 1) & (r >= 0) & (r <= 1)
    return np.unique(s[hit])


def region_degree(loop, frame: FieldFrame, mesh: TriangleMesh) -> int:
    """Winding number of the field along a closed counterclockwise polyline.

    The loop is split at every mesh-edge crossing so each piece sees a linear
    field, which makes the accumulated angle exact.
    """
    pts = np.asarray(loop, dtype=float)
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    scale = float(np.hypot(frame.vectors[:, 0], frame.vectors[:, 1]).max()) or 1.0
    samples = []
    for k in range(len(pts)):
        p, q = pts[k], pts[(k + 1) % len(pts)]
        for s in np.concatenate([[0.0], _segment_edge_params(p, q, mesh)]):
            samples.append(interpolate(frame, mesh, p + s * (q - p)))
    vals = np.array(samples)
    total = 0.0
    for k in range(len(vals)):
        a, b = vals[k], vals[(k + 1) % len(vals)]
        # distance from the origin to the value segment a-b
        ab = b - a
        t = np.clip(-(a @ ab) / (ab @ ab), 0.0, 1.0) if ab @ ab > 0 else 0.0
        if np.hypot(*(a + t * ab)) <= 1e-12 * scale:
            raise ValueError("degenerate loop")
        total += math.atan2(a[0] * b[1] - a[1] * b[0], a @ b)
    w = total / TWO_PI
    r = round(w)
    if abs(w - r) > 0.25:
        raise ValueError(f"degenerate loop (winding {w:.3f})")
    return int(r)


# ------------------------------------------------------------------ CSV


CP_COLUMNS = ["frame", "cp_id", "x", "y", "triangle", "degree"]


def write_critical_points_csv(path, cps_by_frame: Sequence[Sequence[CriticalPoint]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CP_COLUMNS) + "\n")
        for cps in cps_by_frame:
            for cp in cps:
                fh.write(f"{cp.frame_index},{cp.id},{fmt(cp.position[0])},{fmt(cp.position[1])},{cp.triangle},{cp.degree}\n")


def read_critical_points_csv(path, mesh: TriangleMesh, n_frames: int) -> List[List[CriticalPoint]]:
    path = Path(path)
    out: List[List[CriticalPoint]] = [[] for _ in range(n_frames)]
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CP_COLUMNS:
            raise ValueError(f"{path}:1: expected columns {','.join(CP_COLUMNS)}")
        for line_no, row in enumerate(reader, start=2):
            try:
                k, tri = int(row["frame"]), int(row["triangle"])
                pos = (float(row["x"]), float(row["y"]))
                cp_id, deg = int(row["cp_id"]), int(row["degree"])
            except (TypeError, ValueError):
                raise ValueError(f"{path}:{line_no}: malformed row") from None
            if not (0 <= k < n_frames and 0 <= tri < mesh.n_triangles):
                raise ValueError(f"{path}:{line_no}: index out of range")
            v = mesh.vertices[mesh.triangles[tri]]
            lam = np.linalg.solve(np.vstack([v.T, np.ones(3)]), np.array([pos[0], pos[1], 1.0]))
            out[k].append(CriticalPoint(cp_id, k, pos, tri, deg, tuple(float(x) for x in lam)))
    return out
