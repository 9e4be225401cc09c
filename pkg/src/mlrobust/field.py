"""Triangle meshes, per-vertex vector frames and the on-disk bundle format.

A bundle directory holds ``mesh.json``, ``bundle.json`` and one
``frame_%04d.csv`` per time step.  Everything here is immutable after
construction so values can be shared read-only between worker processes.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

BARY_TOL = 1e-12
DEGENERATE_AREA = 1e-14


class BundleError(ValueError):
    """Invalid or inconsistent bundle data."""


def fmt(x: float) -> str:
    """Shortest round-trip decimal text; infinities as ``inf``/``-inf``."""
    x = float(x)
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def _edges_of(triangles: np.ndarray) -> np.ndarray:
    e = np.concatenate([triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]])
    e.sort(axis=1)
    return np.unique(e, axis=0)


class TriangleMesh:
    """Planar triangle mesh.

    Triangles are reoriented counterclockwise on construction.  ``diameter``
    is the bounding-box diagonal of the vertex set.
    """

    def __init__(self, vertices, triangles, *, check: bool = True):
        v = np.ascontiguousarray(vertices, dtype=float).reshape(-1, 2)
        t = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
        if check:
            _validate_mesh_arrays(v, t)
        area2 = _signed_area2(v, t)
        cw = area2 < 0
        if cw.any():
            t = t.copy()
            t[cw] = t[cw][:, [0, 2, 1]]
        v.setflags(write=False)
        t.setflags(write=False)
        self.vertices = v
        self.triangles = t
        lo, hi = v.min(axis=0), v.max(axis=0)
        self.diameter = float(np.hypot(*(hi - lo)))
        if check:
            if not self.diameter > 0:
                raise BundleError("mesh diameter must be positive")
            if (np.abs(area2) <= 2 * DEGENERATE_AREA * self.diameter**2).any():
                bad = int(np.argmax(np.abs(area2) <= 2 * DEGENERATE_AREA * self.diameter**2))
                raise BundleError(f"degenerate triangle {bad}")
            if n_components(len(v), t) != 1:
                raise BundleError("mesh edge graph is not connected")
        self._edges: Optional[np.ndarray] = None
        self._locator: Optional[_BucketLocator] = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def L(self) -> float:
        return self.diameter

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted ``(E, 2)`` vertex pairs."""
        if self._edges is None:
            self._edges = _edges_of(self.triangles)
            self._edges.setflags(write=False)
        return self._edges

    def edge_lengths(self) -> np.ndarray:
        e = self.edges
        return np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1)

    def locate(self, p) -> Tuple[int, np.ndarray]:
        """Containing triangle and barycentric coordinates of ``p``.

        Raises ``ValueError("point outside mesh")`` when no triangle contains it.
        """
        if self._locator is None:
            self._locator = _BucketLocator(self.vertices, self.triangles)
        hit = self._locator.find(np.asarray(p, dtype=float))
        if hit is None:
            raise ValueError("point outside mesh")
        return hit

    def to_json(self) -> str:
        return json.dumps(
            {
                "vertices": [[float(x), float(y)] for x, y in self.vertices],
                "triangles": [[int(a), int(b), int(c)] for a, b, c in self.triangles],
            }
        )

    def __repr__(self) -> str:
        return f"TriangleMesh(V={self.n_vertices}, F={self.n_triangles}, L={self.diameter:.6g})"


def _signed_area2(v: np.ndarray, t: np.ndarray) -> np.ndarray:
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    return (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])


def _validate_mesh_arrays(v: np.ndarray, t: np.ndarray) -> None:
    if len(v) == 0 or len(t) == 0:
        raise BundleError("mesh needs at least one vertex and one triangle")
    if not np.isfinite(v).all():
        raise BundleError("non-finite vertex coordinate")
    if t.min() < 0 or t.max() >= len(v):
        bad = int(np.argmax((t < 0).any(axis=1) | (t >= len(v)).any(axis=1)))
        raise BundleError(f"triangle {bad}: index out of range")


def n_components(n_vertices: int, triangles: np.ndarray) -> int:
    """Number of connected components of the edge graph (isolated vertices count)."""
    e = _edges_of(np.asarray(triangles))
    g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n_vertices, n_vertices))
    return connected_components(g, directed=False)[0]


class _BucketLocator:
    """Uniform-grid bucketing of triangle bounding boxes for point location."""

    def __init__(self, v: np.ndarray, t: np.ndarray):
        self.v, self.t = v, t
        self.lo = v.min(axis=0)
        span = np.maximum(v.max(axis=0) - self.lo, 1e-300)
        n = max(1, int(math.sqrt(len(t))))
        self.shape = (n, n)
        self.cell = span / n
        a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
        tlo = np.minimum(np.minimum(a, b), c)
        thi = np.maximum(np.maximum(a, b), c)
        i0 = self._cell_index(tlo)
        i1 = self._cell_index(thi)
        buckets: Dict[Tuple[int, int], List[int]] = {}
        for k in range(len(t)):
            for i in range(i0[k, 0], i1[k, 0] + 1):
                for j in range(i0[k, 1], i1[k, 1] + 1):
                    buckets.setdefault((i, j), []).append(k)
        self.buckets = {key: np.array(val) for key, val in buckets.items()}
        # inverse 2x2 of each triangle's affine frame
        e1, e2 = b - a, c - a
        det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        self.inv = np.stack([np.stack([e2[:, 1], -e2[:, 0]], -1), np.stack([-e1[:, 1], e1[:, 0]], -1)], 1) / det[:, None, None]
        self.a = a

    def _cell_index(self, p: np.ndarray) -> np.ndarray:
        idx = np.floor((p - self.lo) / self.cell).astype(np.int64)
        return np.clip(idx, 0, np.array(self.shape) - 1)

    def find(self, p: np.ndarray):
        key = tuple(self._cell_index(p[None, :])[0])
        cand = self.buckets.get(key)
        if cand is None:
            return None
        uv = np.einsum("kij,kj->ki", self.inv[cand], p - self.a[cand])
        bary = np.column_stack([1 - uv.sum(axis=1), uv])
        ok = (bary >= -BARY_TOL).all(axis=1) & (bary <= 1 + BARY_TOL).all(axis=1)
        if not ok.any():
            return None
        k = int(np.argmax(ok))
        return int(cand[k]), bary[k]


@dataclass(frozen=True)
class FieldFrame:
    frame_index: int
    time: float
    vectors: np.ndarray
    scalars: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        vec = np.ascontiguousarray(self.vectors, dtype=float).reshape(-1, 2)
        if not np.isfinite(vec).all():
            raise BundleError(f"frame {self.frame_index}: non-finite vector value")
        vec.setflags(write=False)
        object.__setattr__(self, "vectors", vec)
        sc = {}
        for name, arr in self.scalars.items():
            a = np.ascontiguousarray(arr, dtype=float).reshape(-1)
            if len(a) != len(vec):
                raise BundleError(f"frame {self.frame_index}: scalar channel {name!r} length mismatch")
            if not np.isfinite(a).all():
                raise BundleError(f"frame {self.frame_index}: non-finite value in channel {name!r}")
            a.setflags(write=False)
            sc[name] = a
        object.__setattr__(self, "scalars", sc)


@dataclass(frozen=True)
class TimeVaryingField:
    mesh: TriangleMesh
    frames: Tuple[FieldFrame, ...]

    def __post_init__(self):
        frames = tuple(self.frames)
        object.__setattr__(self, "frames", frames)
        if not frames:
            raise BundleError("at least one frame is required")
        for k, fr in enumerate(frames):
            if fr.frame_index != k:
                raise BundleError(f"frame indices must be contiguous from 0 (got {fr.frame_index} at {k})")
            if len(fr.vectors) != self.mesh.n_vertices:
                raise BundleError(f"frame {k}: row count mismatch ({len(fr.vectors)} rows, {self.mesh.n_vertices} vertices)")
        times = np.array([fr.time for fr in frames])
        if (np.diff(times) <= 0).any():
            raise BundleError("frame times must be strictly increasing")

    @property
    def T(self) -> int:
        return len(self.frames)

    @property
    def times(self) -> np.ndarray:
        return np.array([fr.time for fr in self.frames])

    @property
    def time_span(self) -> float:
        """Elapsed time from first to last frame (1.0 for a single frame)."""
        span = self.frames[-1].time - self.frames[0].time
        return span if span > 0 else 1.0


def interpolate(field: FieldFrame, mesh: TriangleMesh, p) -> np.ndarray:
    """Piecewise-linear value of ``field`` at point ``p``."""
    tri, bary = mesh.locate(p)
    return bary @ field.vectors[mesh.triangles[tri]]


def magnitude_field(field: FieldFrame) -> np.ndarray:
    return np.hypot(field.vectors[:, 0], field.vectors[:, 1])


# --------------------------------------------------------------------- I/O


def frame_filename(k: int) -> str:
    return f"frame_{k:04d}.csv"


def _read_json(path: Path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise BundleError(f"{path}: missing file") from None
    except json.JSONDecodeError as exc:
        raise BundleError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None


def load_mesh(path) -> TriangleMesh:
    path = Path(path)
    data = _read_json(path)
    try:
        verts = np.array(data["vertices"], dtype=float)
        tris = np.array(data["triangles"], dtype=np.int64)
    except (KeyError, TypeError, ValueError) as exc:
        raise BundleError(f"{path}: malformed mesh ({exc})") from None
    try:
        return TriangleMesh(verts, tris)
    except BundleError as exc:
        raise BundleError(f"{path}: {exc}") from None


def read_frame_csv(path, n_vertices: int, frame_index: int, time: float) -> FieldFrame:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except FileNotFoundError:
        raise BundleError(f"{path}: missing file") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["vx", "vy"]:
            raise BundleError(f"{path}:1: header must start with vx,vy")
        ncol = len(header)
        rows = []
        for line_no, row in enumerate(reader, start=2):
            if len(row) != ncol:
                raise BundleError(f"{path}:{line_no}: expected {ncol} columns, got {len(row)}")
            try:
                vals = [float(x) for x in row]
            except ValueError:
                raise BundleError(f"{path}:{line_no}: not a number") from None
            if not all(math.isfinite(x) for x in vals):
                raise BundleError(f"{path}:{line_no}: non-finite value")
            rows.append(vals)
    if len(rows) != n_vertices:
        raise BundleError(f"{path}: row count mismatch ({len(rows)} rows, {n_vertices} vertices)")
    data = np.array(rows, dtype=float).reshape(len(rows), ncol)
    scalars = {name: data[:, 2 + i] for i, name in enumerate(header[2:])}
    return FieldFrame(frame_index, time, data[:, :2], scalars)


def load_bundle(path) -> TimeVaryingField:
    """Read and validate a bundle directory."""
    path = Path(path)
    manifest = _read_json(path / "bundle.json")
    try:
        n = int(manifest["frames"])
    except (KeyError, TypeError, ValueError):
        raise BundleError(f"{path / 'bundle.json'}: 'frames' must be an integer") from None
    if n < 1:
        raise BundleError(f"{path / 'bundle.json'}: need at least one frame")
    if "times" in manifest:
        times = [float(t) for t in manifest["times"]]
        if len(times) != n:
            raise BundleError(f"{path / 'bundle.json'}: {len(times)} times for {n} frames")
    else:
        dt = float(manifest.get("dt", 1.0))
        t0 = float(manifest.get("t0", 0.0))
        times = [t0 + k * dt for k in range(n)]
    mesh = load_mesh(path / "mesh.json")
    frames = [read_frame_csv(path / frame_filename(k), mesh.n_vertices, k, times[k]) for k in range(n)]
    return TimeVaryingField(mesh, tuple(frames))


def write_frame_csv(path, frame: FieldFrame) -> None:
    names = list(frame.scalars)
    cols = [frame.vectors[:, 0], frame.vectors[:, 1]] + [frame.scalars[n] for n in names]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["vx", "vy"] + names) + "\n")
        for row in zip(*cols):
            fh.write(",".join(fmt(x) for x in row) + "\n")


def save_bundle(field: TimeVaryingField, path) -> None:
    """Write ``field`` as a bundle directory; inverse of :func:`load_bundle`."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "mesh.json").write_text(field.mesh.to_json() + "\n")
    times = [float(t) for t in field.times]
    manifest = {"frames": field.T, "times": times}
    (path / "bundle.json").write_text(json.dumps(manifest) + "\n")
    for fr in field.frames:
        write_frame_csv(path / frame_filename(fr.frame_index), fr)


def grid_mesh(nx: int, ny: int, x0: float = 0.0, x1: float = 1.0, y0: float = 0.0, y1: float = 1.0) -> TriangleMesh:
    """Structured ``nx`` by ``ny`` cell grid, each cell split along its main diagonal."""
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    verts = np.column_stack([X.ravel(), Y.ravel()])
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    v00 = (j * (nx + 1) + i).ravel()
    v10, v01, v11 = v00 + 1, v00 + nx + 1, v00 + nx + 2
    tris = np.concatenate([np.column_stack([v00, v10, v11]), np.column_stack([v00, v11, v01])])
    return TriangleMesh(verts, tris)


def sample_frames(mesh: TriangleMesh, fn, times: Sequence[float], scalars: Optional[Dict[str, object]] = None) -> TimeVaryingField:
    """Sample ``fn(x, y, t) -> (vx, vy)`` at the mesh vertices for each time."""
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    frames = []
    for k, t in enumerate(times):
        vx, vy = fn(x, y, t)
        vec = np.column_stack([np.broadcast_to(vx, x.shape), np.broadcast_to(vy, x.shape)])
        sc = {name: np.broadcast_to(g(x, y, t), x.shape) for name, g in (scalars or {}).items()}
        frames.append(FieldFrame(k, float(t), vec, sc))
    return TimeVaryingField(mesh, tuple(frames))
