"""Multilevel robustness: classic robustness over growing balls around a critical point.

A ball of radius ``a`` around the CP keeps every triangle whose three corners
lie within ``a``, plus the triangle of every CP whose position lies within
``a`` (the centre CP included), so a CP is admitted exactly when the ball
passes through it.  Robustness of the centre is then read off the merge tree
of that sub-domain.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .critical_points import CriticalPoint, extract_critical_points
from .field import FieldFrame, TimeVaryingField, TriangleMesh, fmt, magnitude_field
from .merge_tree import UNBOUNDED, AugmentedMergeTree, GraphOrder, classic_robustness, warm_up

log = logging.getLogger(__name__)

ORACLE_OFFSET = 1e-6


@dataclass(frozen=True)
class NeighborhoodSpec:
    center: Tuple[float, float]
    radius: float
    level: int
    N: int

    @classmethod
    def at_level(cls, center, L: float, level: int, N: int) -> "NeighborhoodSpec":
        if not 0 <= level < N:
            raise ValueError(f"level {level} outside [0, {N})")
        return cls(tuple(center), level_radius(L, level, N), level, N)


def level_radius(L: float, level: int, N: int) -> float:
    # (i+1)/N first so nested level counts hit bitwise-identical radii
    return L * ((level + 1) / N)


@dataclass(frozen=True)
class RobustnessProfile:
    """Step function of robustness over ball radius, sampled in ascending radius."""

    cp_id: int
    frame_index: int
    radii: Tuple[float, ...]
    values: Tuple[float, ...]

    @property
    def levels(self) -> List[Tuple[float, float]]:
        return list(zip(self.radii, self.values))

    @property
    def minR(self) -> float:
        return min(self.values) if self.values else UNBOUNDED

    def value_at(self, radius: float) -> float:
        """Right-continuous step value: the sample at the largest radius <= ``radius``."""
        k = int(np.searchsorted(self.radii, radius, side="right")) - 1
        if k < 0:
            raise ValueError(f"radius {radius} precedes the first sample")
        return self.values[k]

    def n_changes(self) -> int:
        return sum(1 for a, b in zip(self.values, self.values[1:]) if a != b)


@dataclass
class Subdomain:
    triangles: np.ndarray  # global triangle indices, ascending
    cps: List[CriticalPoint]
    parent: TriangleMesh

    @property
    def mesh(self) -> TriangleMesh:
        used = np.unique(self.parent.triangles[self.triangles])
        remap = np.full(self.parent.n_vertices, -1, np.int64)
        remap[used] = np.arange(len(used))
        return TriangleMesh(self.parent.vertices[used], remap[self.parent.triangles[self.triangles]], check=False)


class FrameContext:
    """Per-frame state shared by every (cp, level) task: CPs, degrees and vertex order.

    Degrees are computed once on the full mesh; they depend only on the
    CP's own triangle.
    """

    def __init__(self, mesh: TriangleMesh, frame: FieldFrame, cps: Optional[Sequence[CriticalPoint]] = None):
        self.mesh = mesh
        self.frame = frame
        self.cps = list(extract_critical_points(frame, mesh) if cps is None else cps)
        self.by_id = {cp.id: i for i, cp in enumerate(self.cps)}
        self.f0 = magnitude_field(frame)
        self.order = GraphOrder(mesh, self.f0, self.cps)
        self.cp_pos = np.array([cp.position for cp in self.cps], dtype=float).reshape(-1, 2)
        self.cp_tri = np.array([cp.triangle for cp in self.cps], dtype=np.int64)
        self._cached: Tuple[int, Optional[np.ndarray], Optional[np.ndarray]] = (-1, None, None)

    @classmethod
    def of(cls, field: TimeVaryingField, frame_index: int) -> "FrameContext":
        return cls(field.mesh, field.frames[frame_index])

    @property
    def L(self) -> float:
        return self.mesh.diameter

    def distances(self, cp_id: int) -> Tuple[np.ndarray, np.ndarray]:
        if self._cached[0] != cp_id:
            c = self.cp_pos[self.by_id[cp_id]]
            v = self.mesh.vertices
            dv = np.hypot(v[:, 0] - c[0], v[:, 1] - c[1])
            dtri = dv[self.mesh.triangles].max(axis=1)
            dcp = np.hypot(self.cp_pos[:, 0] - c[0], self.cp_pos[:, 1] - c[1])
            self._cached = (cp_id, dtri, dcp)
        return self._cached[1], self._cached[2]

    def ball_masks(self, cp_id: int, radius: float) -> Tuple[np.ndarray, np.ndarray]:
        """Triangle and CP masks of the ball (before keeping the centre's component)."""
        dtri, dcp = self.distances(cp_id)
        tri_mask = dtri <= radius
        cp_mask = dcp <= radius
        cp_mask[self.by_id[cp_id]] = True
        tri_mask[self.cp_tri[cp_mask]] = True
        return tri_mask, cp_mask

    def subdomain(self, cp_id: int, radius: float) -> Subdomain:
        tri_mask, cp_mask = self.ball_masks(cp_id, radius)
        tris = self.mesh.triangles
        sel = np.flatnonzero(tri_mask)
        t = tris[sel]
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]]])
        V = self.mesh.n_vertices
        g = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(V, V))
        _, label = connected_components(g, directed=False)
        own = label[tris[self.cp_tri[self.by_id[cp_id]], 0]]
        keep = sel[label[t[:, 0]] == own]
        kept = np.zeros(len(tris), bool)
        kept[keep] = True
        cps = [cp for i, cp in enumerate(self.cps) if cp_mask[i] and kept[cp.triangle]]
        return Subdomain(keep, cps, self.mesh)

    def tree(self, cp_id: int, radius: float) -> AugmentedMergeTree:
        # pieces disconnected from the centre never merge with it, so no component pass
        tri_mask, cp_mask = self.ball_masks(cp_id, radius)
        return self.order.tree(tri_mask, cp_mask)

    def robustness_at(self, cp_id: int, radius: float) -> float:
        return classic_robustness(self.tree(cp_id, radius), cp_id)

    def full_robustness(self, cp_id: int) -> float:
        return classic_robustness(self.order.tree(), cp_id)

    def profile(self, cp_id: int, N: int) -> RobustnessProfile:
        radii = tuple(level_radius(self.L, i, N) for i in range(N))
        vals = tuple(self.robustness_at(cp_id, a) for a in radii)
        return RobustnessProfile(cp_id, self.frame.frame_index, radii, vals)

    def oracle(self, cp_id: int) -> RobustnessProfile:
        L = self.L
        delta = ORACLE_OFFSET * L
        _, dcp = self.distances(cp_id)
        radii = sorted({min(float(d) + delta, L) for d in dcp} | {L})
        vals = tuple(self.robustness_at(cp_id, a) for a in radii)
        return RobustnessProfile(cp_id, self.frame.frame_index, tuple(radii), vals)


def restrict_to_ball(mesh: TriangleMesh, frame: FieldFrame, cps: Sequence[CriticalPoint], spec: NeighborhoodSpec) -> Subdomain:
    """Connected sub-mesh of the ball described by ``spec`` plus the CPs it holds."""
    ctx = FrameContext(mesh, frame, cps)
    c = np.asarray(spec.center, dtype=float)
    k = int(np.argmin(np.hypot(*(ctx.cp_pos - c).T)))
    return ctx.subdomain(ctx.cps[k].id, spec.radius)


def multilevel_robustness(field: TimeVaryingField, frame_index: int, cp_id: int, N: int = 50) -> RobustnessProfile:
    if N < 1:
        raise ValueError("N must be >= 1")
    return FrameContext.of(field, frame_index).profile(cp_id, N)


def oracle_profile(field: TimeVaryingField, frame_index: int, cp_id: int) -> RobustnessProfile:
    """Exact profile evaluated just past every CP distance and at ``L``."""
    return FrameContext.of(field, frame_index).oracle(cp_id)


# ------------------------------------------------------------ task farm

Task = Tuple[int, int, int]  # (frame_index, cp_id, level)


@dataclass
class FarmResult:
    values: Dict[Task, float]
    radii: Dict[Task, float]
    seconds: Dict[Task, float]
    failed: List[Tuple[int, Task, str]] = field(default_factory=list)
    task_ids: Dict[Task, int] = field(default_factory=dict)

    def profiles(self) -> Dict[Tuple[int, int], RobustnessProfile]:
        grouped: Dict[Tuple[int, int], List[Tuple[float, float]]] = {}
        for (k, cp, lev) in sorted(self.values):
            grouped.setdefault((k, cp), []).append((self.radii[(k, cp, lev)], self.values[(k, cp, lev)]))
        return {key: RobustnessProfile(key[1], key[0], tuple(r for r, _ in rows), tuple(v for _, v in rows)) for key, rows in grouped.items()}

    def seconds_by_level(self) -> Dict[int, List[float]]:
        out: Dict[int, List[float]] = {}
        for (k, cp, lev), s in sorted(self.seconds.items()):
            out.setdefault(lev, []).append(s)
        return out


_WORKER: dict = {}


def _init_worker(field: TimeVaryingField) -> None:
    _WORKER.clear()
    _WORKER["field"] = field
    _WORKER["ctx"] = {}
    warm_up()


def _context(frame_index: int) -> FrameContext:
    ctx = _WORKER["ctx"].get(frame_index)
    if ctx is None:
        # one frame resident at a time keeps worker memory flat
        _WORKER["ctx"] = {frame_index: FrameContext.of(_WORKER["field"], frame_index)}
        ctx = _WORKER["ctx"][frame_index]
    return ctx


def _run_chunk(chunk: Sequence[Tuple[int, Task, float]]):
    out = []
    for tid, task, radius in chunk:
        try:
            ctx = _context(task[0])
            ctx.distances(task[1])  # shared by all levels of this CP, kept out of the timing
        except Exception as exc:
            out.append((tid, task, math.nan, 0.0, f"{type(exc).__name__}: {exc}"))
            continue
        t0 = time.perf_counter()
        try:
            val = ctx.robustness_at(task[1], radius)
            out.append((tid, task, val, time.perf_counter() - t0, None))
        except Exception as exc:  # reported back to the parent for one retry
            out.append((tid, task, math.nan, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}"))
    return out


def plan_tasks(field: TimeVaryingField, cps_by_frame: Sequence[Sequence[CriticalPoint]], N: int) -> List[Tuple[Task, float]]:
    """``n x N`` (cp, level) tasks per frame, ordered by (frame, cp_id, level)."""
    L = field.mesh.diameter
    return [((k, cp.id, lev), level_radius(L, lev, N)) for k, cps in enumerate(cps_by_frame) for cp in sorted(cps, key=lambda c: c.id) for lev in range(N)]


def plan_oracle_tasks(field: TimeVaryingField, cps_by_frame: Sequence[Sequence[CriticalPoint]]) -> List[Tuple[Task, float]]:
    """Breakpoint radii of the exact profile; ``level`` indexes the breakpoint."""
    out = []
    L = field.mesh.diameter
    delta = ORACLE_OFFSET * L
    for k, cps in enumerate(cps_by_frame):
        pos = np.array([cp.position for cp in cps], dtype=float).reshape(-1, 2)
        for cp in sorted(cps, key=lambda c: c.id):
            d = np.hypot(*(pos - np.asarray(cp.position)).T)
            radii = sorted({min(float(x) + delta, L) for x in d} | {L})
            out.extend(((k, cp.id, lev), r) for lev, r in enumerate(radii))
    return out


def run_task_farm(field: TimeVaryingField, tasks: Sequence[Tuple[Task, float]], workers: int = 1, chunk_size: int = 16) -> FarmResult:
    """Evaluate robustness for every ``((frame, cp_id, level), radius)`` task.

    Results are keyed by task, so they do not depend on worker count or
    completion order.  A failing task is retried once before it is reported.
    """
    if workers < 1:
        raise ValueError("workers must be >= 1")
    numbered = [(tid, task, radius) for tid, (task, radius) in enumerate(tasks)]
    res = FarmResult({}, {task: r for task, r in tasks}, {}, task_ids={task: tid for tid, task, _ in numbered})

    def run(batch):
        if workers == 1:
            _init_worker(field)
            return [_run_chunk(batch)]
        chunks = [batch[i : i + chunk_size] for i in range(0, len(batch), chunk_size)]
        try:
            with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(field,)) as pool:
                return list(pool.map(_run_chunk, chunks))
        except BrokenProcessPool as exc:
            log.warning("worker pool broke (%s); rerunning batch in-process", exc)
            _init_worker(field)
            return [_run_chunk(batch)]

    pending = numbered
    for attempt in range(2):
        errors = []
        for chunk in run(pending):
            for tid, task, val, secs, err in chunk:
                if err is None:
                    res.values[task] = val
                    res.seconds[task] = secs
                else:
                    errors.append((tid, task, err))
        if not errors:
            break
        if attempt == 0:
            log.warning("retrying %d failed task(s)", len(errors))
            retry = {tid for tid, _, _ in errors}
            pending = [t for t in numbered if t[0] in retry]
        else:
            res.failed = sorted(errors)
    _WORKER.clear()
    return res


# ------------------------------------------------------------------ CSV


def write_robustness_csv(path, res: FarmResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("frame,cp_id,level,radius,robustness\n")
        for task in sorted(res.values):
            k, cp, lev = task
            fh.write(f"{k},{cp},{lev},{fmt(res.radii[task])},{fmt(res.values[task])}\n")


def write_timing_csv(path, res: FarmResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("task_id,cp_id,level,seconds\n")
        for task in sorted(res.seconds, key=lambda t: res.task_ids[t]):
            fh.write(f"{res.task_ids[task]},{task[1]},{task[2]},{res.seconds[task]:.6f}\n")


def read_robustness_csv(path) -> Dict[Tuple[int, int], RobustnessProfile]:
    rows: Dict[Tuple[int, int], List[Tuple[int, float, float]]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for line_no, r in enumerate(reader, start=2):
            try:
                key = (int(r["frame"]), int(r["cp_id"]))
                rows.setdefault(key, []).append((int(r["level"]), float(r["radius"]), float(r["robustness"])))
            except (KeyError, TypeError, ValueError):
                raise ValueError(f"{path}:{line_no}: malformed row") from None
    out = {}
    for key, rs in rows.items():
        rs.sort()
        out[key] = RobustnessProfile(key[1], key[0], tuple(r[1] for r in rs), tuple(r[2] for r in rs))
    return out


def read_timing_csv(path) -> Dict[int, List[float]]:
    out: Dict[int, List[float]] = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            out.setdefault(int(r["level"]), []).append(float(r["seconds"]))
    return out
