"""Per-trajectory scores, threshold filtering, the (k, sigma) sweep and correlation."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Sequence, Tuple

import numpy as np

from .field import FieldFrame, TriangleMesh, fmt
from .segmentation import SegmentationConfig, logistic, segment_all
from .tracking import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrajectoryScore:
    id: int
    b: float
    d: float
    t_span: float
    length: int


def lifespan(traj: Trajectory) -> float:
    t = traj.times
    return float(t.max() - t.min()) if len(t) else 0.0


def stability(traj: Trajectory, k: float, T_span: float) -> float:
    """Mean logistic stability over slice nodes, times the fraction of ``T_span`` covered."""
    if not T_span > 0:
        raise ValueError("T_span must be positive")
    ann = traj.annotated_nodes
    if not ann:
        log.warning("trajectory %d has no annotated nodes; stability 0", traj.id)
        return 0.0
    mean_l = sum(logistic(n.minR, k) for n in ann) / len(ann)
    return mean_l * min(lifespan(traj) / T_span, 1.0)


def average_degree(traj: Trajectory) -> float:
    degs = [n.degree for n in traj.nodes if n.frame is not None and n.degree is not None]
    if not degs:
        log.warning("trajectory %d has no degree annotations; degree 0", traj.id)
        return 0.0
    return sum(degs) / len(degs)


def score(traj: Trajectory, k: float, T_span: float) -> TrajectoryScore:
    return TrajectoryScore(traj.id, stability(traj, k, T_span), average_degree(traj), lifespan(traj), len(traj.annotated_nodes))


def filter(scored: Iterable[Tuple[Trajectory, TrajectoryScore]], stability_threshold: float, degree_threshold: float) -> List[Trajectory]:
    return [t for t, s in scored if s.b >= stability_threshold and s.d >= degree_threshold]


def filter_trajectories(trajs: Sequence[Trajectory], k: float, T_span: float, stability_threshold: float = 0.0, degree_threshold: float = -1.0) -> Tuple[List[Trajectory], List[TrajectoryScore]]:
    scores = [score(t, k, T_span) for t in trajs]
    return filter(zip(trajs, scores), stability_threshold, degree_threshold), scores


def sweep(
    trajs: Sequence[Trajectory],
    k_values: Sequence[float],
    sigma_values: Sequence[float],
    T_span: float,
    stability_threshold: float = 0.0,
    degree_threshold: float = -1.0,
    bridge_gap: int = 2,
) -> List[Tuple[float, float, int]]:
    """Surviving trajectory count for every (k, sigma), rows ordered k-major."""
    rows = []
    for k in k_values:
        for s in sigma_values:
            pieces = segment_all(trajs, SegmentationConfig(k=k, sigma=s, bridge_gap=bridge_gap))
            kept, _ = filter_trajectories(pieces, k, T_span, stability_threshold, degree_threshold)
            rows.append((k, s, len(kept)))
    return rows


def regional_max(frame: FieldFrame, mesh: TriangleMesh, channel: str, center, radius: float) -> float:
    """Largest channel value over vertices within ``radius`` of ``center``."""
    if channel not in frame.scalars:
        raise KeyError(f"unknown scalar channel {channel!r}")
    v = mesh.vertices
    inside = np.hypot(v[:, 0] - center[0], v[:, 1] - center[1]) <= radius
    if not inside.any():
        raise ValueError("empty region")
    return float(np.asarray(frame.scalars[channel])[inside].max())


def pearson(a: Sequence[float], b: Sequence[float]) -> float:
    x = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float)
    if len(x) < 3:
        raise ValueError("degenerate series (fewer than 3 pairs)")
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = math.sqrt(float(x @ x)), math.sqrt(float(y @ y))
    if sx == 0 or sy == 0:
        raise ValueError("degenerate series (zero variance)")
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def correlate(traj: Trajectory, series: Sequence[float]) -> Tuple[float, int]:
    """Pearson r between slice-node minR and ``series`` plus the number of pairs used.

    Pairs with an infinite minR or a non-finite series value are dropped.
    """
    ann = traj.annotated_nodes
    if len(series) != len(ann):
        raise ValueError(f"series has {len(series)} values for {len(ann)} annotated nodes")
    pairs = [(n.minR, s) for n, s in zip(ann, series) if math.isfinite(n.minR) and math.isfinite(s)]
    return pearson([p[0] for p in pairs], [p[1] for p in pairs]), len(pairs)


def regional_series(traj: Trajectory, frames: Sequence[FieldFrame], mesh: TriangleMesh, channel: str, radius: float) -> List[float]:
    """``regional_max`` around each annotated node, in node order."""
    return [regional_max(frames[n.frame], mesh, channel, (n.x, n.y), radius) for n in traj.annotated_nodes]


# ------------------------------------------------------------------ CSV


def write_scores_csv(path, scores: Sequence[TrajectoryScore]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("id,b,d,t_span,length\n")
        for s in scores:
            fh.write(f"{s.id},{fmt(s.b)},{fmt(s.d)},{fmt(s.t_span)},{s.length}\n")


def write_sweep_csv(path, rows: Sequence[Tuple[float, float, int]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("k,sigma,count\n")
        for k, s, c in rows:
            fh.write(f"{fmt(k)},{fmt(s)},{c}\n")


def write_correlation_csv(path, rows: Sequence[Tuple[int, str, float, int]]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("trajectory_id,channel,pearson,n_pairs\n")
        for tid, ch, r, n in rows:
            fh.write(f"{tid},{ch},{fmt(r)},{n}\n")
