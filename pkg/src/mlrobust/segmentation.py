"""Split trajectories into pieces of similar stability.

minR values along a trajectory are squashed to [0, 1], clustered with a 1D
Gaussian KDE, cut into runs of equal label, and runs of the same label that
are separated by a short foreign run are joined again.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import List, Sequence

import numpy as np

from .tracking import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SegmentationConfig:
    k: float = 0.5
    sigma: float = 0.2
    grid_size: int = 512
    bridge_gap: int = 2

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("k must be positive")
        if not 0 < self.sigma <= 1:
            raise ValueError("sigma must lie in (0, 1]")
        if self.grid_size < 64:
            raise ValueError("grid_size must be >= 64")
        if self.bridge_gap < 0:
            raise ValueError("bridge_gap must be >= 0")


def logistic(minR: float, k: float) -> float:
    """``2 / (1 + exp(-k * minR)) - 1``; infinite robustness maps to exactly 1."""
    if not k > 0:
        raise ValueError("k must be positive")
    if math.isinf(minR):
        return 1.0
    # tanh form avoids overflow for large k * minR and equals the expression above
    return math.tanh(0.5 * k * minR)


def inverse_logistic(l: float, k: float) -> float:
    if l >= 1.0:
        return math.inf
    return 2.0 * math.atanh(l) / k


def kde_density(values: Sequence[float], sigma: float, grid_size: int = 512) -> np.ndarray:
    grid = np.linspace(0.0, 1.0, grid_size)
    v = np.asarray(values, dtype=float)
    z = (grid[:, None] - v[None, :]) / sigma
    return np.exp(-0.5 * z * z).sum(axis=1) / (len(v) * sigma * math.sqrt(2 * math.pi))


def _strict_minima(d: np.ndarray) -> List[int]:
    """Interior strict local minima; a flat run counts once, at its leftmost point."""
    starts = np.concatenate([[0], np.flatnonzero(np.diff(d) != 0) + 1])
    vals = d[starts]
    out = []
    for r in range(1, len(starts) - 1):
        if vals[r - 1] > vals[r] < vals[r + 1]:
            out.append(int(starts[r]))
    return out


def kde_cluster(values: Sequence[float], config: SegmentationConfig = SegmentationConfig()) -> List[int]:
    """Label each value by the density valley interval it falls in (0 = leftmost)."""
    if len(values) == 0:
        raise ValueError("need at least one value")
    d = kde_density(values, config.sigma, config.grid_size)
    grid = np.linspace(0.0, 1.0, config.grid_size)
    cuts = grid[_strict_minima(d)]
    return [int(np.searchsorted(cuts, v, side="left")) for v in values]


def segment_labels(labels: Sequence[int], bridge_gap: int) -> List[List[int]]:
    """Group positions into pieces: equal-label runs, bridged over short foreign runs.

    Runs ``i`` and ``i + 2`` with the same label merge when run ``i + 1`` has
    at most ``bridge_gap`` entries.  Pieces come back as sorted position lists,
    ordered by their first position.
    """
    runs: List[List[int]] = []
    for i, lab in enumerate(labels):
        if runs and labels[runs[-1][0]] == lab:
            runs[-1].append(i)
        else:
            runs.append([i])
    root = list(range(len(runs)))

    def find(a):
        while root[a] != a:
            root[a] = root[root[a]]
            a = root[a]
        return a

    for i in range(len(runs) - 2):
        if labels[runs[i][0]] == labels[runs[i + 2][0]] and len(runs[i + 1]) <= bridge_gap:
            root[find(i + 2)] = find(i)
    groups: dict = {}
    for i, r in enumerate(runs):
        groups.setdefault(find(i), []).extend(r)
    return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])


def _ranges(idx: Sequence[int]) -> List[List[int]]:
    out: List[List[int]] = []
    for i in idx:
        if out and out[-1][1] == i - 1:
            out[-1][1] = i
        else:
            out.append([i, i])
    return out


def segment_trajectory(traj: Trajectory, config: SegmentationConfig = SegmentationConfig()) -> List[Trajectory]:
    """Pieces of ``traj``; interior nodes travel with the slice node they are anchored to.

    A single resulting piece means the input is returned unchanged.  Piece
    ids are local (0, 1, ...); callers renumber.
    """
    ann = [i for i, n in enumerate(traj.nodes) if n.annotated]
    if not ann:
        log.warning("trajectory %d has no annotated nodes; left unchanged", traj.id)
        return [traj]
    lvals = [logistic(traj.nodes[i].minR, config.k) for i in ann]
    pieces = segment_labels(kde_cluster(lvals, config), config.bridge_gap)
    if len(pieces) == 1:
        return [traj]
    piece_of_anchor = {}
    for p, members in enumerate(pieces):
        for m in members:
            piece_of_anchor[traj.nodes[ann[m]].index] = p
    which = [piece_of_anchor.get(n.anchor) for n in traj.nodes]
    # nodes without a usable anchor stay with their predecessor (or the first placed node)
    first = next(w for w in which if w is not None)
    last = first
    buckets: List[List[int]] = [[] for _ in pieces]
    for i, w in enumerate(which):
        last = last if w is None else w
        buckets[last].append(i)
    out = []
    for p, idx in enumerate(buckets):
        nodes = [replace(traj.nodes[i], index=j) for j, i in enumerate(idx)]
        index_map = {traj.nodes[i].index: j for j, i in enumerate(idx)}
        for n in nodes:
            n.anchor = index_map.get(n.anchor)
        prov = {"source": traj.id, "ranges": _ranges([traj.nodes[i].index for i in idx])}
        out.append(Trajectory(p, nodes, prov, False))
    return out


def segment_all(trajs: Sequence[Trajectory], config: SegmentationConfig = SegmentationConfig()) -> List[Trajectory]:
    """Segment every trajectory.  Unchanged ones keep their id; new pieces are
    numbered after the largest input id, in input order."""
    out = []
    next_id = max((t.id for t in trajs), default=-1) + 1
    for t in trajs:
        pieces = segment_trajectory(t, config)
        if len(pieces) == 1:
            out.append(t)
            continue
        for piece in pieces:
            out.append(replace(piece, id=next_id))
            next_id += 1
    return out
