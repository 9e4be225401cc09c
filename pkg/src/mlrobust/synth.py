"""Analytic time-varying fields with a known critical-point inventory.

Everything here is seedless apart from :func:`random_elements`, which takes an
explicit generator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .field import FieldFrame, TimeVaryingField, TriangleMesh, grid_mesh

KINDS = ("source", "sink", "saddle", "center")
CANONICAL_DEGREE = {"source": 1, "sink": 1, "saddle": -1, "center": 1}


@dataclass(frozen=True)
class FlowElement:
    kind: str
    path: Tuple[Tuple[float, float, float], ...]  # (t, x, y) control points
    strength: float = 1.0
    decay: float = 0.2

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown element kind {self.kind!r}")
        if self.strength == 0:
            raise ValueError("strength must be nonzero")
        if not self.decay > 0:
            raise ValueError("decay length must be positive")
        path = tuple(tuple(float(c) for c in p) for p in self.path)
        if not path or any(len(p) != 3 for p in path):
            raise ValueError("path needs at least one (t, x, y) point")
        object.__setattr__(self, "path", tuple(sorted(path)))

    @classmethod
    def steady(cls, kind: str, x: float, y: float, strength: float = 1.0, decay: float = 0.2) -> "FlowElement":
        return cls(kind, ((0.0, x, y),), strength, decay)

    def position(self, t: float) -> Tuple[float, float]:
        ts = [p[0] for p in self.path]
        return (float(np.interp(t, ts, [p[1] for p in self.path])), float(np.interp(t, ts, [p[2] for p in self.path])))

    def evaluate(self, x: np.ndarray, y: np.ndarray, t: float) -> Tuple[np.ndarray, np.ndarray]:
        p, q = self.position(t)
        dx, dy = x - p, y - q
        env = self.strength * np.exp(-(dx * dx + dy * dy) / self.decay**2)
        if self.kind == "source":
            return env * dx, env * dy
        if self.kind == "sink":
            return -env * dx, -env * dy
        if self.kind == "saddle":
            return env * dx, -env * dy
        return -env * dy, env * dx

    def to_dict(self) -> dict:
        return {"kind": self.kind, "strength": self.strength, "decay": self.decay, "path": [list(p) for p in self.path]}

    @classmethod
    def from_dict(cls, d: dict) -> "FlowElement":
        return cls(d["kind"], tuple(tuple(p) for p in d["path"]), float(d.get("strength", 1.0)), float(d.get("decay", 0.2)))


def load_elements(path) -> List[FlowElement]:
    with open(path) as fh:
        return [FlowElement.from_dict(d) for d in json.load(fh)]


def save_elements(path, elements: Sequence[FlowElement]) -> None:
    with open(path, "w") as fh:
        json.dump([e.to_dict() for e in elements], fh)
        fh.write("\n")


def render(elements: Sequence[FlowElement], mesh: TriangleMesh, times: Sequence[float]) -> TimeVaryingField:
    """Sum of element fields sampled at the mesh vertices for each time."""
    if not elements:
        raise ValueError("need at least one element")
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    frames = []
    for k, t in enumerate(times):
        vx = np.zeros_like(x)
        vy = np.zeros_like(y)
        for el in elements:
            ex, ey = el.evaluate(x, y, float(t))
            vx += ex
            vy += ey
        frames.append(FieldFrame(k, float(t), np.column_stack([vx, vy])))
    return TimeVaryingField(mesh, tuple(frames))


def random_elements(rng: np.random.Generator, n: int, *, lo: float = 0.15, hi: float = 0.85, min_sep: float = 0.12) -> List[FlowElement]:
    """``n`` steady elements with random kinds at pairwise-separated positions."""
    pts: List[Tuple[float, float]] = []
    while len(pts) < n:
        p = tuple(rng.uniform(lo, hi, size=2))
        if all(np.hypot(p[0] - a, p[1] - b) >= min_sep for a, b in pts):
            pts.append(p)
    out = []
    for x, y in pts:
        kind = KINDS[int(rng.integers(len(KINDS)))]
        out.append(FlowElement.steady(kind, x, y, float(rng.uniform(0.5, 2.0)), float(rng.uniform(0.1, 0.2))))
    return out


# ------------------------------------------------------------ product fields


@dataclass(frozen=True)
class Zero:
    """Prescribed zero of a product field: ``(z - c)/(|z - c| + core)`` or its conjugate."""

    x: float
    y: float
    degree: int
    core: float = 0.1


def product_field(zeros: Sequence[Zero], x: np.ndarray, y: np.ndarray, modulation: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Vector field whose zeros and degrees are exactly ``zeros``.

    Each factor has unit magnitude far from its zero and a well of radius
    ``core`` around it; ``modulation`` (positive) reshapes the magnitude
    landscape without moving any zero.
    """
    z = np.ones_like(x, dtype=complex)
    for c in zeros:
        w = (x - c.x) + 1j * (y - c.y)
        if c.degree < 0:
            w = np.conj(w)
        z = z * w / (np.abs(w) + c.core)
    if modulation is not None:
        z = z * modulation
    return z.real, z.imag


def _segment_distance(x, y, a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    d = b - a
    s = np.clip(((x - a[0]) * d[0] + (y - a[1]) * d[1]) / (d @ d), 0.0, 1.0)
    return np.hypot(x - (a[0] + s * d[0]), y - (a[1] + s * d[1]))


BOUNDARY_CENTERS = {"A": (0.3031, 0.5017), "B": (1.6969, 0.4983), "C": (1.0013, 0.5009)}
BOUNDARY_WEAK_SADDLES = {"sA": (0.1213, 0.5011), "sB": (1.8787, 0.4989)}
BOUNDARY_FAR_SADDLE = (1.0007, 0.8811)


def boundary_effect_fixture(*, weak_saddles: bool = True, nx: int = 80, ny: int = 40, frames: int = 3) -> TimeVaryingField:
    """Two far-apart centers near the left/right boundaries, each with a nearby saddle.

    A low-magnitude channel joins the two centers A and B through a third
    center C, so on the full domain they all merge before any saddle arrives
    and only cancel once the distant saddle above C joins, at a high shared
    value.  Inside a small ball around A (or B) the channel is cut and the
    nearby saddle is the partner.  ``weak_saddles=False`` drops the two nearby
    saddles.  Frames are identical (steady field).
    """
    mesh = grid_mesh(nx, ny, 0.0, 2.0, 0.0, 1.0)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    zeros = [Zero(*p, +1) for p in BOUNDARY_CENTERS.values()]
    zeros.append(Zero(*BOUNDARY_FAR_SADDLE, -1))
    if weak_saddles:
        zeros += [Zero(*p, -1) for p in BOUNDARY_WEAK_SADDLES.values()]
    channel = _segment_distance(x, y, BOUNDARY_CENTERS["A"], BOUNDARY_CENTERS["B"])
    modulation = 1.0 - 0.9 * np.exp(-((channel / 0.08) ** 2))
    vx, vy = product_field(zeros, x, y, modulation)
    vec = np.column_stack([vx, vy])
    return TimeVaryingField(mesh, tuple(FieldFrame(k, float(k), vec) for k in range(frames)))


# ------------------------------------------------------- tracking fixtures


def translating_center(mesh: Optional[TriangleMesh] = None, frames: int = 11, x0: float = 0.2, speed: float = 0.02) -> TimeVaryingField:
    """Center at ``(x0 + speed * t, 0.5)``; the field is linear in space."""
    mesh = mesh or grid_mesh(20, 20)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    out = []
    for k in range(frames):
        t = float(k)
        out.append(FieldFrame(k, t, np.column_stack([-(y - 0.5), x - (x0 + speed * t)])))
    return TimeVaryingField(mesh, tuple(out))


def annihilating_pair(mesh: Optional[TriangleMesh] = None, frames: int = 11, t0: float = 6.5, x0: float = 0.5013, y0: float = 0.4987, scale: float = 0.02) -> TimeVaryingField:
    """``f = (scale * (t0 - t) - (x - x0)^2, -(y - y0))``: a pair that merges at ``t0``."""
    mesh = mesh or grid_mesh(30, 30)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    out = []
    for k in range(frames):
        t = float(k)
        out.append(FieldFrame(k, t, np.column_stack([scale * (t0 - t) - (x - x0) ** 2, -(y - y0)])))
    return TimeVaryingField(mesh, tuple(out))


def random_zeros(rng: np.random.Generator, n: int, *, lo: float = 0.1, hi: float = 0.9, min_sep: float = 0.08, core: float = 0.1) -> List[Zero]:
    """``n`` zeros of random sign at pairwise-separated positions in ``[lo, hi]^2``."""
    pts: List[Tuple[float, float]] = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 10000 * max(n, 1):
            raise ValueError("cannot place zeros with the requested separation")
        p = tuple(rng.uniform(lo, hi, size=2))
        if all(np.hypot(p[0] - a, p[1] - b) >= min_sep for a, b in pts):
            pts.append(p)
    return [Zero(float(x), float(y), int(rng.choice([-1, 1])), core) for x, y in pts]


def random_product_field(rng: np.random.Generator, n: int, mesh: Optional[TriangleMesh] = None, frames: int = 1, drift: float = 0.0) -> TimeVaryingField:
    """Product field with ``n`` random zeros, optionally drifting by up to ``drift`` per frame.

    The magnitude is modulated by a smooth random bump pattern so merge heights
    are not all alike.
    """
    mesh = mesh or grid_mesh(40, 40)
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    span = hi - lo
    zeros = random_zeros(rng, n)
    vel = rng.uniform(-drift, drift, size=(n, 2))
    bumps = rng.uniform(0.0, 1.0, size=(6, 2))
    heights = rng.uniform(0.3, 1.5, size=6)
    x = (mesh.vertices[:, 0] - lo[0]) / span[0]
    y = (mesh.vertices[:, 1] - lo[1]) / span[1]
    mod = 0.5 + sum(h * np.exp(-((x - b[0]) ** 2 + (y - b[1]) ** 2) / 0.05) for b, h in zip(bumps, heights))
    out = []
    for k in range(frames):
        zk = [Zero(z.x + k * v[0], z.y + k * v[1], z.degree, z.core) for z, v in zip(zeros, vel)]
        vx, vy = product_field(zk, x, y, mod)
        out.append(FieldFrame(k, float(k), np.column_stack([vx, vy])))
    return TimeVaryingField(mesh, tuple(out))


def steady_product_field(zeros: Sequence[Zero], mesh: Optional[TriangleMesh] = None, frames: int = 1) -> TimeVaryingField:
    """Unmodulated product field repeated over ``frames`` unit-spaced frames."""
    mesh = mesh or grid_mesh(30, 30)
    vx, vy = product_field(zeros, mesh.vertices[:, 0], mesh.vertices[:, 1])
    vec = np.column_stack([vx, vy])
    return TimeVaryingField(mesh, tuple(FieldFrame(k, float(k), vec) for k in range(frames)))
