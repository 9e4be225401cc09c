"""End-to-end acceptance checks, one test per criterion.

Each test prints a ``criterion N: PASS/FAIL`` line and the session summary
lists them all.  Run alone with ``pytest tests/test_acceptance.py -v -s`` or
``python tests/test_acceptance.py``.
"""
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import record
from mlrobust.cli import main as cli
from mlrobust.critical_points import extract_critical_points, region_degree
from mlrobust.field import FieldFrame, TimeVaryingField, grid_mesh, save_bundle
from mlrobust.merge_tree import UNBOUNDED
from mlrobust.multilevel import FrameContext, plan_tasks, run_task_farm
from mlrobust.segmentation import SegmentationConfig, inverse_logistic, logistic, segment_trajectory
from mlrobust.selection import average_degree, correlate, pearson, regional_series, stability
from mlrobust.synth import (
    BOUNDARY_CENTERS,
    BOUNDARY_WEAK_SADDLES,
    CANONICAL_DEGREE,
    FlowElement,
    Zero,
    annihilating_pair,
    boundary_effect_fixture,
    product_field,
    random_product_field,
    render,
    steady_product_field,
    translating_center,
)
from mlrobust.tracking import Trajectory, TrajectoryNode, slice_annotate, track
from oracles import (
    flood_fill_robustness,
    max_jacobian_norm,
    minimax_between,
    point_in_polygon,
    random_loop,
    steiner_graph,
    winding_on_circle,
)


def _check(criterion, failures, detail):
    ok = not failures
    record(criterion, ok, detail if ok else f"{detail}; {failures[0]} (+{len(failures) - 1} more)")
    assert ok, failures[:5]


def _nearest(cps, p):
    return min(cps, key=lambda c: math.hypot(c.position[0] - p[0], c.position[1] - p[1]))


# ----------------------------------------------------------------- 1


def test_criterion_1_degree_correctness():
    failures = []
    mesh = grid_mesh(20, 20)
    for kind, expected in CANONICAL_DEGREE.items():
        el = FlowElement.steady(kind, 0.4731, 0.5214)
        cps = extract_critical_points(render([el], mesh, [0.0]).frames[0], mesh)
        brute = winding_on_circle(lambda x, y: el.evaluate(x, y, 0.0), 0.4731, 0.5214)
        if [c.degree for c in cps] != [expected] or brute != expected:
            failures.append(f"{kind}: {[c.degree for c in cps]} vs {expected} (winding {brute})")
    loops = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        f = random_product_field(rng, int(rng.integers(3, 9)), grid_mesh(24, 24))
        fr, m = f.frames[0], f.mesh
        cps = extract_critical_points(fr, m)
        for _ in range(3):
            loop = random_loop(rng, cps)
            inside = sum(c.degree for c in cps if point_in_polygon(c.position, loop))
            got = region_degree(loop, fr, m)
            loops += 1
            if got != inside:
                failures.append(f"seed {seed}: region degree {got} != {inside}")
    _check(1, failures, f"4 element kinds, {loops} loops on 50 fields")


# ----------------------------------------------------------------- 2


def test_criterion_2_merge_tree_matches_flood_fill():
    nx = ny = 40
    failures, worst = [], 0.0
    start = time.perf_counter()
    for s in range(20):
        rng = np.random.default_rng(1000 + s)
        f = random_product_field(rng, int(rng.integers(4, 9)), grid_mesh(nx, ny))
        ctx = FrameContext.of(f, 0)
        ours = [ctx.full_robustness(c.id) for c in ctx.cps]
        ref, h = flood_fill_robustness(ctx.frame.vectors, nx, ny, [(*c.position, c.degree) for c in ctx.cps])
        tol = 2 * h * max_jacobian_norm(f.mesh.vertices, f.mesh.triangles, ctx.frame.vectors)
        for c, a, b in zip(ctx.cps, ours, ref):
            if math.isinf(a) or math.isinf(b):
                if a != b:
                    failures.append(f"seed {1000 + s} cp {c.id}: {a} vs {b}")
                continue
            worst = max(worst, abs(a - b) / tol)
            if abs(a - b) > tol:
                failures.append(f"seed {1000 + s} cp {c.id}: |{a:.5g} - {b:.5g}| > {tol:.3g}")
    elapsed = time.perf_counter() - start
    if elapsed >= 60:
        failures.append(f"runtime {elapsed:.1f} s")
    _check(2, failures, f"20 fields, worst error {worst:.0%} of tolerance, {elapsed:.1f} s")


# ----------------------------------------------------------- 3 and 4


@pytest.fixture(scope="module")
def random_profiles():
    """Sampled (N=50) and exact profiles plus full-domain robustness on 100 random fields."""
    out = []
    for s in range(100):
        rng = np.random.default_rng(2000 + s)
        n = int(rng.integers(4, 9))
        ctx = FrameContext.of(random_product_field(rng, n), 0)
        for c in ctx.cps:
            out.append((2000 + s, n, c.id, ctx.profile(c.id, 50), ctx.oracle(c.id), ctx.full_robustness(c.id)))
    return out


def test_criterion_3_sampling_matches_oracle(random_profiles):
    failures, mismatched = [], 0
    for seed, n, cp, sampled, exact, _ in random_profiles:
        bad = [(r, v, exact.value_at(r)) for r, v in zip(sampled.radii, sampled.values) if v != exact.value_at(r)]
        mismatched += len(bad)
        if bad:
            r, v, e = bad[0]
            failures.append(f"seed {seed} cp {cp}: sampled {v:.5g} != exact {e:.5g} at radius {r:.4g}")
        if exact.n_changes() > n - 1:
            failures.append(f"seed {seed} cp {cp}: {exact.n_changes()} changes with n={n}")
    total = sum(len(p[3].radii) for p in random_profiles)
    _check(3, failures, f"{len(random_profiles)} CPs on 100 fields, {mismatched}/{total} sampled values differ")


def test_criterion_4_minR_bound(random_profiles):
    failures = []
    fields = [random_profiles]
    ctx = FrameContext.of(boundary_effect_fixture(), 0)
    fields.append([(0, 0, c.id, ctx.profile(c.id, 50), ctx.oracle(c.id), ctx.full_robustness(c.id)) for c in ctx.cps])
    for rows in fields:
        for seed, _, cp, sampled, exact, full in rows:
            for p in (sampled, exact):
                if not (p.minR <= p.values[-1] == full):
                    failures.append(f"seed {seed} cp {cp}: minR {p.minR} R(L) {p.values[-1]} full {full}")
    unbounded = sum(r[5] == UNBOUNDED for rows in fields for r in rows)
    _check(4, failures, f"{sum(map(len, fields))} CPs, {unbounded} unbounded")


# ----------------------------------------------------------------- 5


def test_criterion_5_boundary_effect():
    f = boundary_effect_fixture()
    ctx = FrameContext.of(f, 0)
    vals, edges = steiner_graph(f.mesh, ctx.f0, ctx.cps)
    V = f.mesh.n_vertices
    failures, parts = [], []
    for center, saddle in (("A", "sA"), ("B", "sB")):
        a = _nearest(ctx.cps, BOUNDARY_CENTERS[center])
        s = _nearest(ctx.cps, BOUNDARY_WEAK_SADDLES[saddle])
        local = minimax_between(vals, edges, V + ctx.by_id[a.id], V + ctx.by_id[s.id])
        minR, full = ctx.profile(a.id, 50).minR, ctx.full_robustness(a.id)
        parts.append(f"{center}: minR {minR:.6f} full {full:.6f} local {local:.6f}")
        if not minR < full:
            failures.append(f"{center}: minR {minR} not below full {full}")
        if not abs(minR - local) <= 0.05 * local:
            failures.append(f"{center}: minR {minR} vs local-pair {local}")
    _check(5, failures, "; ".join(parts))


# ----------------------------------------------------------------- 6


def test_criterion_6_tracking_accuracy():
    failures = []
    f = translating_center()
    trajs = track(f)
    h = f.mesh.edge_lengths().max()
    if len(trajs) != 1:
        failures.append(f"translating: {len(trajs)} trajectories")
    worst = 0.0
    for n in (n for t in trajs for n in t.nodes if n.frame is not None):
        err = abs(n.x - (0.2 + 0.02 * n.t))
        worst = max(worst, err)
        if err > h:
            failures.append(f"translating: x={n.x:.4f} at t={n.t}")
    g = annihilating_pair()
    trajs = track(g)
    if len(trajs) != 1:
        failures.append(f"annihilating: {len(trajs)} trajectories")
    apex = math.nan
    for t in trajs:
        dt = np.diff(t.times)
        apex = float(t.times.max())
        if not ((dt > 0).any() and (dt < 0).any()):
            failures.append("annihilating: time is monotone")
        if abs(apex - 6.5) > 2 * (g.times[1] - g.times[0]):
            failures.append(f"annihilating: apex {apex} far from 6.5")
    _check(6, failures, f"translating worst |dx| {worst:.2e} (edge {h:.3f}); apex t={apex:.3f}")


# ----------------------------------------------------------------- 7


def _series_trajectory(lvals, k=0.5):
    nodes = [TrajectoryNode(i, 0.0, 0.0, float(i), i, 1, inverse_logistic(v, k), 0, i) for i, v in enumerate(lvals)]
    return Trajectory(0, nodes)


def test_criterion_7_segmentation():
    traj = _series_trajectory([0.9] * 14 + [0.1] * 2 + [0.9] * 15 + [0.1] * 9)
    got = {
        "defaults": len(segment_trajectory(traj, SegmentationConfig())),
        "bridge_gap=0": len(segment_trajectory(traj, SegmentationConfig(bridge_gap=0))),
        "sigma=0.45": len(segment_trajectory(traj, SegmentationConfig(sigma=0.45))),
    }
    want = {"defaults": 3, "bridge_gap=0": 4, "sigma=0.45": 1}
    failures = [f"{k}: {got[k]} pieces, expected {want[k]}" for k in want if got[k] != want[k]]
    _check(7, failures, ", ".join(f"{k} -> {v}" for k, v in got.items()))


# ----------------------------------------------------------------- 8


def _tracked_degree(field):
    cps = [extract_critical_points(fr, field.mesh) for fr in field.frames]
    return [average_degree(slice_annotate(t, cps, {}, field.mesh.diameter)) for t in track(field)]


def test_criterion_8_formula_values():
    failures = []
    if logistic(0.0, 0.5) != 0.0 or logistic(math.inf, 0.5) != 1.0:
        failures.append("logistic limits")
    if abs(logistic(1.0, 0.5) - 0.244919) > 1e-6:
        failures.append(f"l(1; 0.5) = {logistic(1.0, 0.5)}")
    full = Trajectory(0, [TrajectoryNode(i, 0.0, 0.0, float(i), i, 1, math.inf, 0, i) for i in range(5)])
    if stability(full, 0.5, 4.0) != 1.0:
        failures.append(f"b = {stability(full, 0.5, 4.0)}")
    saddle = steady_product_field([Zero(0.5013, 0.4987, -1)], frames=3)
    got = {"center": _tracked_degree(translating_center()), "pair": _tracked_degree(annihilating_pair()), "saddle": _tracked_degree(saddle)}
    for name, want in (("center", 1.0), ("pair", 0.0), ("saddle", -1.0)):
        if got[name] != [want]:
            failures.append(f"{name}: d = {got[name]}, expected {want}")
    _check(8, failures, f"l(1)={logistic(1.0, 0.5):.6f}, d: {got}")


# ----------------------------------------------------------------- 9


def coupled_field(frames=8):
    """A fixed center whose saddle partner recedes; a scalar bump on the center has height g(minR)."""
    mesh = grid_mesh(30, 30)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    center = Zero(0.3013, 0.5007, 1)
    out = []
    for k in range(frames):
        vx, vy = product_field([center, Zero(0.4511 + 0.04 * k, 0.4993, -1)], x, y)
        fr = FieldFrame(k, float(k), np.column_stack([vx, vy]))
        ctx = FrameContext(mesh, fr)
        m = ctx.profile(_nearest(ctx.cps, (center.x, center.y)).id, 10).minR
        bump = (m + 2 * m * m) * np.exp(-((x - center.x) ** 2 + (y - center.y) ** 2) / 0.05**2)
        out.append(FieldFrame(k, float(k), fr.vectors, {"coupled": bump}))
    return TimeVaryingField(mesh, tuple(out))


def test_criterion_9_correlation():
    failures = []
    s = [0.3, 1.7, 0.2, 2.9, 1.1, 0.8]
    if abs(pearson(s, s) - 1.0) > 1e-12 or abs(pearson(s, [-v for v in s]) + 1.0) > 1e-12:
        failures.append("identity correlations")
    f = coupled_field()
    cps = [extract_critical_points(fr, f.mesh) for fr in f.frames]
    minR = {}
    for k, fr in enumerate(f.frames):
        ctx = FrameContext(f.mesh, fr, cps[k])
        minR.update({(k, c.id): ctx.profile(c.id, 10).minR for c in ctx.cps})
    centers = [t for t in track(f) if all(n.x < 0.35 for n in t.nodes)]
    r = math.nan
    if len(centers) != 1:
        failures.append(f"{len(centers)} center trajectories")
    else:
        traj = slice_annotate(centers[0], cps, minR, f.mesh.diameter)
        r, _ = correlate(traj, regional_series(traj, f.frames, f.mesh, "coupled", 0.1))
        if not r > 0.9:
            failures.append(f"coupled correlation {r:.4f}")
    _check(9, failures, f"coupled correlation {r:.4f}")


# ---------------------------------------------------------------- 10


def _pipeline(bundle, out, workers):
    steps = [
        ("extract", "--input", bundle),
        ("robustness", "--input", bundle, "--levels", "10", "--workers", workers),
        ("track", "--input", bundle),
        ("segment",),
        ("filter", "--input", bundle, "--degree-threshold", "-0.2"),
        ("sweep", "--input", bundle, "--k", "0.1,0.5", "--sigma", "0.1,0.2,0.4"),
        ("report",),
    ]
    for step in steps:
        assert cli([str(a) for a in (*step, "--out", out)]) == 0, step
    return {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())}


def test_criterion_10_determinism_and_performance(tmp_path):
    failures = []
    bundle = tmp_path / "bundle"
    assert cli(["synth", "--fixture", "boundary", "--out", str(bundle)]) == 0
    outputs = {w: _pipeline(bundle, tmp_path / f"w{w}", w) for w in (1, 2, 8)}
    timing = {"timing.csv", "timing_boxplot.csv"}
    for w in (2, 8):
        if outputs[w].keys() != outputs[1].keys():
            failures.append(f"workers={w}: file set differs")
        failures += [f"workers={w}: {name} differs" for name in outputs[1] if name not in timing and outputs[w].get(name) != outputs[1][name]]

    rng = np.random.default_rng(7)
    f = random_product_field(rng, 30, grid_mesh(194, 194))
    cps = [extract_critical_points(fr, f.mesh) for fr in f.frames]
    workers = min(8, os.cpu_count() or 1)
    start = time.perf_counter()
    res = run_task_farm(f, plan_tasks(f, cps, 50), workers=workers)
    elapsed = time.perf_counter() - start
    medians = {lev: float(np.median(s)) for lev, s in sorted(res.seconds_by_level().items())}
    if len(f.mesh.triangles) < 75_000 or len(cps[0]) != 30:
        failures.append(f"workload {len(f.mesh.triangles)} triangles, {len(cps[0])} CPs")
    if res.failed or len(medians) != 50:
        failures.append(f"{len(res.failed)} failed tasks, {len(medians)} levels timed")
    if elapsed >= 600:
        failures.append(f"robustness stage took {elapsed:.0f} s")
    if not medians[49] > medians[0]:
        failures.append(f"median task time does not grow: {medians[0]:.2e} -> {medians[49]:.2e}")
    _check(
        10,
        failures,
        f"workers 1/2/8 identical; {len(f.mesh.triangles)} triangles x 30 CPs x 50 levels in {elapsed:.1f} s "
        f"on {workers} worker(s), median per task {medians[0] * 1e3:.2f} ms -> {medians[49] * 1e3:.2f} ms",
    )


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v", "-s"]))
