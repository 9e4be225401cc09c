import logging
import math
from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from mlrobust.critical_points import extract_critical_points
from mlrobust.field import FieldFrame, TimeVaryingField, TriangleMesh, grid_mesh
from mlrobust.synth import annihilating_pair, random_product_field, translating_center
from mlrobust.tracking import (
    Trajectory,
    TrajectoryNode,
    build_spacetime_mesh,
    read_trajectories_json,
    slice_annotate,
    track,
    write_trajectories_json,
)


def steady(mesh, vec, frames=5):
    return TimeVaryingField(mesh, tuple(FieldFrame(k, float(k), vec) for k in range(frames)))


def test_two_triangles_one_interval_give_six_tets():
    mesh = TriangleMesh([[0, 0], [1, 0], [1, 1], [0, 1]], [[0, 1, 2], [0, 2, 3]])
    st_mesh = build_spacetime_mesh(steady(mesh, np.ones((4, 2)), frames=2))
    assert len(st_mesh) == 6
    tet = st_mesh[0]
    assert tet.points.shape == (4, 3) and tet.local == 0


def test_tet_count_scales_with_frames_and_triangles():
    mesh = grid_mesh(7, 5)
    st_mesh = build_spacetime_mesh(steady(mesh, np.ones((mesh.n_vertices, 2)), frames=36))
    assert len(st_mesh) == 35 * mesh.n_triangles * 3


def test_spacetime_mesh_is_conforming():
    mesh = TriangleMesh(*_irregular())
    st_mesh = build_spacetime_mesh(steady(mesh, np.ones((mesh.n_vertices, 2)), frames=4))
    pts = st_mesh.points
    faces = Counter()
    for tet in st_mesh.tets:
        p = pts[tet]
        vol = np.linalg.det(np.stack([p[1] - p[0], p[2] - p[0], p[3] - p[0]]))
        assert abs(vol) > 1e-12
        s = sorted(tet.tolist())
        for drop in range(4):
            faces[tuple(s[:drop] + s[drop + 1 :])] += 1
    assert set(faces.values()) <= {1, 2}
    boundary = sum(1 for c in faces.values() if c == 1)
    n_boundary_edges = sum(1 for c in Counter(tuple(sorted(e)) for t in mesh.triangles for e in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0]))).values() if c == 1)
    assert boundary == 2 * mesh.n_triangles + 2 * n_boundary_edges * 3


def _irregular():
    rng = np.random.default_rng(4)
    g = grid_mesh(5, 5)
    v = g.vertices.copy()
    inner = (v > 0).all(axis=1) & (v < 1).all(axis=1)
    v[inner] += rng.uniform(-0.05, 0.05, size=(inner.sum(), 2))
    perm = rng.permutation(len(v))
    inv = np.argsort(perm)
    return v[perm], inv[g.triangles]


def test_steady_cp_is_a_vertical_line():
    mesh = grid_mesh(12, 12)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    vec = np.column_stack([-(y - 0.4871), x - 0.5317])
    (traj,) = track(steady(mesh, vec))
    assert not traj.closed
    xs = np.array([n.x for n in traj.nodes])
    ys = np.array([n.y for n in traj.nodes])
    assert np.ptp(xs) <= 1e-9 and np.ptp(ys) <= 1e-9
    assert traj.nodes[0].t == 0.0 and traj.nodes[-1].t == 4.0
    assert [n.frame for n in traj.nodes if n.frame is not None] == [0, 1, 2, 3, 4]


def test_translating_center_follows_the_analytic_path():
    f = translating_center()
    (traj,) = track(f)
    h = f.mesh.edge_lengths().max()
    slice_nodes = [n for n in traj.nodes if n.frame is not None]
    assert len(slice_nodes) == f.T
    for n in slice_nodes:
        assert abs(n.x - (0.2 + 0.02 * n.t)) <= h
        assert abs(n.y - 0.5) <= h


def test_annihilating_pair_turns_back_in_time():
    f = annihilating_pair()
    (traj,) = track(f)
    t = traj.times
    assert (np.diff(t) > 0).any() and (np.diff(t) < 0).any()
    assert abs(t.max() - 6.5) <= 2.0


def _on_boundary(node, f):
    lo, hi = f.mesh.vertices.min(axis=0), f.mesh.vertices.max(axis=0)
    return node.t in (f.times[0], f.times[-1]) or min(abs(node.x - lo[0]), abs(node.x - hi[0]), abs(node.y - lo[1]), abs(node.y - hi[1])) <= 1e-12


@settings(max_examples=12, deadline=None)
@given(st.integers(0, 100_000))
def test_slices_and_endpoints_on_drifting_fields(seed):
    f = random_product_field(np.random.default_rng(seed), 5, grid_mesh(16, 16), frames=4, drift=0.03)
    trajs = track(f)
    tol = 1e-6 * f.mesh.diameter
    for k, fr in enumerate(f.frames):
        cps = sorted(c.position for c in extract_critical_points(fr, f.mesh))
        hits = sorted((n.x, n.y) for t in trajs for n in t.nodes if n.frame == k)
        assert len(cps) == len(hits)
        assert all(math.dist(a, b) <= tol for a, b in zip(cps, hits))
    for t in trajs:
        if not t.closed:
            assert _on_boundary(t.nodes[0], f) and _on_boundary(t.nodes[-1], f)


def test_tracking_is_deterministic():
    f = random_product_field(np.random.default_rng(9), 6, grid_mesh(16, 16), frames=5, drift=0.02)
    a = [t.to_dict() for t in track(f)]
    b = [t.to_dict() for t in track(f)]
    assert a == b


def _line(times, frames):
    return Trajectory(3, [TrajectoryNode(i, 0.5, 0.5, t, fr) for i, (t, fr) in enumerate(zip(times, frames))])


def test_slice_annotate_steady_and_interior_rule():
    mesh = grid_mesh(12, 12)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    f = steady(mesh, np.column_stack([x - 0.5, y - 0.5]), frames=6)
    cps = [extract_critical_points(fr, mesh) for fr in f.frames]
    minR = {(k, 0): 0.25 for k in range(6)}
    (traj,) = track(f)
    ann = slice_annotate(traj, cps, minR, mesh.diameter)
    assert len(ann.annotated_nodes) == 6
    assert {n.minR for n in ann.nodes} == {0.25}

    minR = {(k, 0): float(k) for k in range(6)}
    t = _line([3.0, 3.2, 3.5, 4.0, 3.8], [3, None, None, 4, None])
    ann = slice_annotate(t, cps, minR, mesh.diameter)
    assert [n.minR for n in ann.nodes] == [3.0, 3.0, 3.0, 4.0, 4.0]


def test_unmatched_slice_node_warns(caplog):
    mesh = grid_mesh(12, 12)
    x, y = mesh.vertices[:, 0], mesh.vertices[:, 1]
    f = steady(mesh, np.column_stack([x - 0.5, y - 0.5]), frames=2)
    cps = [extract_critical_points(fr, mesh) for fr in f.frames]
    t = Trajectory(0, [TrajectoryNode(0, 0.9, 0.9, 0.0, 0), TrajectoryNode(1, 0.5, 0.5, 1.0, 1)])
    with caplog.at_level(logging.WARNING):
        ann = slice_annotate(t, cps, {(0, 0): 1.0, (1, 0): 2.0}, mesh.diameter)
    assert "no CP within tolerance" in caplog.text
    assert ann.nodes[0].minR is None and not ann.nodes[0].annotated and ann.nodes[1].annotated
    assert ann.nodes[0].anchor == 1


def test_json_round_trip(tmp_path):
    t = _line([0.0, 0.5, 1.0], [0, None, 1])
    t.nodes[0].minR, t.nodes[0].degree, t.nodes[0].cp_id = math.inf, 1, 0
    t.nodes[2].minR, t.nodes[2].degree, t.nodes[2].cp_id = 0.5, 1, 0
    write_trajectories_json(tmp_path / "t.json", [t])
    (back,) = read_trajectories_json(tmp_path / "t.json")
    assert back.nodes[0].minR == math.inf and back.nodes[2].minR == 0.5
    assert [n.anchor for n in back.nodes] == [0, 0, 2]
