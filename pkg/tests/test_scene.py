import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mldsim.scene import (
    AABB,
    HumanConfig,
    HumanTrajectory,
    SceneConfig,
    SemanticClass,
    advance_human,
    advance_world,
    build_world,
    dump_cloud,
    expected_cloud_size,
    load_cloud,
    scene_primitives,
    synth_cloud,
)
from oracles import box_surface_grid

coords = st.floats(-3, 3, allow_nan=False)


def test_ping_pong_single_segment_example():
    traj = HumanTrajectory(np.array([[0.0, 0, 0], [2.0, 0, 0]]), np.array([1.0]))
    # 2 s out, then 1 s back: 1 m from the far end
    np.testing.assert_allclose(advance_human(traj, 3.0), [1.0, 0, 0])
    np.testing.assert_allclose(advance_human(traj, 3.5), [0.5, 0, 0])
    np.testing.assert_allclose(advance_human(traj, 4.0), [0.0, 0, 0], atol=1e-12)
    assert traj.period == 4.0


def test_ping_pong_two_segments_uses_segment_speeds():
    traj = HumanTrajectory(np.array([[0.0, 0, 0], [1.0, 0, 0], [1.0, 1.0, 0]]), np.array([1.0, 0.5]))
    np.testing.assert_allclose(advance_human(traj, 2.0), [1.0, 0.5, 0])
    # one-way time 3 s: t = 4 is 1 s into the return leg, t = 5 is 2 s
    np.testing.assert_allclose(advance_human(traj, 4.0), [1.0, 0.5, 0])
    np.testing.assert_allclose(advance_human(traj, 5.0), [1.0, 0.0, 0])
    with pytest.raises(ValueError):
        advance_human(traj, -1.0)


def test_trajectory_validation():
    with pytest.raises(ValueError):
        HumanTrajectory(np.array([[0.0, 0, 0]]), np.array([]))
    with pytest.raises(ValueError):
        HumanTrajectory(np.array([[0.0, 0, 0], [1.0, 0, 0]]), np.array([0.0]))


def test_advance_world_forty_steps_at_velocity_limit():
    w = build_world(SceneConfig())
    q0 = [q.copy() for q in w.joints]
    for _ in range(40):
        w = advance_world(w, [np.full(6, 5.0), np.full(6, -5.0)], 0.1)
    assert w.time == pytest.approx(4.0)
    for arm, q, start in zip(w.arms, w.joints, q0):
        assert np.all(np.abs(q - start) <= 4.0 + 1e-9)
        assert np.all(q >= arm.joint_limits[:, 0]) and np.all(q <= arm.joint_limits[:, 1])


def test_default_cloud_contains_every_class_and_expected_size():
    w = build_world(SceneConfig())
    cloud = synth_cloud(w, 400.0, 0.005, 0.0, np.random.default_rng(0))
    assert len(cloud) == expected_cloud_size(w, 400.0)
    assert set(np.unique(cloud.labels)) == {c.value for c in SemanticClass}
    assert len(cloud.of_class(SemanticClass.Robot)) == 400  # 2 links x 100 points x 2 arms


def test_human_disabled_has_no_human_points():
    cfg = SceneConfig(human=HumanConfig(enabled=False))
    cloud = synth_cloud(build_world(cfg), 400.0, 0.0, 0.0, np.random.default_rng(1))
    assert len(cloud.of_class(SemanticClass.Human)) == 0


def test_density_doubling_per_primitive_ceiling():
    w = build_world(SceneConfig())
    for prim, _ in scene_primitives(w):
        n1 = math.ceil(prim.surface_area * 300.0)
        n2 = math.ceil(prim.surface_area * 600.0)
        assert abs(n2 - 2 * n1) <= 1
    n1, n2 = expected_cloud_size(w, 300.0), expected_cloud_size(w, 600.0)
    links = 400
    assert abs((n2 - links) - 2 * (n1 - links)) <= len(scene_primitives(w))


def test_label_flip_rate_concentration():
    w = build_world(SceneConfig())
    rng = np.random.default_rng(5)
    clean = synth_cloud(w, 1000.0, 0.0, 0.0, np.random.default_rng(5))
    noisy = synth_cloud(w, 1000.0, 0.0, 0.1, rng)
    n = 10_000
    frac = np.mean(clean.labels[:n] != noisy.labels[:n])
    assert abs(frac - 0.1) < 0.02


def test_noise_free_points_lie_on_surfaces():
    w = build_world(SceneConfig(human=HumanConfig(enabled=False)))
    rng = np.random.default_rng(2)
    box = w.boxes[0].box
    pts = box.sample_surface(500, rng)
    np.testing.assert_allclose(box.closest_surface_point(pts), pts, atol=1e-12)


def test_cloud_csv_roundtrip(tmp_path):
    w = build_world(SceneConfig())
    cloud = synth_cloud(w, 50.0, 0.01, 0.05, np.random.default_rng(3))
    path = tmp_path / "cloud.csv"
    dump_cloud(path, cloud, header_lines=["config_hash: abc"])
    lines = path.read_text().splitlines()
    assert lines[0] == "# config_hash: abc"
    assert lines[1] == "x,y,z,label"
    back = load_cloud(path)
    np.testing.assert_array_equal(back.labels, cloud.labels)
    np.testing.assert_allclose(back.points, cloud.points, atol=1e-6)


def test_closest_point_against_dense_grid():
    rng = np.random.default_rng(11)
    box = AABB([0.2, -0.1, 0.5], [0.4, 0.3, 0.2])
    grid, spacing = box_surface_grid(box.lo, box.hi, 1700)
    assert len(grid) >= 10_000
    for p in rng.uniform(-1, 1, (50, 3)) + box.center:
        analytic = float(np.linalg.norm(box.closest_surface_point(p)[0] - p))
        sampled = float(np.min(np.linalg.norm(grid - p, axis=1)))
        assert analytic <= sampled + 1e-12
        assert sampled - analytic < spacing


def test_closest_point_interior_goes_to_nearest_face():
    box = AABB([0, 0, 0], [2, 2, 2])
    np.testing.assert_allclose(box.closest_surface_point([0.9, 0.1, 0.0])[0], [1.0, 0.1, 0.0])
    np.testing.assert_allclose(box.closest_surface_point([0.1, 0.2, -0.95])[0], [0.1, 0.2, -1.0])


@settings(max_examples=80, deadline=None)
@given(coords, coords, coords)
def test_closest_point_is_on_surface_and_minimal(x, y, z):
    box = AABB([0.3, -0.2, 0.1], [0.6, 0.5, 0.4])
    p = np.array([x, y, z])
    c = box.closest_surface_point(p)[0]
    on_face = np.isclose(c, box.lo, atol=1e-12) | np.isclose(c, box.hi, atol=1e-12)
    assert on_face.any()
    assert np.all(c >= box.lo - 1e-12) and np.all(c <= box.hi + 1e-12)
    # no box corner is closer than the reported point
    corners = np.array([[a, b, d] for a in (box.lo[0], box.hi[0]) for b in (box.lo[1], box.hi[1])
                        for d in (box.lo[2], box.hi[2])])
    assert np.linalg.norm(c - p) <= np.min(np.linalg.norm(corners - p, axis=1)) + 1e-12


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 100, allow_nan=False))
def test_human_stays_on_path_segment_hull(t):
    traj = HumanTrajectory(np.array([[-0.9, 3.2, 0.9], [-0.9, 2.2, 0.9], [-0.9, 1.2, 0.9]]), np.array([0.8, 0.3]))
    p = advance_human(traj, t)
    assert p[0] == pytest.approx(-0.9) and p[2] == pytest.approx(0.9)
    assert 1.2 - 1e-12 <= p[1] <= 3.2 + 1e-12
    # periodic
    np.testing.assert_allclose(advance_human(traj, t + traj.period), p, atol=1e-9)
