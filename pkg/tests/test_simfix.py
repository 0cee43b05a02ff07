import numpy as np
import pytest

from vair.geometry import Box, CameraIntrinsics, Pose, look_at
from vair.ingest import build_apc, load_manifest
from vair.simfix import AnalyticScene, SimConfig, capture_plan, glass_plane_fixture, raycast, simulate_capture, sweep
from vair.synthgen import GlassSpec, Rect, SynthConfig, plan_scene

SMALL = CameraIntrinsics(4.0, 4.0, 4.0, 3.0, 8, 6)


def static(pose, seconds=0.3):
    return [(t, pose) for t in np.arange(0, seconds + 1e-9, 1 / 30)]


def test_ping_at_glass_distance(tmp_path):
    scene = glass_plane_fixture(distance=2.0)
    res = simulate_capture(scene, static(look_at((0, 0, 1.5), (1, 0, 1.5))), tmp_path,
                           SimConfig(sensor_yaws=(0.0,), intrinsics=SMALL))
    cap = load_manifest(res.manifest)
    assert len(cap.pings) == 4 and all(p.range == 2.0 for p in cap.pings)


def test_open_space_no_ping(tmp_path):
    scene = glass_plane_fixture(distance=2.0)
    # facing away from the only surface
    res = simulate_capture(scene, static(look_at((1, 0, 1.5), (0, 0, 1.5))), tmp_path,
                           SimConfig(sensor_yaws=(0.0,), intrinsics=SMALL))
    assert res.n_pings == 0


def test_sweep_pings_land_on_pane(plane_capture):
    scene, _, res = plane_capture
    apc = build_apc(*_capture_parts(res))
    on_pane = scene.glass_rects()[0].contains(apc.points, tol=1e-6)
    assert on_pane.sum() >= 90


def _capture_parts(res):
    cap = load_manifest(res.manifest)
    return cap.frames, cap.pings, cap.trajectory


def test_scene_cloud_avoids_glass(plane_capture):
    scene, _, res = plane_capture
    cloud = load_manifest(res.manifest).scene_cloud
    assert len(cloud) == SimConfig().scene_points
    assert not scene.in_glass(cloud.points, tol=1e-6).any()


def test_every_ping_on_a_rectangle(tmp_path):
    plan = plan_scene(3, SynthConfig(), 0)
    res = capture_plan(plan, tmp_path, coverage=0.3)
    scene = AnalyticScene.from_plan(plan)
    apc = build_apc(*_capture_parts(res))
    assert len(apc) > 0
    rects = scene.walls + scene.glass_rects()
    on = np.zeros(len(apc), bool)
    for r in rects:
        on |= r.contains(apc.points, tol=1e-6)
    assert on.all()


def brute_mask(scene, intr, pose):
    """Per-pixel ray/rectangle intersection, one pixel at a time."""
    mask = np.zeros((intr.height, intr.width), bool)
    glass = scene.glass_rects()
    for v in range(intr.height):
        for u in range(intr.width):
            d = pose.rotation @ np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
            o = pose.translation
            best_g, best_o = np.inf, np.inf
            for r in glass + list(scene.walls):
                if d[r.axis] == 0:
                    continue
                t = (r.offset - o[r.axis]) / d[r.axis]
                if t <= 0 or not r.contains(o + t * d, tol=1e-12):
                    continue
                if r in glass:
                    best_g = min(best_g, t)
                elif not any(g.axis == r.axis and g.offset == r.offset and g.contains(o + t * d, tol=0)
                             for g in glass):
                    best_o = min(best_o, t)
            mask[v, u] = best_g < best_o
    return mask


def test_masks_match_brute_force(tmp_path):
    pane = GlassSpec("window", (2.0, 0.3, 1.4), 1.0, 0.8, (-1.0, 0.0, 0.0))
    walls = [Rect(0, 2.0, (-2.0, 0.0), (2.0, 3.0)), Rect(1, 1.0, (0.0, 0.0), (1.5, 3.0))]
    scene = AnalyticScene(walls, [pane], Box((0, -2, 0), (3, 2, 3)))
    intr = CameraIntrinsics(6.0, 6.0, 8.0, 6.0, 16, 12)
    traj = [(0.0, look_at((0.2, -0.5, 1.2), (2, 0.4, 1.5))), (1 / 30, look_at((0.3, -0.4, 1.3), (2, 0.2, 1.4)))]
    res = simulate_capture(scene, traj, tmp_path, SimConfig(intrinsics=intr))
    cap = load_manifest(res.manifest)
    for f, m in zip(cap.frames, cap.masks()):
        want = brute_mask(scene, intr, f.pose)
        assert want.any()
        assert np.array_equal(m, want)


def test_raycast_hole_in_wall():
    scene = glass_plane_fixture()
    t_op, t_gl = raycast(scene, [[0.5, 0, 1.5], [0.5, 1.8, 1.5]], [[1, 0, 0], [1, 0, 0]])
    assert np.isinf(t_op[0]) and t_gl[0] == 1.5
    assert t_op[1] == 1.5 and np.isinf(t_gl[1])


def test_deterministic(tmp_path):
    scene = glass_plane_fixture()
    traj = sweep((0.5, -0.5, 1.5), (0.5, 0.5, 1.5), 1.0, (1, 0, 0))
    for d in ("a", "b"):
        simulate_capture(scene, traj, tmp_path / d, SimConfig(intrinsics=SMALL, seed=4))
    for name in ("manifest.json", "pings.csv", "scene.ply", "masks/frame_00010.png"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_trajectory_outside_bounds_rejected(tmp_path):
    with pytest.raises(ValueError):
        simulate_capture(glass_plane_fixture(), static(Pose(np.eye(3), (9, 0, 1))), tmp_path)


def test_scene_rectangles_within_bounds():
    with pytest.raises(ValueError):
        AnalyticScene([Rect(0, 5.0, (0, 0), (1, 1))], [], Box((0, 0, 0), (3, 3, 3)))
