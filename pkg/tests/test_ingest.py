import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vair.geometry import CameraIntrinsics, PointCloud, Pose, rot_x, rot_y, rot_z
from vair.ingest import (AcousticPing, FrameRecord, ManifestError, PoseOutOfRange, build_apc, load_manifest,
                         ping_to_world, pose_at, save_mask, write_manifest)
from vair.io import save_cloud

I = Pose.identity()


def axis_angle_interp(R0, R1, a):
    """Closed-form geodesic interpolation: R0 exp(a log(R0^T R1)) via Rodrigues."""
    D = R0.T @ R1
    angle = np.arccos(np.clip((np.trace(D) - 1) / 2, -1, 1))
    if angle < 1e-12:
        return R0.copy()
    axis = np.array([D[2, 1] - D[1, 2], D[0, 2] - D[2, 0], D[1, 0] - D[0, 1]]) / (2 * np.sin(angle))
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    th = a * angle
    return R0 @ (np.eye(3) + np.sin(th) * K + (1 - np.cos(th)) * K @ K)


def write_tiny_capture(root, pings_rows=(), mask=True):
    intr = CameraIntrinsics(10, 10, 2, 2, 4, 4)
    if mask:
        save_mask(root / "m0.png", np.eye(4, dtype=bool))
    with open(root / "pings.csv", "w") as fh:
        fh.write("timestamp_s,sensor_id,range_m\n")
        for r in pings_rows:
            fh.write(",".join(map(str, r)) + "\n")
    save_cloud(root / "scene.ply", PointCloud(np.eye(3)))
    frames = [{"t": 0.0, "pose": I.matrix().ravel().tolist(), "intrinsics": intr.to_dict(), "mask": "m0.png"}]
    write_manifest(root / "manifest.json", frames, "pings.csv", "scene.ply", [(0.0, I), (1.0, I)], {0: I})
    return root / "manifest.json"


# load_manifest --------------------------------------------------------------

def test_one_frame_no_pings(tmp_path):
    cap = load_manifest(write_tiny_capture(tmp_path))
    assert len(cap.frames) == 1 and len(cap.pings) == 0 and len(cap.scene_cloud) == 3
    assert np.array_equal(cap.masks()[0], np.eye(4, dtype=bool))


def test_missing_mask_names_path(tmp_path):
    path = write_tiny_capture(tmp_path, mask=False)
    with pytest.raises(ManifestError, match="m0.png"):
        load_manifest(path)


def test_unknown_sensor_names_row(tmp_path):
    path = write_tiny_capture(tmp_path, pings_rows=[(0.1, 0, 1.0), (0.2, 5, 1.0)])
    with pytest.raises(ManifestError, match=r"pings.csv:3"):
        load_manifest(path)


def test_bad_pose_names_entry(tmp_path):
    path = write_tiny_capture(tmp_path)
    doc = json.loads(path.read_text())
    doc["trajectory"][1]["pose"] = [1.0] * 15
    path.write_text(json.dumps(doc))
    with pytest.raises(ManifestError, match=r"trajectory\[1\]"):
        load_manifest(path)


def test_sample_capture_counts(plane_capture):
    _, traj, res = plane_capture
    cap = load_manifest(res.manifest)
    # 20 s sweep: 30 Hz frames 0..600, 10 Hz ping periods 0..200; only the forward
    # sensor has a surface in front of it
    assert len(traj) == 601 and len(cap.frames) == 601
    assert len(cap.pings) == 201
    assert {p.sensor_id for p in cap.pings} == {0}


# pose_at ----------------------------------------------------------------------

def test_pose_at_exact_timestamp():
    traj = [(0.0, I), (1.0, Pose(rot_z(0.3), (1, 2, 3))), (2.0, I)]
    assert pose_at(traj, 1.0) is traj[1][1]


def test_pose_at_translation_midpoint():
    p = pose_at([(0.0, I), (1.0, Pose(np.eye(3), (2, 0, 0)))], 0.5)
    np.testing.assert_allclose(p.translation, [1, 0, 0], atol=1e-15)


def test_pose_at_rotation_midpoint():
    p = pose_at([(0.0, I), (1.0, Pose(rot_z(np.pi / 2)))], 0.5)
    np.testing.assert_allclose(p.rotation, rot_z(np.pi / 4), atol=1e-9)


def test_pose_at_clamps_inside_margin_only():
    traj = [(0.0, I), (1.0, Pose(np.eye(3), (1, 0, 0)))]
    assert pose_at(traj, 1.15) is traj[1][1]
    with pytest.raises(PoseOutOfRange):
        pose_at(traj, 1.3)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.0, 1.0))
def test_slerp_matches_axis_angle(seed, a):
    rng = np.random.default_rng(seed)
    R0 = rot_z(rng.uniform(-3, 3)) @ rot_y(rng.uniform(-1.5, 1.5)) @ rot_x(rng.uniform(-3, 3))
    R1 = rot_z(rng.uniform(-3, 3)) @ rot_y(rng.uniform(-1.5, 1.5)) @ rot_x(rng.uniform(-3, 3))
    if np.arccos(np.clip((np.trace(R0.T @ R1) - 1) / 2, -1, 1)) > np.pi - 1e-3:
        return  # antipodal: geodesic is not unique
    p = pose_at([(0.0, Pose(R0)), (1.0, Pose(R1))], a)
    np.testing.assert_allclose(p.rotation, axis_angle_interp(R0, R1, a), atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_pose_at_is_lookup_on_timestamps(seed):
    rng = np.random.default_rng(seed)
    ts = np.cumsum(rng.uniform(0.01, 1, 6))
    traj = [(float(t), Pose(rot_z(rng.uniform(-3, 3)), rng.normal(size=3))) for t in ts]
    for t, p in traj:
        assert pose_at(traj, t) is p


# ping_to_world ----------------------------------------------------------------

def test_ping_identity():
    assert np.array_equal(ping_to_world(AcousticPing(0.0, 0, 2.0), I), [0, 0, 2])


def test_ping_rotated_sensor():
    # rotation about camera y taking sensor +z to camera +x
    ext = Pose(rot_y(np.pi / 2))
    np.testing.assert_allclose(ping_to_world(AcousticPing(0.0, 0, 2.0, ext), I), [2, 0, 0], atol=1e-9)


def test_ping_zero_range_rejected():
    assert ping_to_world(AcousticPing(0.0, 0, 0.0), I) is None


# build_apc --------------------------------------------------------------------

def test_apc_empty():
    apc = build_apc([], [], [(0.0, I)])
    assert len(apc) == 0 and apc.rejected == 0


def test_apc_three_pings():
    pings = [AcousticPing(0.1 * k, 0, float(k)) for k in (1, 2, 3)]
    apc = build_apc([], pings, [(0.0, I), (1.0, I)])
    assert np.array_equal(apc.points, [[0, 0, 1], [0, 0, 2], [0, 0, 3]])


def test_apc_on_glass_plane(plane_capture):
    scene, _, res = plane_capture
    cap = load_manifest(res.manifest)
    apc = build_apc(cap.frames, cap.pings, cap.trajectory)
    assert len(apc) == len(cap.pings) > 0
    assert np.abs(apc.points[:, 0] - 2.0).max() < 1e-6
    # the simulator's own raycast agrees
    np.testing.assert_allclose(apc.points, res.ping_points, atol=1e-9)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_apc_accounting_and_equivariance(seed):
    rng = np.random.default_rng(seed)
    traj = [(float(t), Pose(rot_z(rng.uniform(-3, 3)) @ rot_x(rng.uniform(-1, 1)), rng.normal(size=3)))
            for t in np.arange(5.0)]
    ext = Pose(rot_y(rng.uniform(-2, 2)), rng.normal(scale=0.1, size=3))
    pings = [AcousticPing(float(t), 0, float(r), ext)
             for t, r in zip(rng.uniform(-1, 5, 30), rng.uniform(-0.5, 5, 30))]
    apc = build_apc([], pings, traj)
    assert len(apc) + apc.rejected == len(pings)

    T = Pose(rot_z(rng.uniform(-3, 3)) @ rot_y(rng.uniform(-1, 1)), rng.normal(size=3))
    moved = build_apc([], pings, [(t, T @ p) for t, p in traj])
    np.testing.assert_allclose(moved.points, T.apply(apc.points), atol=1e-9)
