import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vair.geometry import Box, PointCloud, TriMesh
from vair.synthgen import (GLASS_KINDS, GlassSpec, Rect, RoomSpec, SynthConfig, build_room, carve_glass, crop_scene,
                           generate_room, load_dataset, make_dataset, plan_scene, sample_free_space, sample_surface)


# generate_room ----------------------------------------------------------------

def test_bare_room_has_six_rectangles():
    room = build_room(RoomSpec(1, (4.0, 5.0), 3.0, clutter_count=0))
    assert len(room.surfaces) == 6
    assert len(room.mesh().faces) == 12


def test_room_deterministic():
    a = generate_room(RoomSpec(7, (4.0, 5.0), 3.0, clutter_count=3))
    b = generate_room(RoomSpec(7, (4.0, 5.0), 3.0, clutter_count=3))
    assert np.array_equal(a.vertices, b.vertices) and np.array_equal(a.faces, b.faces)


def test_room_area():
    assert generate_room(RoomSpec(0, (4.0, 4.0), 3.0)).area() == pytest.approx(2 * 16 + 4 * 12, abs=1e-6)


def test_room_spec_validated():
    with pytest.raises(ValueError):
        RoomSpec(0, (2.0, 4.0), 3.0)


# crop_scene ---------------------------------------------------------------------

def test_crop_inside_unchanged():
    mesh = Rect(2, 1.0, (0.5, 0.5), (1.5, 2.0)).to_mesh()
    out = crop_scene(mesh, (0, 0, 0))
    assert np.array_equal(out.vertices, mesh.vertices) and np.array_equal(out.faces, mesh.faces)


def test_crop_clips_plane_to_box():
    plane = Rect(1, 1.0, (-5.0, -5.0), (5.0, 5.0)).to_mesh()
    out = crop_scene(plane, (0, 0, 0))
    assert out.area() == pytest.approx(12.0, abs=1e-9)
    np.testing.assert_allclose(out.vertices.min(axis=0), [0, 1, 0], atol=1e-12)
    np.testing.assert_allclose(out.vertices.max(axis=0), [3, 1, 4], atol=1e-12)


def test_crop_disjoint_raises():
    with pytest.raises(ValueError):
        crop_scene(Rect(2, 1.0, (0, 0), (1, 1)).to_mesh(), (10, 10, 10))


# sample_surface ----------------------------------------------------------------

def test_single_triangle_sample_inside():
    tri = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0.0]])
    p = sample_surface(TriMesh(tri, [[0, 1, 2]]), 1, np.random.default_rng(0)).points[0]
    assert p[2] == 0 and p[0] >= 0 and p[1] >= 0 and p[0] + p[1] <= 1


def test_area_weighted_counts():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0], [5, 0, 0], [8, 0, 0], [5, 2, 0.0]])
    mesh = TriMesh(v, [[0, 1, 2], [3, 4, 5]])  # areas 1 and 3
    _, face = sample_surface(mesh, 100_000, np.random.default_rng(1), return_faces=True)
    counts = np.bincount(face)
    assert abs(counts[0] - 25_000) / 25_000 < 0.02
    assert abs(counts[1] - 75_000) / 75_000 < 0.02


def test_sampling_deterministic():
    mesh = generate_room(RoomSpec(3, (4.0, 4.0), 3.0, 2))
    a = sample_surface(mesh, 500, np.random.default_rng(5)).points
    b = sample_surface(mesh, 500, np.random.default_rng(5)).points
    assert np.array_equal(a, b)


# carve_glass --------------------------------------------------------------------

def wall_cloud(n=10_000, seed=0):
    rng = np.random.default_rng(seed)
    return PointCloud(Rect(0, 0.0, (0.0, 0.0), (3.0, 4.0)).sample(n, rng))


def test_no_specs_nothing_carved():
    c = wall_cloud()
    xs, xt = carve_glass(c, [])
    assert len(xt) == 0 and np.array_equal(xs.points, c.points)


def test_full_pane_removes_wall():
    spec = GlassSpec("full_pane", (0.0, 1.5, 2.0), 3.0, 4.0, (1.0, 0.0, 0.0))
    xs, xt = carve_glass(wall_cloud(), [spec], margin=0.05)
    assert not np.any(np.abs(xs.points[:, 0]) < 0.05)
    assert len(xt) == 10_000


def test_window_area_ratio():
    spec = GlassSpec("window", (0.0, 1.5, 2.0), 1.0, 1.0, (1.0, 0.0, 0.0))
    xs, xt = carve_glass(wall_cloud(), [spec])
    assert abs(len(xt) / (len(xt) + len(xs)) - 1 / 12) / (1 / 12) < 0.2


def test_glass_off_wall_rejected():
    spec = GlassSpec("window", (1.0, 1.5, 2.0), 1.0, 1.0, (1.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        carve_glass(wall_cloud(), [spec])


# sample_free_space ------------------------------------------------------------------

def test_free_space_no_surfaces():
    b = Box((0, 0, 0), (3, 3, 4))
    pts = sample_free_space(b, 500, np.zeros((0, 3)), 0.1, np.random.default_rng(0)).points
    assert len(pts) == 500 and b.contains(pts).all()


def test_free_space_too_crowded():
    b = Box((0, 0, 0), (0.1, 0.1, 0.1))
    with pytest.raises(RuntimeError):
        sample_free_space(b, 10, np.array([[0.05, 0.05, 0.05]]), 1.0, np.random.default_rng(0))


def test_free_space_clearance():
    rng = np.random.default_rng(0)
    plane = Rect(0, 1.5, (0.0, 0.0), (3.0, 4.0)).sample(20_000, rng)
    pts = sample_free_space(Box((0, 0, 0), (3, 3, 4)), 2000, plane, 0.1, rng).points
    # brute force against every surface point
    d = np.sqrt(((pts[:, None, :] - plane[None, ::4, :]) ** 2).sum(-1)).min(axis=1)
    assert np.all(d >= 0.1)
    assert not np.any(np.abs(pts[:, 0] - 1.5) < 0.1 - 0.02)


# datasets ----------------------------------------------------------------------------

SMALL = SynthConfig(points_per_scene=2000)


def test_single_scene_deterministic():
    a, = make_dataset(1, SMALL, seed=3)
    b, = make_dataset(1, SMALL, seed=3)
    assert np.array_equal(a.scene_samples.points, b.scene_samples.points)
    assert np.array_equal(a.trans_samples.points, b.trans_samples.points)
    check_pair(a, SMALL)


def check_pair(pair, cfg):
    sm = cfg.sigma_max
    for s in (pair.scene_samples, pair.trans_samples):
        assert set(np.unique(s.density)) <= {0.0, sm}
        assert pair.bounds.contains(s.points, tol=1e-9).all()
    n_s = int((pair.scene_samples.density == sm).sum())
    n_t = int((pair.trans_samples.density == sm).sum())
    assert n_s + n_t == cfg.points_per_scene
    xt = pair.trans_samples.points[pair.trans_samples.density == sm]
    near = np.zeros(len(xt), bool)
    for g in pair.plan.glass:
        r = g.rect()
        near |= (np.abs(xt[:, r.axis] - r.offset) < cfg.carve_margin) & r.in_extent(xt)
    assert near.all()


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10_000))
def test_pair_invariants(seed):
    pair, = make_dataset(1, SMALL, seed=seed)
    check_pair(pair, SMALL)


def test_glass_counts_over_64_scenes():
    cfg = SynthConfig()
    counts = [len(plan_scene(i, cfg, 0).glass) for i in range(64)]
    assert min(counts) >= 1 and max(counts) <= 3


def test_glass_kind_frequencies():
    cfg = SynthConfig()
    kinds = Counter()
    for i in range(1000):
        kinds.update(g.kind for g in plan_scene(i, cfg, 11).glass)
    total = sum(kinds.values())
    for k in GLASS_KINDS:
        assert abs(kinds[k] / total - 1 / 3) < 0.05, kinds


def test_dataset_roundtrip(tmp_path):
    pairs = make_dataset(2, SMALL, seed=5, out=tmp_path / "ds")
    idx = json.loads((tmp_path / "ds" / "dataset.json").read_text())
    assert idx["scenes"] == ["scene_00000", "scene_00001"]
    for name in idx["scenes"]:
        assert {p.name for p in (tmp_path / "ds" / name).iterdir()} == {"scene.ply", "trans.ply", "free.ply",
                                                                       "meta.json"}
    back = load_dataset(tmp_path / "ds")
    for a, b in zip(pairs, back):
        assert a.bounds == b.bounds
        # PLY stores float32
        np.testing.assert_allclose(np.sort(a.trans_samples.points, 0), np.sort(b.trans_samples.points, 0), atol=1e-6)
        assert np.array_equal(np.sort(a.scene_samples.density), np.sort(b.scene_samples.density))


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        SynthConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        SynthConfig(glass_count=(0, 2))
