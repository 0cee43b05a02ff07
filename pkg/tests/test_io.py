import struct

import numpy as np
import pytest

from vair.geometry import Box, DensityGrid, PointCloud, TriMesh
from vair.io import (PlyError, load_cloud, load_grid, load_mesh, load_obj, read_ply, save_cloud, save_grid,
                     save_mesh_ply, save_obj, write_ply)


@pytest.mark.parametrize("binary", [True, False])
def test_cloud_roundtrip_with_colors(tmp_path, binary, rng):
    pts = rng.uniform(-3, 3, (100, 3)).astype(np.float32).astype(np.float64)
    cols = rng.integers(0, 256, (100, 3))
    save_cloud(tmp_path / "c.ply", PointCloud(pts, cols), binary=binary)
    back = load_cloud(tmp_path / "c.ply")
    assert np.array_equal(back.points, pts)
    assert np.array_equal(back.colors, cols)


def test_binary_layout_is_float32_le(tmp_path):
    save_cloud(tmp_path / "c.ply", PointCloud([[1.0, 2.0, 3.0]]))
    raw = (tmp_path / "c.ply").read_bytes()
    head, body = raw.split(b"end_header\n")
    assert b"format binary_little_endian 1.0" in head
    assert b"property float x" in head
    assert struct.unpack("<3f", body) == (1.0, 2.0, 3.0)


def test_extra_property_roundtrip(tmp_path):
    pts = np.zeros((4, 3))
    write_ply(tmp_path / "f.ply", pts, extra={"field": np.array([0, 1, 1, 0], np.uint8)})
    _, extra = load_cloud(tmp_path / "f.ply", with_extra=True)
    assert extra["field"].tolist() == [0, 1, 1, 0]


def test_bad_ply_rejected(tmp_path):
    (tmp_path / "x.ply").write_bytes(b"not a ply\n")
    with pytest.raises(PlyError):
        read_ply(tmp_path / "x.ply")


def test_mesh_ply_and_obj_roundtrip(tmp_path):
    mesh = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2], [0, 1, 3], [1, 2, 3]])
    save_mesh_ply(tmp_path / "m.ply", mesh)
    save_obj(tmp_path / "m.obj", mesh)
    for m in (load_mesh(tmp_path / "m.ply"), load_obj(tmp_path / "m.obj")):
        assert np.array_equal(m.vertices, mesh.vertices)
        assert np.array_equal(m.faces, mesh.faces)


def test_obj_quads_are_triangulated(tmp_path):
    (tmp_path / "q.obj").write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    m = load_obj(tmp_path / "q.obj")
    assert len(m.faces) == 2 and m.area() == pytest.approx(1.0)


def test_grid_byte_layout(tmp_path):
    vals = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    grid = DensityGrid(vals, Box((0, 1, 2), (3, 4, 5)))
    save_grid(tmp_path / "g.vgrd", grid)
    raw = (tmp_path / "g.vgrd").read_bytes()
    assert raw[:4] == b"VGRD" and raw[4] == 1
    assert struct.unpack_from("<3I", raw, 5) == (2, 3, 4)
    assert struct.unpack_from("<6d", raw, 17) == (0, 1, 2, 3, 4, 5)
    body = np.frombuffer(raw, "<f4", offset=17 + 48)
    # x varies fastest
    assert body[:3].tolist() == [vals[0, 0, 0], vals[1, 0, 0], vals[0, 1, 0]]
    back = load_grid(tmp_path / "g.vgrd")
    assert np.array_equal(back.values, vals) and back.bounds == grid.bounds


def test_grid_truncated_rejected(tmp_path):
    save_grid(tmp_path / "g.vgrd", DensityGrid(np.zeros((2, 2, 2)), Box((0, 0, 0), (1, 1, 1))))
    (tmp_path / "t.vgrd").write_bytes((tmp_path / "g.vgrd").read_bytes()[:-4])
    with pytest.raises(ValueError):
        load_grid(tmp_path / "t.vgrd")
