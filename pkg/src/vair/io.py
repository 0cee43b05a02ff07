"""PLY / OBJ / VGRD readers and writers."""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .geometry import Box, DensityGrid, PointCloud, TriMesh

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}
_NP_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
              "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


class PlyError(ValueError):
    pass


def write_ply(path, points, colors=None, extra: Optional[dict] = None, faces=None,
              binary: bool = True) -> None:
    """Write vertices (x/y/z float32, optional red/green/blue uchar, optional extra
    scalar properties) and optional triangle faces."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    extra = {k: _ply_scalar(v) for k, v in (extra or {}).items()}
    for name, arr in extra.items():
        fields.append((name, arr.dtype.str))
    vert = np.empty(n, dtype=fields)
    vert["x"], vert["y"], vert["z"] = points[:, 0], points[:, 1], points[:, 2]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(-1, 3)
        vert["red"], vert["green"], vert["blue"] = colors.T
    for name, arr in extra.items():
        vert[name] = arr

    lines = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0",
             f"element vertex {n}"]
    for name, dt in fields:
        lines.append(f"property {_NP_TO_PLY[np.dtype(dt).str[1:]]} {name}")
    if faces is not None:
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        lines += [f"element face {len(faces)}", "property list uchar int vertex_indices"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            fh.write(vert.tobytes())
            if faces is not None:
                frec = np.empty(len(faces), dtype=[("n", "u1"), ("v", "<i4", 3)])
                frec["n"] = 3
                frec["v"] = faces
                fh.write(frec.tobytes())
        else:
            out = []
            for row in vert:
                out.append(" ".join(_fmt(v) for v in row.tolist()))
            if faces is not None:
                out.extend(f"3 {a} {b} {c}" for a, b, c in faces.tolist())
            fh.write(("\n".join(out) + ("\n" if out else "")).encode("ascii"))


def _ply_scalar(arr) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub" and arr.dtype.itemsize > 4 or arr.dtype.kind == "b":
        arr = arr.astype(np.int32)
    return arr.astype(arr.dtype.newbyteorder("<"))


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(float(np.float32(v)))
    return str(v)


def read_ply(path) -> dict:
    """Parse a PLY file. Returns ``{"vertex": structured array, "faces": (M, 3) or None}``."""
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError(f"{path}: not a PLY file")
    nl = data.index(b"\n", end)
    header = data[:nl].decode("ascii").splitlines()
    body = data[nl + 1:]

    fmt = None
    elements = []
    for line in header[1:]:
        tok = line.split()
        if not tok or tok[0] in ("comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append([tok[1], int(tok[2]), []])
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"{path}: property before element")
            if tok[1] == "list":
                elements[-1][2].append(("list", tok[2], tok[3], tok[4]))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise PlyError(f"{path}: unknown property type {tok[1]}")
                elements[-1][2].append((tok[2], tok[1]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"{path}: unsupported format {fmt}")

    out = {"vertex": None, "faces": None}
    if fmt == "ascii":
        tokens = body.decode("ascii").split()
        pos = 0
        for name, count, props in elements:
            if props and props[0][0] == "list":
                faces = []
                for _ in range(count):
                    k = int(tokens[pos])
                    faces.append([int(t) for t in tokens[pos + 1:pos + 1 + k]])
                    pos += 1 + k
                if name == "face":
                    out["faces"] = _triangulate(faces)
            else:
                dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
                width = len(props)
                rows = np.array(tokens[pos:pos + count * width], dtype=np.float64).reshape(count, width)
                pos += count * width
                arr = np.empty(count, dtype=dt)
                for c, p in enumerate(props):
                    arr[p[0]] = rows[:, c]
                if name == "vertex":
                    out["vertex"] = arr
    else:
        pos = 0
        for name, count, props in elements:
            if props and props[0][0] == "list":
                _, ctype, itype, _ = props[0]
                cdt, idt = np.dtype("<" + _PLY_TYPES[ctype]), np.dtype("<" + _PLY_TYPES[itype])
                faces = []
                for _ in range(count):
                    k = int(np.frombuffer(body, cdt, 1, pos)[0])
                    pos += cdt.itemsize
                    faces.append(np.frombuffer(body, idt, k, pos).tolist())
                    pos += k * idt.itemsize
                if name == "face":
                    out["faces"] = _triangulate(faces)
            else:
                dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
                if pos + count * dt.itemsize > len(body):
                    raise PlyError(f"{path}: truncated {name} data")
                arr = np.frombuffer(body, dt, count, pos).copy()
                pos += count * dt.itemsize
                if name == "vertex":
                    out["vertex"] = arr
    if out["vertex"] is None:
        raise PlyError(f"{path}: no vertex element")
    return out


def _triangulate(polys) -> np.ndarray:
    tris = []
    for p in polys:
        for i in range(1, len(p) - 1):
            tris.append((p[0], p[i], p[i + 1]))
    return np.array(tris, dtype=np.int64).reshape(-1, 3)


def _xyz(vert) -> np.ndarray:
    return np.stack([vert["x"], vert["y"], vert["z"]], axis=1).astype(np.float64)


def save_cloud(path, cloud: PointCloud, binary: bool = True, extra: Optional[dict] = None) -> None:
    write_ply(path, cloud.points, cloud.colors, extra=extra, binary=binary)


def load_cloud(path, with_extra: bool = False):
    ply = read_ply(path)
    vert = ply["vertex"]
    names = vert.dtype.names
    colors = None
    if all(c in names for c in ("red", "green", "blue")):
        colors = np.stack([vert["red"], vert["green"], vert["blue"]], axis=1)
    cloud = PointCloud(_xyz(vert), colors)
    if not with_extra:
        return cloud
    extra = {k: vert[k].copy() for k in names if k not in ("x", "y", "z", "red", "green", "blue")}
    return cloud, extra


def save_mesh_ply(path, mesh: TriMesh, binary: bool = True) -> None:
    write_ply(path, mesh.vertices, faces=mesh.faces, binary=binary)


def load_mesh(path) -> TriMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return load_obj(path)
    ply = read_ply(path)
    faces = ply["faces"] if ply["faces"] is not None else np.zeros((0, 3), dtype=np.int64)
    return TriMesh(_xyz(ply["vertex"]), faces)


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


def load_obj(path) -> TriMesh:
    verts, polys = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            idx = []
            for t in tok[1:]:
                i = int(t.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            polys.append(idx)
    return TriMesh(np.array(verts).reshape(-1, 3), _triangulate(polys))


# VGRD: b"VGRD", u8 version, 3 x u32 dims, 6 x f64 bounds, f32 values x-fastest.
_VGRD_MAGIC = b"VGRD"
_VGRD_VERSION = 1


def save_grid(path, grid: DensityGrid) -> None:
    nx, ny, nz = grid.dims
    head = _VGRD_MAGIC + struct.pack("<B3I6d", _VGRD_VERSION, nx, ny, nz, *grid.bounds.to_list())
    # values are indexed [i, j, k]; x-fastest order is the Fortran ravel
    body = np.asarray(grid.values, dtype="<f4").ravel(order="F").tobytes()
    Path(path).write_bytes(head + body)


def load_grid(path, sigma_max: float = 100.0) -> DensityGrid:
    data = Path(path).read_bytes()
    if data[:4] != _VGRD_MAGIC:
        raise ValueError(f"{path}: bad magic")
    version, nx, ny, nz, *b = struct.unpack_from("<B3I6d", data, 4)
    if version != _VGRD_VERSION:
        raise ValueError(f"{path}: unsupported VGRD version {version}")
    off = 4 + struct.calcsize("<B3I6d")
    count = nx * ny * nz
    if len(data) - off != 4 * count:
        raise ValueError(f"{path}: expected {count} values")
    vals = np.frombuffer(data, "<f4", count, off).reshape((nx, ny, nz), order="F")
    return DensityGrid(np.ascontiguousarray(vals), Box.from_list(b), sigma_max)
