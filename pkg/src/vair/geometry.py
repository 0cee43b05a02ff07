"""Poses, rays, point clouds, density grids and voxel occupancy.

World frame is z-up, meters. Camera frames follow the pinhole convention
(x right, y down, z forward).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its min and max corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64).reshape(3)
        hi = np.asarray(self.hi, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if not np.all(lo < hi):
            raise ValueError(f"degenerate box: lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def size(self) -> np.ndarray:
        return self.hi - self.lo

    @classmethod
    def from_origin(cls, origin, size) -> "Box":
        origin = np.asarray(origin, dtype=np.float64)
        return cls(origin, origin + np.asarray(size, dtype=np.float64))

    def contains(self, points: np.ndarray, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.all((points >= self.lo - tol) & (points <= self.hi + tol), axis=1)

    def padded(self, frac: float) -> "Box":
        pad = frac * self.size
        return Box(self.lo - pad, self.hi + pad)

    def to_list(self) -> list:
        return [*map(float, self.lo), *map(float, self.hi)]

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "Box":
        return cls(values[:3], values[3:])

    def __eq__(self, other):
        return isinstance(other, Box) and np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __hash__(self):
        return hash((tuple(self.lo), tuple(self.hi)))


def rot_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class Pose:
    """Rigid transform p -> R p + t."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with determinant +1")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64).reshape(4, 4)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValueError("bottom row of a rigid transform must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def __matmul__(self, other: "Pose") -> "Pose":
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def apply_dir(self, dirs) -> np.ndarray:
        return np.asarray(dirs, dtype=np.float64) @ self.rotation.T


def look_at(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    """Camera-to-world pose of a pinhole camera at `eye` looking at `target`."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    return Pose(np.stack([right, down, fwd], axis=1), eye)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy, "w": self.width, "h": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraIntrinsics":
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]), int(d["w"]), int(d["h"]))


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)

    def at(self, t):
        return self.origin + np.multiply.outer(t, self.direction)


def pixel_dirs(intr: CameraIntrinsics, pose: Pose, u, v) -> np.ndarray:
    """World-frame unit directions through pixel centers (vectorized, no range check)."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    cam = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1)
    cam /= np.linalg.norm(cam, axis=-1, keepdims=True)
    return pose.apply_dir(cam)


def pixel_to_ray(intr: CameraIntrinsics, pose: Pose, u: float, v: float) -> Ray:
    if not (0 <= u < intr.width and 0 <= v < intr.height):
        raise ValueError(f"pixel ({u}, {v}) outside {intr.width}x{intr.height} image")
    return Ray(pose.translation.copy(), pixel_dirs(intr, pose, u, v))


@dataclass
class PointCloud:
    points: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud contains non-finite coordinates")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
            if len(self.colors) != len(self.points):
                raise ValueError("colors must match points")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)))


def transform_cloud(cloud: PointCloud, pose: Pose) -> PointCloud:
    colors = None if cloud.colors is None else cloud.colors.copy()
    return PointCloud(pose.apply(cloud.points), colors)


@dataclass
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces):
            if self.faces.min() < 0 or self.faces.max() >= len(self.vertices):
                raise ValueError("face index out of range")
            f = self.faces
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise ValueError("degenerate face")

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    def triangle_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def area(self) -> float:
        return float(self.triangle_areas().sum())

    @staticmethod
    def concat(meshes: Sequence["TriMesh"]) -> "TriMesh":
        verts, faces, off = [], [], 0
        for m in meshes:
            verts.append(m.vertices)
            faces.append(m.faces + off)
            off += len(m.vertices)
        if not verts:
            return TriMesh.empty()
        return TriMesh(np.concatenate(verts), np.concatenate(faces))


class DensityGrid:
    """Vertex-centered density grid: node (i, j, k) sits at lo + (i, j, k) / (dims - 1) * size."""

    def __init__(self, values: np.ndarray, bounds: Box, sigma_max: float = 100.0):
        values = np.asarray(values)
        if values.ndim != 3 or min(values.shape) < 2:
            raise ValueError("grid needs at least 2 nodes per axis")
        if values.size and (values.min() < 0 or values.max() > sigma_max):
            raise ValueError(f"grid values must lie in [0, {sigma_max}]")
        self.values = values
        self.bounds = bounds
        self.sigma_max = float(sigma_max)

    @property
    def dims(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return self.bounds.size / (np.array(self.dims) - 1)

    def node_position(self, i, j, k) -> np.ndarray:
        return self.bounds.lo + np.array([i, j, k]) * self.spacing

    def sample(self, points) -> np.ndarray:
        return trilinear_sample(self, points)


def trilinear_weights(dims, bounds: Box, points) -> tuple[np.ndarray, np.ndarray]:
    """Flat node indices and blend weights of the 8 corners around each point.

    Returns ``(idx, w)`` with shape (N, 8); the sample is ``(values.ravel()[idx] * w).sum(1)``.
    Points outside the box are clamped onto it. Grid coordinates within the rounding
    error of the world-to-grid map snap onto the nearest node, so a node position
    round-tripped through world coordinates samples that node's value exactly.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    dims = np.asarray(dims)
    g = (points - bounds.lo) / bounds.size * (dims - 1)
    g = np.clip(g, 0.0, dims - 1)
    r = np.round(g)
    scale = (np.abs(bounds.lo) + np.abs(bounds.hi)) / bounds.size * (dims - 1) + dims
    g = np.where(np.abs(g - r) <= 4 * np.finfo(np.float64).eps * scale, r, g)
    i0 = np.minimum(np.floor(g).astype(np.int64), dims - 2)
    f = g - i0
    nx, ny, nz = (int(d) for d in dims)
    idx = np.empty((len(points), 8), dtype=np.int64)
    w = np.empty((len(points), 8), dtype=np.float64)
    c = 0
    for a in (0, 1):
        wa = f[:, 0] if a else 1.0 - f[:, 0]
        for b in (0, 1):
            wb = f[:, 1] if b else 1.0 - f[:, 1]
            for d in (0, 1):
                wd = f[:, 2] if d else 1.0 - f[:, 2]
                idx[:, c] = ((i0[:, 0] + a) * ny + (i0[:, 1] + b)) * nz + (i0[:, 2] + d)
                w[:, c] = wa * wb * wd
                c += 1
    return idx, w


def trilinear_sample(grid: DensityGrid, points) -> np.ndarray:
    idx, w = trilinear_weights(grid.dims, grid.bounds, points)
    return (grid.values.ravel()[idx] * w).sum(axis=1)


@dataclass
class VoxelOccupancy:
    bits: np.ndarray
    bounds: Box

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 3 or len(set(self.bits.shape)) != 1:
            raise ValueError("voxel occupancy must be cubic")

    @property
    def n(self) -> int:
        return self.bits.shape[0]

    def count(self) -> int:
        return int(self.bits.sum())

    def centers(self) -> np.ndarray:
        ijk = np.argwhere(self.bits)
        return self.bounds.lo + (ijk + 0.5) / self.n * self.bounds.size


def voxel_indices(points, n: int, bounds: Box) -> np.ndarray:
    """Integer voxel index per point, -1 rows for points outside the box.

    Points on an internal face go to the higher-index voxel; the max face of
    the box is closed and maps to index n - 1.
    """
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    g = np.floor((points - bounds.lo) / bounds.size * n).astype(np.int64)
    inside = bounds.contains(points)
    g = np.minimum(g, n - 1)
    g[~inside] = -1
    return g


def voxelize(cloud, n: int, bounds: Box) -> VoxelOccupancy:
    points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud)
    bits = np.zeros((n, n, n), dtype=bool)
    if len(points):
        g = voxel_indices(points, n, bounds)
        g = g[g[:, 0] >= 0]
        bits[g[:, 0], g[:, 1], g[:, 2]] = True
    return VoxelOccupancy(bits, bounds)


def marching_cubes(grid: DensityGrid, iso: float) -> TriMesh:
    """Iso-surface of the density grid as a world-space triangle mesh."""
    from skimage import measure

    if not 0 < iso < grid.sigma_max:
        raise ValueError("iso level must lie strictly between 0 and sigma_max")
    vals = np.asarray(grid.values, dtype=np.float64)
    if vals.min() >= iso or vals.max() <= iso:
        return TriMesh.empty()
    verts, faces, _, _ = measure.marching_cubes(
        vals, level=iso, spacing=tuple(grid.spacing), allow_degenerate=False
    )
    verts = verts + grid.bounds.lo
    f = faces
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    return TriMesh(verts, faces[keep])


@dataclass
class DensitySampleSet:
    """Observed (point, density) pairs of one density field."""

    points: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.density = np.asarray(self.density, dtype=np.float64).reshape(-1)
        if len(self.points) != len(self.density):
            raise ValueError("points and densities differ in length")
        if not (np.all(np.isfinite(self.points)) and np.all(np.isfinite(self.density))):
            raise ValueError("samples must be finite")
        if len(self.density) and self.density.min() < 0:
            raise ValueError("densities must be non-negative")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "DensitySampleSet":
        return cls(np.zeros((0, 3)), np.zeros(0))

    @classmethod
    def concat(cls, sets: Sequence["DensitySampleSet"]) -> "DensitySampleSet":
        sets = [s for s in sets if len(s)]
        if not sets:
            return cls.empty()
        return cls(np.concatenate([s.points for s in sets]), np.concatenate([s.density for s in sets]))

    @classmethod
    def constant(cls, points, value: float) -> "DensitySampleSet":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return cls(points, np.full(len(points), float(value)))
