"""Acoustic-semantic planar projection.

Each acoustic point gets a vertical pillar of radius ``eps`` in the xy-plane.
Camera rays through glass-mask pixels that pass the pillar axis (in xy) within
``eps`` stretch the pillar over the z-range where they do so.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geometry import PointCloud, pixel_dirs

DEFAULT_EPS = 0.15
DEFAULT_T_MAX = 10.0
DEFAULT_STRIDE = 8
DEFAULT_SPACING = 0.05


@dataclass
class SemanticRaySet:
    origins: np.ndarray
    directions: np.ndarray
    frame: np.ndarray
    pixel: np.ndarray

    def __len__(self):
        return len(self.origins)

    @classmethod
    def empty(cls) -> "SemanticRaySet":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, np.int64), np.zeros((0, 2), np.int64))


@dataclass
class Pillar:
    axis_xy: np.ndarray
    radius: float
    z_extent: tuple
    support: np.ndarray
    support_points: np.ndarray
    apc_point: np.ndarray

    @property
    def degenerate(self) -> bool:
        return len(self.support) == 0


@dataclass
class AsppPoints:
    cloud: PointCloud
    pillar_id: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    def __len__(self):
        return len(self.cloud)


def glass_rays(frames: Sequence, masks: Sequence[np.ndarray], stride: int = DEFAULT_STRIDE) -> SemanticRaySet:
    """One world ray per transparent pixel on the strided pixel lattice."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    origins, dirs, fidx, pix = [], [], [], []
    for i, (frame, mask) in enumerate(zip(frames, masks)):
        intr = frame.intrinsics
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (intr.height, intr.width):
            raise ValueError(f"frame {i}: mask shape {mask.shape} does not match intrinsics")
        sub = mask[::stride, ::stride]
        vv, uu = np.nonzero(sub)
        if len(uu) == 0:
            continue
        u, v = uu * stride, vv * stride
        dirs.append(pixel_dirs(intr, frame.pose, u, v))
        origins.append(np.broadcast_to(frame.pose.translation, (len(u), 3)))
        fidx.append(np.full(len(u), i, dtype=np.int64))
        pix.append(np.stack([u, v], axis=1))
    if not origins:
        return SemanticRaySet.empty()
    return SemanticRaySet(np.concatenate(origins), np.concatenate(dirs),
                          np.concatenate(fidx), np.concatenate(pix).astype(np.int64))


def xy_closest_approach(points_xy: np.ndarray, origins: np.ndarray, dirs: np.ndarray):
    """Ray parameter and xy-distance of each ray's closest approach to each vertical line.

    Returns (t, dist) arrays of shape (len(points_xy), len(origins)). Rays with no
    horizontal component get t = nan.
    """
    dxy = dirs[:, :2]
    dd = (dxy * dxy).sum(axis=1)
    ok = dd > 1e-18
    rel = points_xy[:, None, :] - origins[None, :, :2]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = (rel * dxy[None]).sum(axis=2) / np.where(ok, dd, np.nan)[None]
    closest = origins[None, :, :2] + t[..., None] * dxy[None]
    dist = np.linalg.norm(closest - points_xy[:, None, :], axis=2)
    return t, dist


def build_pillars(apc_points, rays: SemanticRaySet, eps: float = DEFAULT_EPS,
                  t_max: float = DEFAULT_T_MAX, chunk: int = 256) -> list:
    if eps <= 0 or t_max <= 0:
        raise ValueError("eps and t_max must be positive")
    pts = apc_points.points if hasattr(apc_points, "points") else np.asarray(apc_points)
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    pillars = []
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        if len(rays):
            t, dist = xy_closest_approach(block[:, :2], rays.origins, rays.directions)
            hit = (t > 0) & (t <= t_max) & (dist <= eps)
        else:
            hit = np.zeros((len(block), 0), dtype=bool)
        for r, (a, row) in enumerate(zip(block, hit)):
            sup = np.nonzero(row)[0]
            if len(sup):
                tt = t[r, sup]
                sp = rays.origins[sup] + tt[:, None] * rays.directions[sup]
                ext = (float(sp[:, 2].min()), float(sp[:, 2].max()))
            else:
                sp = np.zeros((0, 3))
                ext = (float(a[2]), float(a[2]))
            pillars.append(Pillar(a[:2].copy(), eps, ext, sup, sp, a.copy()))
    return pillars


def sample_aspp(pillars: Sequence[Pillar], spacing: float = DEFAULT_SPACING) -> AsppPoints:
    """Support points plus axis fill points of each pillar; degenerate pillars emit their acoustic point."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    out, ids = [], []
    for k, p in enumerate(pillars):
        if p.degenerate:
            out.append(p.apc_point[None])
            ids.append(np.array([k]))
            continue
        z0, z1 = p.z_extent
        m = int(np.floor((z1 - z0) / spacing + 1e-9))
        zs = z0 + spacing * np.arange(m + 1)
        if zs[-1] < z1 - 1e-12:
            zs = np.append(zs, z1)
        fill = np.column_stack([np.broadcast_to(p.axis_xy, (len(zs), 2)), zs])
        out.append(p.support_points)
        out.append(fill)
        ids.append(np.full(len(p.support_points) + len(zs), k))
    if not out:
        return AsppPoints(PointCloud.empty(), np.zeros(0, np.int64))
    return AsppPoints(PointCloud(np.concatenate(out)), np.concatenate(ids).astype(np.int64))
