"""Capture to transparent reconstruction: acoustic cloud, ASPP, latent optimization, extraction.

Three arms share the front end so they can be compared on the same capture:

- ``vair``: latent optimization on APC + ASPP evidence, points extracted from the
  transparent density field;
- ``aspp``: the ASPP points themselves;
- ``depth``: the depth-camera scene cloud taken as the transparent prediction.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .aspp import DEFAULT_EPS, DEFAULT_SPACING, DEFAULT_STRIDE, DEFAULT_T_MAX, AsppPoints, build_pillars, \
    glass_rays, sample_aspp
from .geometry import Box, DensitySampleSet, PointCloud, pixel_dirs
from .glo.model import VairModel
from .glo.train import InferConfig, InferenceResult, infer
from .ingest import AcousticPointCloud, Capture, build_apc, load_manifest
from .metrics import DENSITY_THRESHOLD, extract_points
from .synthgen import CROP_SIZE, sample_free_space, substream

log = logging.getLogger(__name__)

ARMS = ("vair", "aspp", "depth")


@dataclass
class PipelineConfig:
    epsilon: float = DEFAULT_EPS
    t_max: float = DEFAULT_T_MAX
    stride: int = DEFAULT_STRIDE
    spacing: float = DEFAULT_SPACING
    threshold: float = DENSITY_THRESHOLD
    n_points: int = 500_000
    ray_free: bool = True
    ray_free_fraction: float = 0.9
    ray_free_step: float = 0.05
    scene_clearance: float = 0.15
    view_free: bool = True
    view_frame_step: int = 10
    view_stride: int = 8
    view_step: float = 0.05
    view_stop: float = 0.1
    opaque_negatives: bool = True
    negative_clearance: float = 0.15
    crop_size: tuple = CROP_SIZE
    bounds: Optional[list] = None
    seed: int = 0
    infer: InferConfig = field(default_factory=InferConfig)

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        if isinstance(d.get("infer"), dict):
            d["infer"] = InferConfig.from_dict(d["infer"])
        if "crop_size" in d:
            d["crop_size"] = tuple(d["crop_size"])
        return cls(**d)


@dataclass
class Evidence:
    apc: AcousticPointCloud
    aspp: AsppPoints
    n_rays: int
    scene_obs: DensitySampleSet
    trans_obs: DensitySampleSet
    bounds: Box


@dataclass
class PipelineResult:
    arm: str
    transparent: PointCloud
    scene: Optional[PointCloud]
    evidence: Evidence
    inference: Optional[InferenceResult] = None


def crop_bounds(cloud: PointCloud, crop_size=CROP_SIZE) -> Box:
    """Crop window holding the cloud, snapped to the crop lattice used for training."""
    size = np.asarray(crop_size, float)
    lo = cloud.points.min(axis=0)
    origin = np.floor(lo / size + 1e-6) * size
    box = Box.from_origin(origin, size)
    outside = ~box.contains(cloud.points, tol=1e-6)
    if outside.any():
        log.warning("%d scene points fall outside the crop %s", int(outside.sum()), box)
    return box


def ray_free_points(apc: AcousticPointCloud, fraction: float = 0.9, step: float = 0.05) -> np.ndarray:
    """Points along each acoustic beam from the sensor to `fraction` of the measured range."""
    out = []
    for o, p in zip(apc.origins, apc.points):
        v = p - o
        r = float(np.linalg.norm(v))
        n = int(np.floor(fraction * r / step))
        if n < 1:
            continue
        s = step * np.arange(1, n + 1) / r
        out.append(o + s[:, None] * v)
    return np.concatenate(out) if out else np.zeros((0, 3))


def view_free_points(capture: Capture, masks: list, bounds: Box, frame_step: int = 10, stride: int = 8,
                     step: float = 0.05, stop: float = 0.1) -> np.ndarray:
    """Free space seen by the camera through non-glass pixels.

    Each strided pixel ray of every `frame_step`-th frame is marched from the camera until it
    comes within `stop` of the scene cloud; the marched points are free. Glass pixels are
    skipped because the depth camera sees through them.
    """
    cloud = capture.scene_cloud.points
    if not len(cloud):
        return np.zeros((0, 3))
    tree = cKDTree(cloud)
    max_len = float(np.linalg.norm(bounds.size))
    ts = step * np.arange(1, int(max_len / step) + 1)
    out = []
    for frame, mask in list(zip(capture.frames, masks))[::frame_step]:
        intr = frame.intrinsics
        sub = ~np.asarray(mask, bool)[::stride, ::stride]
        vv, uu = np.nonzero(sub)
        if not len(uu):
            continue
        dirs = pixel_dirs(intr, frame.pose, uu * stride, vv * stride)
        pts = frame.pose.translation[None, None] + ts[None, :, None] * dirs[:, None]
        d, _ = tree.query(pts.reshape(-1, 3), k=1, distance_upper_bound=stop + step)
        near = (d < stop).reshape(len(dirs), len(ts))
        inside = bounds.contains(pts.reshape(-1, 3)).reshape(near.shape)
        # everything before the first near-surface sample, minus one step of margin
        first = np.where(near.any(axis=1), near.argmax(axis=1), 0)
        keep = (np.arange(len(ts))[None] < first[:, None] - 1) & inside
        out.append(pts[keep])
    return np.concatenate(out) if out else np.zeros((0, 3))


def gather_evidence(capture: Capture, cfg: PipelineConfig) -> Evidence:
    apc = build_apc(capture.frames, capture.pings, capture.trajectory)
    masks = capture.masks()
    rays = glass_rays(capture.frames, masks, cfg.stride)
    pillars = build_pillars(apc.cloud, rays, cfg.epsilon, cfg.t_max)
    aspp = sample_aspp(pillars, cfg.spacing)
    log.info("APC %d points, %d glass rays, ASPP %d points", len(apc), len(rays), len(aspp))

    bounds = Box(*np.asarray(cfg.bounds, float)) if cfg.bounds is not None \
        else crop_bounds(capture.scene_cloud, cfg.crop_size)
    cloud = capture.scene_cloud.points
    cloud = cloud[bounds.contains(cloud)]
    rng = substream(cfg.seed, "pipeline-free")
    free = sample_free_space(bounds, len(cloud), cloud, cfg.scene_clearance, rng).points
    along = ray_free_points(apc, cfg.ray_free_fraction, cfg.ray_free_step) if cfg.ray_free else np.zeros((0, 3))
    along = along[bounds.contains(along)]

    seen = view_free_points(capture, masks, bounds, cfg.view_frame_step, cfg.view_stride, cfg.view_step,
                            cfg.view_stop) if cfg.view_free else np.zeros((0, 3))

    surf_t = np.concatenate([apc.points, aspp.points])
    surf_t = surf_t[bounds.contains(surf_t)]
    neg_t = np.concatenate([along, seen] + ([cloud] if cfg.opaque_negatives else []))
    if len(surf_t) and len(neg_t):
        # negatives never contradict acoustic / ASPP surface evidence
        d, _ = cKDTree(surf_t).query(neg_t, k=1, distance_upper_bound=cfg.negative_clearance)
        neg_t = neg_t[d >= cfg.negative_clearance]
    scene_obs = _samples(cloud, np.concatenate([free, along, seen]))
    trans_obs = _samples(surf_t, neg_t)
    return Evidence(apc, aspp, len(rays), scene_obs, trans_obs, bounds)


def _samples(surface: np.ndarray, free: np.ndarray, sigma_max: float = 100.0) -> DensitySampleSet:
    return DensitySampleSet(np.concatenate([surface, free]).reshape(-1, 3),
                            np.concatenate([np.full(len(surface), sigma_max), np.zeros(len(free))]))


def run(capture, model: Optional[VairModel], cfg: Optional[PipelineConfig] = None, arm: str = "vair") -> PipelineResult:
    """Run one arm of the pipeline on a capture (a Capture or a manifest path)."""
    cfg = cfg or PipelineConfig()
    if arm not in ARMS:
        raise ValueError(f"unknown arm {arm!r}; expected one of {ARMS}")
    if not isinstance(capture, Capture):
        capture = load_manifest(Path(capture))
    ev = gather_evidence(capture, cfg)
    if arm == "aspp":
        return PipelineResult(arm, ev.aspp.cloud, None, ev)
    if arm == "depth":
        return PipelineResult(arm, capture.scene_cloud, None, ev)
    if model is None:
        raise ValueError("the vair arm needs a trained model")
    sm = model.cfg.sigma_max
    so = DensitySampleSet(ev.scene_obs.points, np.where(ev.scene_obs.density > 0, sm, 0.0))
    to = DensitySampleSet(ev.trans_obs.points, np.where(ev.trans_obs.density > 0, sm, 0.0))
    res = infer(model, so, to, ev.bounds, cfg.infer)
    rng = substream(cfg.seed, "extract")
    trans = extract_points(res.trans_field, cfg.threshold, cfg.n_points, rng=rng)
    scene = extract_points(res.scene_field, cfg.threshold, cfg.n_points, rng=rng)
    return PipelineResult(arm, trans, scene, ev, res)
