"""Point extraction from density fields and reconstruction metrics (voxel IOU, Chamfer-L1)."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box, DensityGrid, PointCloud, TriMesh, VoxelOccupancy, voxelize

log = logging.getLogger(__name__)

EVAL_RES = 64
EVAL_POINTS = 500_000
DENSITY_THRESHOLD = 85.0


def extract_points(field: DensityGrid, threshold: float = DENSITY_THRESHOLD, n: int = EVAL_POINTS,
                   rng: Optional[np.random.Generator] = None, seed: int = 0, batch: int = 65536) -> PointCloud:
    """Rejection-sample up to n points whose interpolated density is >= threshold.

    Candidates are uniform in the field bounds; at most 1000 * n are drawn.
    """
    if not 0 < threshold < field.sigma_max:
        raise ValueError("threshold must lie strictly between 0 and sigma_max")
    rng = rng if rng is not None else np.random.default_rng(seed)
    b = field.bounds
    if field.values.max() < threshold:
        log.warning("field never reaches density %g; no points extracted", threshold)
        return PointCloud.empty()
    kept, have, drawn, budget = [], 0, 0, 1000 * n
    while have < n and drawn < budget:
        m = min(batch, budget - drawn)
        cand = rng.uniform(b.lo, b.hi, size=(m, 3))
        drawn += m
        cand = cand[field.sample(cand) >= threshold]
        kept.append(cand)
        have += len(cand)
    pts = np.concatenate(kept)[:n] if kept else np.zeros((0, 3))
    if not len(pts):
        log.warning("no candidate reached density %g within %d draws", threshold, drawn)
    return PointCloud(pts)


def _check_pair(pred: VoxelOccupancy, gt: VoxelOccupancy) -> None:
    if pred.bits.shape != gt.bits.shape or pred.bounds != gt.bounds:
        raise ValueError("occupancy grids differ in resolution or bounds")


def iou(pred: VoxelOccupancy, gt: VoxelOccupancy, masked: bool = False, variant: str = "literal") -> float:
    """Voxel IOU between prediction Y^ and ground truth Y.

    unmasked:            |Y^ & Y| / |Y^ | Y|
    masked, "literal":   |(Y^ & Y) & Y| / |Y^ | Y|   (reduces to the unmasked value)
    masked, "recall":    |Y^ & Y| / |Y|              (prediction masked to Y before the union)
    Two empty grids score 1.0.
    """
    _check_pair(pred, gt)
    p, g = pred.bits, gt.bits
    inter = np.count_nonzero(p & g)
    if masked and variant == "recall":
        den = np.count_nonzero(g)
        num = inter
    elif masked and variant == "literal":
        num = np.count_nonzero((p & g) & g)
        den = np.count_nonzero(p | g)
    elif not masked:
        num, den = inter, np.count_nonzero(p | g)
    else:
        raise ValueError(f"unknown masked-IOU variant {variant!r}")
    if den == 0:
        if not p.any() and not g.any():
            log.warning("IOU of two empty grids defined as 1.0")
            return 1.0
        return 0.0
    return num / den


def chamfer_l1(a, b) -> float:
    """Symmetric Chamfer distance with L1 point distances, each direction averaged and halved."""
    a = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64).reshape(-1, 3)
    b = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Chamfer distance needs two non-empty clouds")
    dab, _ = cKDTree(b).query(a, k=1, p=1)
    dba, _ = cKDTree(a).query(b, k=1, p=1)
    return float(dab.mean() / 2 + dba.mean() / 2)


@dataclass
class MetricReport:
    iou_masked: float
    iou_unmasked: float
    iou_masked_recall: float
    cd_l1: float
    cd_l1_x1000: float
    pred_voxels: int
    gt_voxels: int
    resolution: int
    chamfer_convention: str = "mean L1 nearest-neighbour distance, both directions, each weighted 1/2"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)

    def row(self, name: str) -> str:
        return f"{name:<16}{self.iou_masked:>10.3f}{self.iou_unmasked:>10.3f}{self.cd_l1_x1000:>12.2f}"


REPORT_SCHEMA = {
    "type": "object",
    "required": ["iou_masked", "iou_unmasked", "iou_masked_recall", "cd_l1", "cd_l1_x1000",
                 "pred_voxels", "gt_voxels", "resolution"],
    "properties": {
        "iou_masked": {"type": "number", "minimum": 0, "maximum": 1},
        "iou_unmasked": {"type": "number", "minimum": 0, "maximum": 1},
        "iou_masked_recall": {"type": "number", "minimum": 0, "maximum": 1},
        "cd_l1": {"type": ["number", "null"], "minimum": 0},
        "cd_l1_x1000": {"type": ["number", "null"], "minimum": 0},
        "pred_voxels": {"type": "integer", "minimum": 0},
        "gt_voxels": {"type": "integer", "minimum": 0},
        "resolution": {"type": "integer", "minimum": 1},
        "chamfer_convention": {"type": "string"},
    },
}


def table(rows: dict) -> str:
    """Aligned text table (IOU_m, IOU_un, CD-L1 x 1e3) with an average row."""
    head = f"{'':<16}{'IOU_m':>10}{'IOU_un':>10}{'CD-l1x1e3':>12}"
    lines = [head] + [r.row(name) for name, r in rows.items()]
    if len(rows) > 1:
        vals = list(rows.values())
        lines.append(f"{'Average':<16}{np.mean([r.iou_masked for r in vals]):>10.3f}"
                     f"{np.mean([r.iou_unmasked for r in vals]):>10.3f}"
                     f"{np.mean([r.cd_l1_x1000 for r in vals]):>12.2f}")
    return "\n".join(lines)


def gt_bounds(gt_points: np.ndarray, pad: float = 0.05, min_extent: float = 0.1) -> Box:
    """Ground-truth bounding box padded by `pad` of its extent on each side.

    Flat axes (e.g. a single glass plane) are widened to `min_extent` first.
    """
    lo, hi = gt_points.min(axis=0), gt_points.max(axis=0)
    c = (lo + hi) / 2
    half = np.maximum((hi - lo) / 2, min_extent / 2)
    return Box(c - half, c + half).padded(pad)


def evaluate(pred, gt, bounds: Optional[Box] = None, resolution: int = EVAL_RES, n_gt: int = EVAL_POINTS,
             seed: int = 0) -> MetricReport:
    """Voxelize prediction and ground truth over shared bounds and compute every metric.

    `gt` may be a TriMesh (sampled with `n_gt` points) or a PointCloud.
    """
    from .synthgen import sample_surface

    if isinstance(gt, TriMesh):
        gt = sample_surface(gt, n_gt, np.random.default_rng(seed))
    pred = pred if isinstance(pred, PointCloud) else PointCloud(pred)
    if len(gt) == 0:
        raise ValueError("ground truth is empty")
    if bounds is None:
        bounds = gt_bounds(gt.points)
    vp = voxelize(pred, resolution, bounds)
    vg = voxelize(gt, resolution, bounds)
    cd = chamfer_l1(pred, gt) if len(pred) else float("nan")
    return MetricReport(
        iou_masked=iou(vp, vg, masked=True),
        iou_unmasked=iou(vp, vg),
        iou_masked_recall=iou(vp, vg, masked=True, variant="recall"),
        cd_l1=cd, cd_l1_x1000=cd * 1000.0,
        pred_voxels=vp.count(), gt_voxels=vg.count(), resolution=resolution,
    )
