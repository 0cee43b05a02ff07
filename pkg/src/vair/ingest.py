"""Capture manifests: frames, glass masks, acoustic pings and the scene cloud.

Manifest JSON layout::

    {
      "frames": [{"t": 0.0, "pose": [16 row-major], "intrinsics": {"fx", "fy", "cx", "cy", "w", "h"},
                  "mask": "masks/000000.png"}, ...],
      "pings": "pings.csv",                  # header timestamp_s,sensor_id,range_m
      "scene_cloud": "scene.ply",
      "trajectory": [{"t": 0.0, "pose": [16 row-major]}, ...],
      "extrinsics": {"0": [16 row-major], ...}   # sensor-to-camera, sensor looks along its +z
    }

Relative paths resolve against the manifest's directory. Poses are camera-to-world.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.transform import Rotation, Slerp

from .geometry import CameraIntrinsics, PointCloud, Pose
from .io import load_cloud

log = logging.getLogger(__name__)

RANGE_MIN = 0.02
RANGE_MAX = 4.0
POSE_MARGIN = 0.2


class ManifestError(ValueError):
    """Malformed or inconsistent capture manifest; ``entry`` names the offender."""

    def __init__(self, entry: str, msg: str):
        super().__init__(f"{entry}: {msg}")
        self.entry = entry


class PoseOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class FrameRecord:
    timestamp: float
    pose: Pose
    mask_path: Path
    intrinsics: CameraIntrinsics


@dataclass(frozen=True)
class AcousticPing:
    timestamp: float
    sensor_id: int
    range: float
    extrinsic: Pose = field(default_factory=Pose)


@dataclass
class AcousticPointCloud:
    cloud: PointCloud
    ping_index: np.ndarray
    origins: np.ndarray
    rejected: int = 0

    @property
    def points(self) -> np.ndarray:
        return self.cloud.points

    def __len__(self):
        return len(self.cloud)


@dataclass
class Capture:
    frames: list
    pings: list
    scene_cloud: PointCloud
    trajectory: list
    root: Path

    def masks(self) -> list:
        return [load_mask(f.mask_path, f.intrinsics) for f in self.frames]


def load_mask(path, intr: Optional[CameraIntrinsics] = None) -> np.ndarray:
    """Glass mask as a (height, width) bool array; nonzero pixels are transparent."""
    from PIL import Image

    with Image.open(path) as im:
        arr = np.asarray(im)
    if arr.ndim != 2:
        raise ManifestError(str(path), "mask must be single-channel")
    if intr is not None and arr.shape != (intr.height, intr.width):
        raise ManifestError(str(path), f"mask is {arr.shape[::-1]}, intrinsics say {(intr.width, intr.height)}")
    return arr != 0


def save_mask(path, mask: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(mask, dtype=np.uint8) * 255, mode="L").save(path)


def _pose16(values, entry: str) -> Pose:
    try:
        vals = [float(v) for v in values]
        if len(vals) != 16:
            raise ValueError(f"expected 16 values, got {len(vals)}")
        return Pose.from_matrix(vals)
    except (TypeError, ValueError) as exc:
        raise ManifestError(entry, f"bad pose ({exc})") from None


def read_pings_csv(path, extrinsics: dict) -> list:
    pings = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp_s", "sensor_id", "range_m"]:
            raise ManifestError(f"{path}:1", "header must be timestamp_s,sensor_id,range_m")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            entry = f"{path}:{lineno}"
            if len(row) != 3:
                raise ManifestError(entry, f"expected 3 fields, got {len(row)}")
            try:
                t, sid, rng = float(row[0]), int(row[1]), float(row[2])
            except ValueError:
                raise ManifestError(entry, f"unparseable row {row}") from None
            if sid not in extrinsics:
                raise ManifestError(entry, f"no extrinsic for sensor {sid}")
            pings.append(AcousticPing(t, sid, rng, extrinsics[sid]))
    pings.sort(key=lambda p: p.timestamp)
    return pings


def load_manifest(path) -> Capture:
    path = Path(path)
    if not path.exists():
        raise ManifestError(str(path), "manifest not found")
    root = path.parent
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(str(path), f"invalid JSON ({exc})") from None
    for key in ("frames", "pings", "scene_cloud", "trajectory", "extrinsics"):
        if key not in doc:
            raise ManifestError(str(path), f"missing field '{key}'")

    extrinsics = {int(k): _pose16(v, f"extrinsics[{k}]") for k, v in doc["extrinsics"].items()}

    frames = []
    for i, fr in enumerate(doc["frames"]):
        entry = f"frames[{i}]"
        try:
            intr = CameraIntrinsics.from_dict(fr["intrinsics"])
            t = float(fr["t"])
            mask = root / fr["mask"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(entry, f"malformed frame ({exc})") from None
        if not mask.exists():
            raise ManifestError(str(mask), "mask file not found")
        frames.append(FrameRecord(t, _pose16(fr["pose"], entry), mask, intr))
    _check_increasing([f.timestamp for f in frames], "frames")

    trajectory = []
    for i, tp in enumerate(doc["trajectory"]):
        try:
            t = float(tp["t"])
        except (KeyError, TypeError, ValueError):
            raise ManifestError(f"trajectory[{i}]", "missing timestamp") from None
        trajectory.append((t, _pose16(tp.get("pose"), f"trajectory[{i}]")))
    _check_increasing([t for t, _ in trajectory], "trajectory")

    pings_path = root / doc["pings"]
    if not pings_path.exists():
        raise ManifestError(str(pings_path), "ping log not found")
    pings = read_pings_csv(pings_path, extrinsics)

    cloud_path = root / doc["scene_cloud"]
    if not cloud_path.exists():
        raise ManifestError(str(cloud_path), "scene cloud not found")
    try:
        cloud = load_cloud(cloud_path)
    except ValueError as exc:
        raise ManifestError(str(cloud_path), str(exc)) from None
    return Capture(frames, pings, cloud, trajectory, root)


def _check_increasing(ts: Sequence[float], what: str) -> None:
    for i in range(1, len(ts)):
        if not ts[i] > ts[i - 1]:
            raise ManifestError(f"{what}[{i}]", f"timestamp {ts[i]} not after {ts[i - 1]}")


def pose_at(trajectory: Sequence, t: float, margin: float = POSE_MARGIN) -> Pose:
    """Interpolated camera pose at time t (lerp translation, slerp rotation)."""
    if not trajectory:
        raise ValueError("empty trajectory")
    times = np.array([tt for tt, _ in trajectory])
    if t < times[0] - margin or t > times[-1] + margin:
        raise PoseOutOfRange(f"t={t} outside [{times[0]}, {times[-1]}] +/- {margin}")
    if t <= times[0]:
        return trajectory[0][1]
    if t >= times[-1]:
        return trajectory[-1][1]
    k = int(np.searchsorted(times, t, side="right")) - 1
    t0, p0 = trajectory[k]
    if t == t0:
        return p0
    t1, p1 = trajectory[k + 1]
    a = (t - t0) / (t1 - t0)
    rots = Rotation.from_matrix(np.stack([p0.rotation, p1.rotation]))
    R = Slerp([0.0, 1.0], rots)(a).as_matrix()
    # re-orthonormalize against float drift from the quaternion round trip
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return Pose(R, (1 - a) * p0.translation + a * p1.translation)


def range_ok(r: float, range_min: float = RANGE_MIN, range_max: float = RANGE_MAX) -> bool:
    return range_min < r <= range_max


def ping_to_world(ping: AcousticPing, camera_pose: Pose, range_min: float = RANGE_MIN,
                  range_max: float = RANGE_MAX) -> Optional[np.ndarray]:
    """World point of a range return, or None when the range is gated out."""
    if not range_ok(ping.range, range_min, range_max):
        return None
    return (camera_pose @ ping.extrinsic).apply(np.array([0.0, 0.0, ping.range]))


def build_apc(frames, pings: Sequence[AcousticPing], trajectory: Sequence,
              range_min: float = RANGE_MIN, range_max: float = RANGE_MAX,
              margin: float = POSE_MARGIN) -> AcousticPointCloud:
    """Place every accepted ping in the world frame; gated or untimed pings are counted."""
    if not trajectory:
        raise ValueError("empty trajectory")
    pts, idx, origins = [], [], []
    rejected = 0
    for i, ping in enumerate(pings):
        try:
            cam = pose_at(trajectory, ping.timestamp, margin)
        except PoseOutOfRange:
            rejected += 1
            continue
        p = ping_to_world(ping, cam, range_min, range_max)
        if p is None:
            rejected += 1
            continue
        pts.append(p)
        idx.append(i)
        origins.append((cam @ ping.extrinsic).translation)
    if rejected:
        log.warning("rejected %d of %d pings (range gate or timing)", rejected, len(pings))
    return AcousticPointCloud(
        PointCloud(np.array(pts).reshape(-1, 3)),
        np.array(idx, dtype=np.int64),
        np.array(origins).reshape(-1, 3),
        rejected,
    )


def write_manifest(path, frames: Sequence[dict], pings_csv: str, scene_cloud: str,
                   trajectory: Sequence, extrinsics: dict) -> None:
    doc = {
        "frames": list(frames),
        "pings": pings_csv,
        "scene_cloud": scene_cloud,
        "trajectory": [{"t": float(t), "pose": p.matrix().ravel().tolist()} for t, p in trajectory],
        "extrinsics": {str(k): v.matrix().ravel().tolist() for k, v in extrinsics.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1))
