"""Sensor simulator for tests and demos.

Raycasts forward-pointing range sensors and ideal glass masks against scenes made of
axis-aligned rectangles, then writes a capture directory in the ingest manifest format.
Glass is invisible to the depth camera: the scene cloud holds opaque surfaces only.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geometry import Box, CameraIntrinsics, PointCloud, Pose, look_at, pixel_dirs, rot_y
from .ingest import RANGE_MAX, RANGE_MIN, pose_at, save_mask, write_manifest
from .io import save_cloud
from .synthgen import GlassSpec, Rect, ScenePlan, substream

log = logging.getLogger(__name__)


@dataclass
class AnalyticScene:
    walls: list
    glass: list
    bounds: Box

    def __post_init__(self):
        for r in list(self.walls) + self.glass_rects():
            if not np.all(self.bounds.contains(r.corners(), tol=1e-6)):
                raise ValueError(f"rectangle {r} leaves the scene bounds")

    def glass_rects(self) -> list:
        return [g.rect() if isinstance(g, GlassSpec) else g for g in self.glass]

    @classmethod
    def from_plan(cls, plan: ScenePlan) -> "AnalyticScene":
        walls = [c for c in (s.clip(plan.bounds) for s in plan.room.surfaces) if c is not None]
        return cls(walls, list(plan.glass), plan.bounds)

    def in_glass(self, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        points = np.atleast_2d(points)
        out = np.zeros(len(points), dtype=bool)
        for r in self.glass_rects():
            out |= r.contains(points, tol)
        return out

    def sample_opaque(self, n: int, rng: np.random.Generator) -> PointCloud:
        """Area-weighted samples of the opaque rectangles, with glass regions cut out."""
        areas = np.array([w.area for w in self.walls])
        if n <= 0 or areas.sum() <= 0:
            return PointCloud.empty()
        out, have = [], 0
        while have < n:
            counts = rng.multinomial(n - have, areas / areas.sum())
            pts = np.concatenate([w.sample(k, rng) for w, k in zip(self.walls, counts) if k])
            pts = pts[~self.in_glass(pts, tol=1e-6)]
            out.append(pts)
            have += len(pts)
        return PointCloud(np.concatenate(out)[:n])


def _hit_rects(rects: Sequence[Rect], origins: np.ndarray, dirs: np.ndarray) -> tuple:
    """Nearest positive hit distance per ray against a set of rectangles (inf when none)."""
    best = np.full(len(origins), np.inf)
    which = np.full(len(origins), -1, dtype=np.int64)
    for k, r in enumerate(rects):
        d = dirs[:, r.axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (r.offset - origins[:, r.axis]) / d
        ok = np.isfinite(t) & (t > 1e-9)
        if not ok.any():
            continue
        hit = origins + np.where(ok, t, 0.0)[:, None] * dirs
        ok &= r.in_extent(hit)
        closer = ok & (t < best)
        best[closer] = t[closer]
        which[closer] = k
    return best, which


def raycast(scene: AnalyticScene, origins, dirs) -> tuple:
    """First opaque and first glass hit distance for each ray.

    Opaque hits that land inside a coplanar glass rectangle are holes and are skipped.
    """
    origins = np.atleast_2d(np.asarray(origins, float))
    dirs = np.atleast_2d(np.asarray(dirs, float))
    glass = scene.glass_rects()
    t_glass, _ = _hit_rects(glass, origins, dirs)
    t_op = np.full(len(origins), np.inf)
    for w in scene.walls:
        t, _ = _hit_rects([w], origins, dirs)
        fin = np.isfinite(t)
        if fin.any():
            pts = origins[fin] + t[fin, None] * dirs[fin]
            holed = np.zeros(len(pts), dtype=bool)
            for g in glass:
                if g.axis == w.axis and abs(g.offset - w.offset) < 1e-9:
                    holed |= g.in_extent(pts)
            idx = np.nonzero(fin)[0][~holed]
            t_op[idx] = np.minimum(t_op[idx], t[idx])
    return t_op, t_glass


def sensor_extrinsics(yaws_deg: Sequence[float] = (0.0, 90.0, -90.0)) -> dict:
    """Sensor-to-camera poses: each sensor's +z is the camera's +z rotated about camera y."""
    return {i: Pose(rot_y(np.deg2rad(y)), np.zeros(3)) for i, y in enumerate(yaws_deg)}


@dataclass
class SimConfig:
    frame_hz: float = 30.0
    ping_hz: float = 10.0
    sensor_yaws: tuple = (0.0, 90.0, -90.0)
    intrinsics: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(40.0, 40.0, 32.0, 24.0, 64, 48))
    scene_points: int = 10000
    range_min: float = RANGE_MIN
    range_max: float = RANGE_MAX
    seed: int = 0


@dataclass
class SimResult:
    manifest: Path
    n_frames: int
    n_pings: int
    ping_points: np.ndarray


def sweep(start, end, speed: float, target_dir, hz: float = 30.0, t0: float = 0.0) -> list:
    """Straight-line trajectory at constant speed, camera looking along `target_dir`."""
    start, end = np.asarray(start, float), np.asarray(end, float)
    length = float(np.linalg.norm(end - start))
    if speed <= 0 or length == 0:
        raise ValueError("sweep needs positive speed and distinct endpoints")
    n = int(np.floor(length / speed * hz)) + 1
    look = np.asarray(target_dir, float)
    traj = []
    for i in range(n):
        t = i / hz
        eye = start + (end - start) * min(t * speed / length, 1.0)
        traj.append((t0 + t, look_at(eye, eye + look)))
    return traj


def simulate_capture(scene: AnalyticScene, trajectory: Sequence, out, config: Optional[SimConfig] = None) -> SimResult:
    """Render masks, fire range sensors and write a manifest directory under `out`."""
    cfg = config or SimConfig()
    if not trajectory:
        raise ValueError("empty trajectory")
    for t, p in trajectory:
        if not scene.bounds.contains(p.translation[None], tol=1e-6)[0]:
            raise ValueError(f"trajectory leaves the scene bounds at t={t}")
    out = Path(out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    intr = cfg.intrinsics

    frames = []
    uu, vv = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    uu, vv = uu.ravel(), vv.ravel()
    frame_step = max(1, int(round(_rate(trajectory) / cfg.frame_hz)))
    for i, (t, pose) in enumerate(trajectory[::frame_step]):
        dirs = pixel_dirs(intr, pose, uu, vv)
        t_op, t_gl = raycast(scene, np.broadcast_to(pose.translation, dirs.shape), dirs)
        mask = (t_gl < t_op).reshape(intr.height, intr.width)
        name = f"masks/frame_{i:05d}.png"
        save_mask(out / name, mask)
        frames.append({"t": float(t), "pose": pose.matrix().ravel().tolist(), "mask": name,
                       "intrinsics": intr.to_dict()})

    ext = sensor_extrinsics(cfg.sensor_yaws)
    t_start, t_end = trajectory[0][0], trajectory[-1][0]
    rows, world = [], []
    n_sensors = len(ext)
    k = 0
    while True:
        tp = t_start + k / cfg.ping_hz
        if tp > t_end + 1e-12:
            break
        for sid in range(n_sensors):
            # sensors fire staggered inside each ping period
            ts = tp + sid / (cfg.ping_hz * n_sensors) * 0.5
            if ts > t_end:
                continue
            cam_s = pose_at(trajectory, ts)
            sp = cam_s @ ext[sid]
            d = sp.apply_dir(np.array([0.0, 0.0, 1.0]))
            t_op, t_gl = raycast(scene, sp.translation[None], d[None])
            r = float(min(t_op[0], t_gl[0]))
            if not (cfg.range_min < r <= cfg.range_max):
                continue
            rows.append((float(ts), sid, r))
            world.append(sp.translation + r * d)
        k += 1
    rows.sort(key=lambda x: x[0])
    with open(out / "pings.csv", "w") as fh:
        fh.write("timestamp_s,sensor_id,range_m\n")
        for ts, sid, r in rows:
            fh.write(f"{ts!r},{sid},{r!r}\n")

    cloud = scene.sample_opaque(cfg.scene_points, substream(cfg.seed, "sim-cloud"))
    save_cloud(out / "scene.ply", cloud)
    write_manifest(out / "manifest.json", frames, "pings.csv", "scene.ply", trajectory, ext)
    log.info("simulated %d frames, %d pings into %s", len(frames), len(rows), out)
    return SimResult(out / "manifest.json", len(frames), len(rows), np.array(world).reshape(-1, 3))


def _rate(trajectory: Sequence) -> float:
    if len(trajectory) < 2:
        return 30.0
    dt = np.diff([t for t, _ in trajectory])
    return float(1.0 / np.median(dt))


def glass_plane_fixture(distance: float = 2.0, width: float = 2.0, height: float = 2.0) -> AnalyticScene:
    """A single glass pane in the plane x = distance, set in an opaque wall, in a 4 m box."""
    bounds = Box((0.0, -2.0, 0.0), (distance + 1.0, 2.0, 3.0))
    wall = Rect(0, distance, (-2.0, 0.0), (2.0, 3.0))
    pane = GlassSpec("window", (distance, 0.0, 0.5 + height / 2), width, height, (-1.0, 0.0, 0.0))
    return AnalyticScene([wall], [pane], bounds)


def capture_plan(plan: ScenePlan, out, coverage: float = 0.5, config: Optional[SimConfig] = None,
                 standoff: float = 1.5, height: float = 1.2, speed: float = 0.1, n_gt: int = 100_000) -> SimResult:
    """Simulate a sideways pass in front of the first glass pane of a generated scene.

    The camera faces the pane from `standoff` metres and travels along it from one edge
    across `coverage` of its width, so the rest of the glass is never pinged. Writes the
    capture plus ``gt_glass.ply`` (samples of every glass rectangle) and ``meta.json``.
    """
    if not 0 < coverage <= 1:
        raise ValueError("coverage must be in (0, 1]")
    scene = AnalyticScene.from_plan(plan)
    g = plan.glass[0]
    r = g.rect()
    n = np.asarray(g.wall_normal, float)
    along = 1 - r.axis

    def eye(a: float) -> np.ndarray:
        p = np.zeros(3)
        p[r.axis] = r.offset + standoff * n[r.axis]
        p[along] = a
        p[2] = height
        return p

    a0 = r.lo[0]
    a1 = r.lo[0] + coverage * (r.hi[0] - r.lo[0])
    cfg = config or SimConfig()
    traj = sweep(eye(a0), eye(a1), speed, -n, hz=cfg.frame_hz)
    out = Path(out)
    res = simulate_capture(scene, traj, out, cfg)
    rng = substream(cfg.seed, "sim-gt", plan.index)
    rects = scene.glass_rects()
    areas = np.array([q.area for q in rects])
    counts = rng.multinomial(n_gt, areas / areas.sum())
    gt = np.concatenate([q.sample(k, rng) for q, k in zip(rects, counts)])
    save_cloud(out / "gt_glass.ply", PointCloud(gt))
    meta = {"index": plan.index, "bounds": plan.bounds.to_list(), "coverage": coverage,
            "glass": [x.to_dict() for x in plan.glass]}
    (out / "meta.json").write_text(json.dumps(meta, indent=1))
    return res
