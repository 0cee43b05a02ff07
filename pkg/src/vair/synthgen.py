"""Procedural training pairs: box rooms with clutter, cropped, sampled, and
carved into opaque-scene and glass point sets."""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box, DensitySampleSet, PointCloud, TriMesh
from .io import save_cloud

log = logging.getLogger(__name__)

CROP_SIZE = (3.0, 3.0, 4.0)
GLASS_KINDS = ("full_pane", "half_pane", "window")


def substream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Independent generator for (seed, named stream, index)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed) & (2**64 - 1), zlib.crc32(name.encode()), int(index)]))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle lying in the plane ``x[axis] = offset``.

    ``lo``/``hi`` bound the two remaining coordinates, in increasing axis order.
    """

    axis: int
    offset: float
    lo: tuple
    hi: tuple

    @property
    def in_axes(self) -> tuple:
        return tuple(a for a in range(3) if a != self.axis)

    @property
    def area(self) -> float:
        return float((self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1]))

    def corners(self) -> np.ndarray:
        a, b = self.in_axes
        out = np.zeros((4, 3))
        out[:, self.axis] = self.offset
        out[:, a] = [self.lo[0], self.hi[0], self.hi[0], self.lo[0]]
        out[:, b] = [self.lo[1], self.lo[1], self.hi[1], self.hi[1]]
        return out

    def to_mesh(self) -> TriMesh:
        return TriMesh(self.corners(), [[0, 1, 2], [0, 2, 3]])

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        """Points on the plane (within tol) and inside the extent."""
        points = np.atleast_2d(points)
        a, b = self.in_axes
        return ((np.abs(points[:, self.axis] - self.offset) <= tol)
                & (points[:, a] >= self.lo[0] - tol) & (points[:, a] <= self.hi[0] + tol)
                & (points[:, b] >= self.lo[1] - tol) & (points[:, b] <= self.hi[1] + tol))

    def in_extent(self, points, tol: float = 0.0) -> np.ndarray:
        points = np.atleast_2d(points)
        a, b = self.in_axes
        return ((points[:, a] >= self.lo[0] - tol) & (points[:, a] <= self.hi[0] + tol)
                & (points[:, b] >= self.lo[1] - tol) & (points[:, b] <= self.hi[1] + tol))

    def covers(self, other: "Rect", tol: float = 1e-9) -> bool:
        return (self.axis == other.axis and abs(self.offset - other.offset) <= tol
                and all(self.lo[i] - tol <= other.lo[i] and other.hi[i] <= self.hi[i] + tol for i in (0, 1)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        a, b = self.in_axes
        out = np.empty((n, 3))
        out[:, self.axis] = self.offset
        out[:, a] = rng.uniform(self.lo[0], self.hi[0], n)
        out[:, b] = rng.uniform(self.lo[1], self.hi[1], n)
        return out

    def clip(self, box: Box) -> Optional["Rect"]:
        if not box.lo[self.axis] <= self.offset <= box.hi[self.axis]:
            return None
        a, b = self.in_axes
        lo = (max(self.lo[0], box.lo[a]), max(self.lo[1], box.lo[b]))
        hi = (min(self.hi[0], box.hi[a]), min(self.hi[1], box.hi[b]))
        if lo[0] >= hi[0] or lo[1] >= hi[1]:
            return None
        return Rect(self.axis, self.offset, lo, hi)


def box_rects(lo, hi, skip_bottom: bool = False) -> list:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    rects = []
    for axis in range(3):
        a, b = [i for i in range(3) if i != axis]
        for off in (lo[axis], hi[axis]):
            if skip_bottom and axis == 2 and off == lo[axis]:
                continue
            rects.append(Rect(axis, float(off), (float(lo[a]), float(lo[b])), (float(hi[a]), float(hi[b]))))
    return rects


@dataclass(frozen=True)
class RoomSpec:
    seed: int
    footprint: tuple
    wall_height: float
    clutter_count: int = 0

    def __post_init__(self):
        if min(self.footprint) < min(CROP_SIZE[:2]):
            raise ValueError("room footprint must be at least the crop footprint")
        if self.wall_height < 2.0:
            raise ValueError("wall height must be >= 2 m")
        if self.clutter_count < 0:
            raise ValueError("clutter_count must be >= 0")


@dataclass(frozen=True)
class Room:
    spec: RoomSpec
    walls: tuple
    surfaces: tuple

    def mesh(self) -> TriMesh:
        return TriMesh.concat([r.to_mesh() for r in self.surfaces])


def build_room(spec: RoomSpec) -> Room:
    w, d = spec.footprint
    h = spec.wall_height
    shell = box_rects((0, 0, 0), (w, d, h))
    walls = tuple(r for r in shell if r.axis != 2)
    rng = substream(spec.seed, "clutter")
    clutter = []
    for _ in range(spec.clutter_count):
        size = rng.uniform([0.3, 0.3, 0.4], [1.0, 1.0, 1.2])
        lo = rng.uniform([0.3, 0.3], [w - 0.3 - size[0], d - 0.3 - size[1]])
        clutter += box_rects((lo[0], lo[1], 0.0), (lo[0] + size[0], lo[1] + size[1], size[2]), skip_bottom=True)
    return Room(spec, walls, tuple(shell + clutter))


def generate_room(spec: RoomSpec) -> TriMesh:
    """Floor, ceiling, four walls and clutter boxes; a pure function of the RoomSpec."""
    return build_room(spec).mesh()


def _clip_polygon(poly: np.ndarray, axis: int, value: float, keep_greater: bool) -> np.ndarray:
    if len(poly) == 0:
        return poly
    s = poly[:, axis] - value
    if not keep_greater:
        s = -s
    out = []
    n = len(poly)
    for i in range(n):
        p, q = poly[i], poly[(i + 1) % n]
        sp, sq = s[i], s[(i + 1) % n]
        if sp >= 0:
            out.append(p)
        if (sp >= 0) != (sq >= 0):
            t = sp / (sp - sq)
            out.append(p + t * (q - p))
    return np.array(out).reshape(-1, 3)


def crop_scene(mesh: TriMesh, origin, size=CROP_SIZE) -> TriMesh:
    """Clip the mesh to the axis-aligned box of `size` at `origin`."""
    box = Box.from_origin(origin, size)
    v = mesh.vertices
    inside_v = box.contains(v, tol=1e-12)
    keep_faces, new_verts, new_faces = [], [], []
    base = len(v)
    for fi, f in enumerate(mesh.faces):
        if inside_v[f].all():
            keep_faces.append(f)
            continue
        poly = v[f]
        for axis in range(3):
            poly = _clip_polygon(poly, axis, box.lo[axis], True)
            poly = _clip_polygon(poly, axis, box.hi[axis], False)
        if len(poly) < 3:
            continue
        idx0 = base + sum(len(p) for p in new_verts)
        new_verts.append(poly)
        for i in range(1, len(poly) - 1):
            tri = poly[[0, i, i + 1]]
            if 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) > 1e-12:
                new_faces.append([idx0, idx0 + i, idx0 + i + 1])
    if not keep_faces and not new_faces:
        raise ValueError(f"crop box at {list(box.lo)} does not intersect the mesh")
    verts = np.concatenate([v] + new_verts) if new_verts else v
    faces = np.array(keep_faces + new_faces, dtype=np.int64).reshape(-1, 3)
    used = np.zeros(len(verts), dtype=bool)
    used[faces.ravel()] = True
    remap = np.cumsum(used) - 1
    return TriMesh(verts[used], remap[faces])


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator, return_faces: bool = False):
    """Area-weighted uniform samples on the mesh surface."""
    if len(mesh.faces) == 0:
        raise ValueError("cannot sample an empty mesh")
    if n < 1:
        raise ValueError("n must be >= 1")
    areas = mesh.triangle_areas()
    counts = rng.multinomial(n, areas / areas.sum())
    face = np.repeat(np.arange(len(areas)), counts)
    r1, r2 = rng.random(n), rng.random(n)
    s = np.sqrt(r1)
    tri = mesh.vertices[mesh.faces[face]]
    pts = (1 - s)[:, None] * tri[:, 0] + (s * (1 - r2))[:, None] * tri[:, 1] + (s * r2)[:, None] * tri[:, 2]
    cloud = PointCloud(pts)
    return (cloud, face) if return_faces else cloud


@dataclass(frozen=True)
class GlassSpec:
    kind: str
    center: tuple
    width: float
    height: float
    wall_normal: tuple

    def __post_init__(self):
        if self.kind not in GLASS_KINDS:
            raise ValueError(f"unknown glass kind {self.kind!r}")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("glass dimensions must be positive")
        n = np.asarray(self.wall_normal, float)
        if abs(n[2]) > 1e-9 or np.count_nonzero(np.abs(n) > 1e-9) != 1:
            raise ValueError("glass must sit on an axis-aligned vertical wall")

    @property
    def axis(self) -> int:
        return int(np.argmax(np.abs(self.wall_normal)))

    def rect(self) -> Rect:
        axis = self.axis
        h_axis = 1 - axis
        c = self.center
        lo = [0.0, 0.0]
        hi = [0.0, 0.0]
        # in-plane axes in increasing order: (h_axis, 2)
        lo[0], hi[0] = c[h_axis] - self.width / 2, c[h_axis] + self.width / 2
        lo[1], hi[1] = c[2] - self.height / 2, c[2] + self.height / 2
        return Rect(axis, float(c[axis]), tuple(lo), tuple(hi))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "center": list(map(float, self.center)), "width": float(self.width),
                "height": float(self.height), "wall_normal": list(map(float, self.wall_normal))}

    @classmethod
    def from_dict(cls, d: dict) -> "GlassSpec":
        return cls(d["kind"], tuple(d["center"]), float(d["width"]), float(d["height"]), tuple(d["wall_normal"]))


def wall_normal(room_size, wall: Rect) -> tuple:
    n = [0.0, 0.0, 0.0]
    n[wall.axis] = 1.0 if wall.offset <= room_size[wall.axis] / 2 else -1.0
    return tuple(n)


def carve_glass(cloud: PointCloud, specs: Sequence[GlassSpec], margin: float = 0.05,
                walls: Optional[Sequence[Rect]] = None):
    """Split `cloud` into (opaque, glass) by slab membership around each glass rectangle."""
    pts = cloud.points
    in_glass = np.zeros(len(pts), dtype=bool)
    for spec in specs:
        r = spec.rect()
        if walls is not None:
            if not any(w.covers(r, tol=1e-6) for w in walls):
                raise ValueError(f"{spec.kind} at {spec.center} does not lie on any wall")
        slab = (np.abs(pts[:, r.axis] - r.offset) < margin) & r.in_extent(pts)
        if walls is None and not slab.any():
            raise ValueError(f"{spec.kind} at {spec.center} does not lie on any wall")
        in_glass |= slab
    return PointCloud(pts[~in_glass]), PointCloud(pts[in_glass])


def sample_free_space(bounds: Box, n: int, surfaces, clearance: float, rng: np.random.Generator,
                      batch: int = 4096) -> PointCloud:
    """Uniform points in `bounds` at least `clearance` from every surface point."""
    if clearance <= 0:
        raise ValueError("clearance must be positive")
    surf = surfaces.points if isinstance(surfaces, PointCloud) else np.asarray(surfaces).reshape(-1, 3)
    tree = cKDTree(surf) if len(surf) else None
    kept, have, drawn = [], 0, 0
    budget = 100 * n
    while have < n:
        if drawn >= budget:
            raise RuntimeError(f"free-space sampling kept {have}/{n} after {drawn} draws; bounds too crowded")
        m = min(max(batch, 2 * (n - have)), budget - drawn)
        cand = rng.uniform(bounds.lo, bounds.hi, size=(m, 3))
        drawn += m
        if tree is not None:
            d, _ = tree.query(cand, k=1, distance_upper_bound=clearance)
            cand = cand[d >= clearance]
        kept.append(cand)
        have += len(cand)
    return PointCloud(np.concatenate(kept)[:n])


@dataclass
class SynthConfig:
    crop_size: tuple = CROP_SIZE
    points_per_scene: int = 10_000
    free_ratio: float = 1.0
    glass_kind_weights: dict = field(default_factory=lambda: {k: 1.0 for k in GLASS_KINDS})
    glass_count: tuple = (1, 3)
    footprint_range: tuple = (3.0, 5.5)
    wall_height_range: tuple = (2.4, 3.2)
    clutter_range: tuple = (0, 2)
    full_pane_width: tuple = (0.8, 2.0)
    half_pane_width: tuple = (0.8, 2.0)
    half_pane_height: tuple = (1.0, 1.6)
    window_width: tuple = (0.6, 1.5)
    window_height: tuple = (0.6, 1.2)
    window_sill: tuple = (0.6, 1.0)
    carve_margin: float = 0.05
    clearance: float = 0.15
    trans_clearance: float = 0.05
    sigma_max: float = 100.0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if len(self.crop_size) != 3 or min(self.crop_size) <= 0:
            raise ValueError("crop_size must be three positive lengths")
        if self.points_per_scene < 1:
            raise ValueError("points_per_scene must be >= 1")
        if self.free_ratio < 0:
            raise ValueError("free_ratio must be >= 0")
        if set(self.glass_kind_weights) - set(GLASS_KINDS) or sum(self.glass_kind_weights.values()) <= 0:
            raise ValueError(f"glass_kind_weights must use kinds {GLASS_KINDS} with positive total")
        lo, hi = self.glass_count
        if not 1 <= lo <= hi:
            raise ValueError("glass_count must satisfy 1 <= min <= max")
        if self.footprint_range[0] < max(self.crop_size[:2]):
            raise ValueError("footprint_range must start at or above the crop footprint")
        if min(self.clearance, self.trans_clearance, self.carve_margin) <= 0:
            raise ValueError("clearances and carve_margin must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items()}
        return cls(**kw)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass
class ScenePlan:
    index: int
    room: Room
    crop_origin: tuple
    bounds: Box
    walls: list
    glass: list


@dataclass
class ScenePair:
    scene_samples: DensitySampleSet
    trans_samples: DensitySampleSet
    bounds: Box
    plan: Optional[ScenePlan] = None
    surface: Optional[PointCloud] = None
    trans: Optional[PointCloud] = None


def _glass_on_wall(kind: str, wall: Rect, normal: tuple, room_h: float, cfg: SynthConfig,
                   rng: np.random.Generator) -> Optional[GlassSpec]:
    edge = 0.1
    avail = (wall.lo[0] + edge, wall.hi[0] - edge)
    wmin, wmax = getattr(cfg, f"{kind}_width")
    wmax = min(wmax, avail[1] - avail[0])
    if wmax < wmin:
        return None
    width = rng.uniform(wmin, wmax)
    ch = rng.uniform(avail[0] + width / 2, avail[1] - width / 2)
    top = min(room_h, wall.hi[1])
    if kind == "full_pane":
        z0, z1 = 0.0, top
    elif kind == "half_pane":
        z0, z1 = 0.0, min(rng.uniform(*cfg.half_pane_height), top)
    else:
        sill = rng.uniform(*cfg.window_sill)
        hgt = rng.uniform(*cfg.window_height)
        z0, z1 = sill, min(sill + hgt, top - 0.2)
        if z1 - z0 < 0.3:
            return None
    center = [0.0, 0.0, (z0 + z1) / 2]
    center[wall.axis] = wall.offset
    center[1 - wall.axis] = ch
    return GlassSpec(kind, tuple(center), float(width), float(z1 - z0), normal)


def _overlaps(a: Rect, b: Rect, gap: float = 0.1) -> bool:
    if a.axis != b.axis or abs(a.offset - b.offset) > 1e-9:
        return False
    return not (a.hi[0] + gap <= b.lo[0] or b.hi[0] + gap <= a.lo[0])


def plan_scene(index: int, cfg: SynthConfig, seed: int) -> ScenePlan:
    """Room, crop window and glass layout for one scene (no point sampling)."""
    rng = substream(seed, "scene", index)
    fp = tuple(float(x) for x in rng.uniform(cfg.footprint_range[0], cfg.footprint_range[1], 2))
    h = float(rng.uniform(*cfg.wall_height_range))
    clutter = int(rng.integers(cfg.clutter_range[0], cfg.clutter_range[1] + 1))
    room = build_room(RoomSpec(int(rng.integers(0, 2**63)), fp, h, clutter))
    # non-overlapping sliding windows over the footprint; pick one
    nx = int(fp[0] // cfg.crop_size[0])
    ny = int(fp[1] // cfg.crop_size[1])
    origin = (float(rng.integers(nx) * cfg.crop_size[0]), float(rng.integers(ny) * cfg.crop_size[1]), 0.0)
    bounds = Box.from_origin(origin, cfg.crop_size)
    walls = [c for c in (w.clip(bounds) for w in room.walls) if c is not None]
    if not walls:
        raise RuntimeError(f"scene {index}: crop holds no wall")

    kinds = list(cfg.glass_kind_weights)
    p = np.array([cfg.glass_kind_weights[k] for k in kinds], float)
    p /= p.sum()
    count = int(rng.integers(cfg.glass_count[0], cfg.glass_count[1] + 1))
    glass = []
    for _ in range(count):
        kind = kinds[int(rng.choice(len(kinds), p=p))]
        for _attempt in range(20):
            wall = walls[int(rng.integers(len(walls)))]
            spec = _glass_on_wall(kind, wall, wall_normal(fp + (h,), wall), h, cfg, rng)
            if spec is not None and not any(_overlaps(spec.rect(), g.rect()) for g in glass):
                glass.append(spec)
                break
    if not glass:
        raise RuntimeError(f"scene {index}: could not place any glass")
    return ScenePlan(index, room, origin, bounds, walls, glass)


def make_scene(plan: ScenePlan, cfg: SynthConfig, seed: int) -> ScenePair:
    rng = substream(seed, "sample", plan.index)
    mesh = crop_scene(plan.room.mesh(), plan.crop_origin, cfg.crop_size)
    cloud = sample_surface(mesh, cfg.points_per_scene, rng)
    xs, xt = carve_glass(cloud, plan.glass, cfg.carve_margin, plan.walls)
    n_free = int(round(cfg.free_ratio * cfg.points_per_scene))
    free_s = sample_free_space(plan.bounds, n_free, xs, cfg.clearance, rng)
    free_t = sample_free_space(plan.bounds, n_free, xt, cfg.trans_clearance, rng)
    sm = cfg.sigma_max
    scene = DensitySampleSet(np.concatenate([xs.points, free_s.points]),
                             np.concatenate([np.full(len(xs), sm), np.zeros(len(free_s))]))
    trans = DensitySampleSet(np.concatenate([xt.points, free_t.points]),
                             np.concatenate([np.full(len(xt), sm), np.zeros(len(free_t))]))
    return ScenePair(scene, trans, plan.bounds, plan, xs, xt)


def make_dataset(count: int, cfg: Optional[SynthConfig] = None, seed: int = 0,
                 out: Optional[Path] = None, start: int = 0) -> list:
    """Generate `count` scene pairs; scene i uses substreams of (seed, start + i)."""
    cfg = cfg or SynthConfig()
    if count < 1:
        raise ValueError("count must be >= 1")
    pairs = [make_scene(plan_scene(start + i, cfg, seed), cfg, seed) for i in range(count)]
    if out is not None:
        write_dataset(out, pairs, cfg, seed)
    return pairs


def write_dataset(out, pairs: Sequence[ScenePair], cfg: SynthConfig, seed: int) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    index = []
    for pair in pairs:
        name = f"scene_{pair.plan.index:05d}"
        d = out / name
        d.mkdir(exist_ok=True)
        sm = cfg.sigma_max
        s_surf = pair.scene_samples.density == sm
        t_surf = pair.trans_samples.density == sm
        save_cloud(d / "scene.ply", PointCloud(pair.scene_samples.points[s_surf]))
        save_cloud(d / "trans.ply", PointCloud(pair.trans_samples.points[t_surf]))
        free = np.concatenate([pair.scene_samples.points[~s_surf], pair.trans_samples.points[~t_surf]])
        label = np.concatenate([np.zeros((~s_surf).sum(), np.uint8), np.ones((~t_surf).sum(), np.uint8)])
        save_cloud(d / "free.ply", PointCloud(free), extra={"field": label})
        meta = {
            "index": pair.plan.index,
            "seed": seed,
            "bounds": pair.bounds.to_list(),
            "crop_origin": list(pair.plan.crop_origin),
            "room": {"seed": pair.plan.room.spec.seed, "footprint": list(pair.plan.room.spec.footprint),
                     "wall_height": pair.plan.room.spec.wall_height,
                     "clutter_count": pair.plan.room.spec.clutter_count},
            "glass": [g.to_dict() for g in pair.plan.glass],
        }
        (d / "meta.json").write_text(json.dumps(meta, indent=1))
        index.append(name)
    (out / "dataset.json").write_text(json.dumps(
        {"seed": seed, "config": cfg.to_dict(), "sigma_max": cfg.sigma_max, "scenes": index}, indent=1))


def load_dataset(root) -> list:
    """Read a dataset directory back into ScenePairs (without plans)."""
    from .io import load_cloud

    root = Path(root)
    idx = json.loads((root / "dataset.json").read_text())
    sm = float(idx.get("sigma_max", 100.0))
    pairs = []
    for name in idx["scenes"]:
        d = root / name
        meta = json.loads((d / "meta.json").read_text())
        xs = load_cloud(d / "scene.ply")
        xt = load_cloud(d / "trans.ply")
        free, extra = load_cloud(d / "free.ply", with_extra=True)
        lab = extra["field"]
        fs, ft = free.points[lab == 0], free.points[lab == 1]
        scene = DensitySampleSet(np.concatenate([xs.points, fs]),
                                 np.concatenate([np.full(len(xs), sm), np.zeros(len(fs))]))
        trans = DensitySampleSet(np.concatenate([xt.points, ft]),
                                 np.concatenate([np.full(len(xt), sm), np.zeros(len(ft))]))
        pairs.append(ScenePair(scene, trans, Box.from_list(meta["bounds"]), None, xs, xt))
    return pairs
