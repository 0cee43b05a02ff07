"""Scene / transparent decoder pair and the per-scene objectives.

    L_scene = sum_j (f_s(z_s, x_j) - sigma_j)^2 + |z_s|^2 / sigma_z^2
    L_trans = sum_j (f_t(z_t (+) z_s, x_j) - sigma_j)^2 + |z_t|^2 / sigma_z^2

f(.) decodes a grid over the scene's crop box and samples it trilinearly.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..geometry import Box, DensityGrid, DensitySampleSet, trilinear_weights
from .decoder import Decoder, DecoderConfig

SIGMA_Z = 0.01
SIGMA_MAX = 100.0


@dataclass(frozen=True)
class ModelConfig:
    scene_latent: int = 256
    trans_latent: int = 8
    grid: int = 32
    coarse: int = 4
    widths: tuple = (32, 16, 8)
    sigma_max: float = SIGMA_MAX
    sigma_z: float = SIGMA_Z
    out_bias: float = -2.0

    def scene_decoder(self) -> DecoderConfig:
        return DecoderConfig(self.scene_latent, self.grid, self.coarse, tuple(self.widths), self.sigma_max)

    def trans_decoder(self) -> DecoderConfig:
        # transparent decoder reads z_t concatenated with z_s
        return DecoderConfig(self.trans_latent + self.scene_latent, self.grid, self.coarse,
                             tuple(self.widths), self.sigma_max)

    def to_dict(self) -> dict:
        return {"scene_latent": self.scene_latent, "trans_latent": self.trans_latent, "grid": self.grid,
                "coarse": self.coarse, "widths": list(self.widths), "sigma_max": self.sigma_max,
                "sigma_z": self.sigma_z, "out_bias": self.out_bias}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        if "widths" in d:
            d["widths"] = tuple(d["widths"])
        cfg = cls(**d)
        cfg.scene_decoder()  # validates grid / coarse / widths
        return cfg


class LatentKindError(ValueError):
    pass


@dataclass
class LatentCode:
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("scene", "trans"):
            raise LatentKindError(f"unknown latent kind {self.kind!r}")
        self.values = np.asarray(self.values)

    @classmethod
    def sample(cls, kind: str, size: int, rng: np.random.Generator, sigma_z: float = SIGMA_Z,
               dtype=np.float32) -> "LatentCode":
        return cls(rng.normal(0.0, sigma_z, size).astype(dtype), kind)

    def __len__(self):
        return len(self.values)


@dataclass
class Observation:
    """Samples of one scene with their trilinear stencils precomputed for a grid size."""

    samples: DensitySampleSet
    idx: np.ndarray
    w: np.ndarray

    @classmethod
    def build(cls, samples: DensitySampleSet, grid: int, bounds: Box, dtype=np.float32) -> "Observation":
        idx, w = trilinear_weights((grid,) * 3, bounds, samples.points)
        return cls(samples, idx.astype(np.int64), w.astype(dtype))

    def __len__(self):
        return len(self.samples)


class VairModel:
    """Decoder parameters (theta for the scene decoder, phi for the transparent one)."""

    def __init__(self, cfg: ModelConfig, scene: Decoder, trans: Decoder):
        self.cfg = cfg
        self.scene = scene
        self.trans = trans

    @classmethod
    def init(cls, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32) -> "VairModel":
        return cls(cfg, Decoder.init(cfg.scene_decoder(), rng, dtype, cfg.out_bias),
                   Decoder.init(cfg.trans_decoder(), rng, dtype, cfg.out_bias))

    @property
    def dtype(self):
        return self.scene.dtype

    def copy(self) -> "VairModel":
        return VairModel(self.cfg, self.scene.copy(), self.trans.copy())

    def astype(self, dtype) -> "VairModel":
        return VairModel(self.cfg, self.scene.astype(dtype), self.trans.astype(dtype))

    def named_params(self) -> dict:
        out = {f"scene.{k}": v for k, v in self.scene.params.items()}
        out.update({f"trans.{k}": v for k, v in self.trans.params.items()})
        return out

    def _check(self, code: LatentCode, kind: str) -> np.ndarray:
        if not isinstance(code, LatentCode) or code.kind != kind:
            raise LatentKindError(f"expected a {kind} code")
        want = self.cfg.scene_latent if kind == "scene" else self.cfg.trans_latent
        if len(code) != want:
            raise LatentKindError(f"{kind} code has length {len(code)}, model expects {want}")
        return code.values

    def trans_input(self, z_t: LatentCode, z_s: LatentCode) -> np.ndarray:
        return np.concatenate([self._check(z_t, "trans"), self._check(z_s, "scene")])

    def decode_scene(self, z_s: LatentCode, bounds: Box) -> DensityGrid:
        return DensityGrid(self.scene.forward(self._check(z_s, "scene")), bounds, self.cfg.sigma_max)

    def decode_trans(self, z_t: LatentCode, z_s: LatentCode, bounds: Box) -> DensityGrid:
        return DensityGrid(self.trans.forward(self.trans_input(z_t, z_s)), bounds, self.cfg.sigma_max)

    def field_at(self, z_s: LatentCode, points, bounds: Box, which: str = "scene",
                 z_t: Optional[LatentCode] = None) -> np.ndarray:
        if which == "scene":
            grid = self.decode_scene(z_s, bounds)
        elif which == "trans":
            if z_t is None:
                raise LatentKindError("transparent field needs a trans code")
            grid = self.decode_trans(z_t, z_s, bounds)
        else:
            raise ValueError("which must be 'scene' or 'trans'")
        return grid.sample(points)

    # objectives -----------------------------------------------------------

    def _data_term(self, grid: np.ndarray, obs: Observation):
        pred = (grid.ravel()[obs.idx] * obs.w).sum(axis=1, dtype=np.float64)
        r = pred - obs.samples.density
        return float(r @ r), r

    def _grid_grad(self, r: np.ndarray, obs: Observation, size: int, dtype) -> np.ndarray:
        g = np.bincount(obs.idx.ravel(), weights=(2.0 * r[:, None] * obs.w).ravel(), minlength=size)
        return g.astype(dtype)

    def reg(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=np.float64)
        return float(z @ z) / self.cfg.sigma_z ** 2

    def observe(self, samples, bounds: Optional[Box] = None) -> Observation:
        if isinstance(samples, Observation):
            return samples
        if bounds is None:
            raise ValueError("raw samples need the crop bounds")
        return Observation.build(samples, self.cfg.grid, bounds, self.dtype)

    def loss_scene(self, z_s: LatentCode, samples, bounds: Optional[Box] = None) -> float:
        obs = self.observe(samples, bounds)
        if not len(obs):
            raise ValueError("scene samples are empty")
        grid = self.scene.forward(self._check(z_s, "scene"))
        return self._data_term(grid, obs)[0] + self.reg(z_s.values)

    def loss_trans(self, z_t: LatentCode, z_s: LatentCode, samples, bounds: Optional[Box] = None) -> float:
        obs = self.observe(samples, bounds)
        if not len(obs):
            raise ValueError("transparent samples are empty")
        grid = self.trans.forward(self.trans_input(z_t, z_s))
        return self._data_term(grid, obs)[0] + self.reg(z_t.values)

    def loss_and_grads(self, z_s: LatentCode, z_t: LatentCode, scene_obs: Observation,
                       trans_obs: Optional[Observation], param_grads: bool = True):
        """L_scene + L_trans with gradients wrt decoder parameters and both codes.

        Returns ``(parts, grads, dz_s, dz_t)``, where ``parts`` = (L_scene, L_trans).
        An empty/None ``trans_obs`` contributes only the z_t regularizer.
        """
        zs = self._check(z_s, "scene")
        zt = self._check(z_t, "trans")
        sig2 = self.cfg.sigma_z ** 2
        dt = self.dtype

        gs, cache_s = self.scene.forward(zs, keep=True)
        ls, r = self._data_term(gs, scene_obs)
        ls += self.reg(zs)
        grads_s, dzs = self.scene.backward(cache_s, self._grid_grad(r, scene_obs, gs.size, dt).reshape(gs.shape),
                                           param_grads)
        dzs = dzs + (2.0 / sig2) * zs

        lt = self.reg(zt)
        dzt = (2.0 / sig2) * zt
        grads_t = {}
        if trans_obs is not None and len(trans_obs):
            gt, cache_t = self.trans.forward(np.concatenate([zt, zs]), keep=True)
            d, r = self._data_term(gt, trans_obs)
            lt += d
            grads_t, dzin = self.trans.backward(
                cache_t, self._grid_grad(r, trans_obs, gt.size, dt).reshape(gt.shape), param_grads)
            k = self.cfg.trans_latent
            dzt = dzt + dzin[:k]
            dzs = dzs + dzin[k:]
        elif param_grads:
            grads_t = {k: np.zeros_like(v) for k, v in self.trans.params.items()}

        grads = {}
        if param_grads:
            grads = {f"scene.{k}": v for k, v in grads_s.items()}
            grads.update({f"trans.{k}": v for k, v in grads_t.items()})
        return (ls, lt), grads, dzs.astype(dt), dzt.astype(dt)
