"""Joint decoder/code training and frozen-decoder latent inference."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..geometry import Box, DensityGrid, DensitySampleSet
from ..synthgen import substream
from .model import LatentCode, ModelConfig, Observation, VairModel
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 250
    lr: float = 1e-3
    seed: int = 0
    max_steps: Optional[int] = None
    checkpoint_every: int = 0
    batch: Optional[int] = None

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    model: VairModel
    scene_codes: np.ndarray
    trans_codes: np.ndarray
    opt: Adam
    config: TrainConfig
    epoch: int = 0
    pos: int = 0
    step: int = 0
    trace: list = field(default_factory=list)

    def codes(self, i: int) -> tuple:
        return LatentCode(self.scene_codes[i], "scene"), LatentCode(self.trans_codes[i], "trans")


def init_state(n_scenes: int, model_cfg: ModelConfig, train_cfg: TrainConfig, dtype=np.float32) -> TrainState:
    rng = substream(train_cfg.seed, "init")
    model = VairModel.init(model_cfg, rng, dtype)
    zs = rng.normal(0.0, model_cfg.sigma_z, (n_scenes, model_cfg.scene_latent)).astype(dtype)
    zt = rng.normal(0.0, model_cfg.sigma_z, (n_scenes, model_cfg.trans_latent)).astype(dtype)
    return TrainState(model, zs, zt, Adam(train_cfg.lr), train_cfg)


def observations(model: VairModel, pairs: Sequence) -> list:
    out = []
    for p in pairs:
        out.append((Observation.build(p.scene_samples, model.cfg.grid, p.bounds, model.dtype),
                    Observation.build(p.trans_samples, model.cfg.grid, p.bounds, model.dtype)))
    return out


def _subset(obs: Observation, rng: np.random.Generator, k: Optional[int]) -> Observation:
    if k is None or len(obs) <= k:
        return obs
    sel = np.sort(rng.choice(len(obs), k, replace=False))
    s = obs.samples
    return Observation(DensitySampleSet(s.points[sel], s.density[sel]), obs.idx[sel], obs.w[sel])


def train(pairs: Sequence, model_cfg: Optional[ModelConfig] = None, config: Optional[TrainConfig] = None,
          state: Optional[TrainState] = None, checkpoint_dir: Optional[Path] = None,
          obs: Optional[list] = None) -> TrainState:
    """Minimize L_scene + L_trans over decoder weights and per-scene codes (one scene per step)."""
    if not pairs:
        raise ValueError("training set is empty")
    if state is None:
        state = init_state(len(pairs), model_cfg or ModelConfig(), config or TrainConfig())
    cfg = state.config
    if len(state.scene_codes) != len(pairs):
        raise ValueError(f"state holds {len(state.scene_codes)} codes for {len(pairs)} scenes")
    model, opt = state.model, state.opt
    obs = obs if obs is not None else observations(model, pairs)
    n = len(pairs)

    while state.epoch < cfg.epochs:
        order = substream(cfg.seed, "epoch", state.epoch).permutation(n)
        totals = []
        while state.pos < n:
            if cfg.max_steps is not None and state.step >= cfg.max_steps:
                return state
            i = int(order[state.pos])
            so, to = obs[i]
            if cfg.batch is not None:
                brng = substream(cfg.seed, "batch", state.step)
                so, to = _subset(so, brng, cfg.batch), _subset(to, brng, cfg.batch)
            zs, zt = state.codes(i)
            (ls, lt), grads, dzs, dzt = model.loss_and_grads(zs, zt, so, to)
            if not (np.isfinite(ls) and np.isfinite(lt)):
                raise TrainingError(f"non-finite loss at step {state.step} on scene {i}: "
                                    f"L_scene={ls}, L_trans={lt}")
            params = model.named_params()
            for k, g in grads.items():
                opt.update(k, params[k], g)
            opt.update_row("codes.scene", state.scene_codes, i, dzs)
            opt.update_row("codes.trans", state.trans_codes, i, dzt)
            state.trace.append((state.step, ls, lt, ls + lt))
            totals.append(ls + lt)
            state.step += 1
            state.pos += 1
        log.info("epoch %d: mean L_train %.6g", state.epoch, float(np.mean(totals)) if totals else float("nan"))
        state.epoch += 1
        state.pos = 0
        if checkpoint_dir is not None and cfg.checkpoint_every and state.epoch % cfg.checkpoint_every == 0:
            from .checkpoint import save_state

            save_state(Path(checkpoint_dir) / f"ckpt_{state.epoch:04d}.vckp", state)
    return state


def write_trace(path, trace: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss_scene", "loss_trans", "loss_total"])
        for row in trace:
            w.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


@dataclass
class InferConfig:
    iterations: int = 25
    lr: float = 8e-3
    seed: int = 0
    grad_scale: str = "normalized"

    @classmethod
    def from_dict(cls, d: dict) -> "InferConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown infer config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class InferenceResult:
    z_s: LatentCode
    z_t: LatentCode
    trans_field: DensityGrid
    scene_field: DensityGrid
    trace: list
    init: tuple


def infer(model: VairModel, scene_obs: DensitySampleSet, trans_obs: DensitySampleSet, bounds: Box,
          config: Optional[InferConfig] = None) -> InferenceResult:
    """Fit fresh codes to the observations by plain gradient descent with the decoders frozen.

    The raw gradient of L_inf is too steep for a fixed step (the code prior alone has
    curvature 2 / sigma_z^2), so by default it is divided by N * sigma_max, N being the
    number of observed samples. ``grad_scale="mean"`` divides by N only and ``"sum"``
    applies the raw gradient.
    """
    cfg = config or InferConfig()
    if len(scene_obs) == 0:
        raise ValueError("scene observations are empty")
    if len(trans_obs) == 0:
        log.warning("no transparent observations; fitting the scene only")
    if cfg.grad_scale not in ("normalized", "mean", "sum"):
        raise ValueError("grad_scale must be 'normalized', 'mean' or 'sum'")
    mc = model.cfg
    rng = substream(cfg.seed, "infer")
    zs = rng.normal(0.0, mc.sigma_z, mc.scene_latent).astype(model.dtype)
    zt = rng.normal(0.0, mc.sigma_z, mc.trans_latent).astype(model.dtype)
    init = (zs.copy(), zt.copy())
    so = model.observe(scene_obs, bounds)
    to = model.observe(trans_obs, bounds) if len(trans_obs) else None
    n_obs = len(so) + (len(to) if to is not None else 0)
    scale = {"normalized": 1.0 / (n_obs * mc.sigma_max), "mean": 1.0 / n_obs, "sum": 1.0}[cfg.grad_scale]
    lr = model.dtype.type(cfg.lr * scale)
    trace = []
    for _ in range(cfg.iterations):
        (ls, lt), _, dzs, dzt = model.loss_and_grads(LatentCode(zs, "scene"), LatentCode(zt, "trans"),
                                                      so, to, param_grads=False)
        trace.append((ls, lt, ls + lt))
        zs = zs - lr * dzs
        zt = zt - lr * dzt
    z_s, z_t = LatentCode(zs, "scene"), LatentCode(zt, "trans")
    ls = model.loss_scene(z_s, so)
    lt = model.loss_trans(z_t, z_s, to) if to is not None else model.reg(zt)
    trace.append((ls, lt, ls + lt))
    return InferenceResult(z_s, z_t, model.decode_trans(z_t, z_s, bounds), model.decode_scene(z_s, bounds),
                           trace, init)


def grad_check(model: VairModel, z_s: LatentCode, z_t: LatentCode, scene_obs, trans_obs, bounds: Box,
               delta: float = 1e-4, max_coords: Optional[int] = None, seed: int = 0) -> dict:
    """Compare analytic gradients of L_scene + L_trans with central differences.

    Works on a float64 copy. Relative error per coordinate is
    |a - n| / max(|a|, |n|, 1e-6 * max|a|). Returns the max relative error and the
    number of coordinates checked.
    """
    m = model.astype(np.float64)
    zs = LatentCode(np.asarray(z_s.values, np.float64).copy(), "scene")
    zt = LatentCode(np.asarray(z_t.values, np.float64).copy(), "trans")
    so, to = m.observe(scene_obs, bounds), m.observe(trans_obs, bounds)
    _, grads, dzs, dzt = m.loss_and_grads(zs, zt, so, to)

    def total() -> float:
        ls, lt = m.loss_scene(zs, so), m.loss_trans(zt, zs, to)
        return ls + lt

    coords = []
    params = m.named_params()
    for k, p in params.items():
        coords += [(p, grads[k], j) for j in range(p.size)]
    coords += [(zs.values, dzs, j) for j in range(zs.values.size)]
    coords += [(zt.values, dzt, j) for j in range(zt.values.size)]
    if max_coords is not None and len(coords) > max_coords:
        pick = np.random.default_rng(seed).choice(len(coords), max_coords, replace=False)
        coords = [coords[i] for i in sorted(pick)]

    analytic, numeric = [], []
    for arr, g, j in coords:
        flat = arr.reshape(-1)
        old = flat[j]
        flat[j] = old + delta
        fp = total()
        flat[j] = old - delta
        fm = total()
        flat[j] = old
        numeric.append((fp - fm) / (2 * delta))
        analytic.append(g.reshape(-1)[j])
    a, nmr = np.array(analytic), np.array(numeric)
    floor = 1e-6 * np.abs(a).max() if len(a) else 0.0
    rel = np.abs(a - nmr) / np.maximum.reduce([np.abs(a), np.abs(nmr), np.full(len(a), floor + 1e-300)])
    return {"max_rel_error": float(rel.max()) if len(rel) else 0.0, "checked": len(a),
            "analytic": a, "numeric": nmr}
