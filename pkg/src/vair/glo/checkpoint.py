"""Training checkpoints: b"VCKP", u32 header length, JSON header, then float32 LE arrays."""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .decoder import Decoder
from .model import ModelConfig, VairModel
from .optim import Adam
from .train import TrainConfig, TrainState

MAGIC = b"VCKP"
VERSION = 1


def _arrays(state: TrainState) -> dict:
    out = dict(state.model.named_params())
    out["codes.scene"] = state.scene_codes
    out["codes.trans"] = state.trans_codes
    for k in sorted(state.opt.m):
        out[f"adam.m.{k}"] = state.opt.m[k]
        out[f"adam.v.{k}"] = state.opt.v[k]
    return out


def save_state(path, state: TrainState, extra: dict | None = None) -> None:
    arrays = _arrays(state)
    entries, blobs, off = [], [], 0
    for name, arr in arrays.items():
        b = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": off})
        blobs.append(b)
        off += len(b)
    opt = state.opt
    header = {
        "version": VERSION,
        "model": state.model.cfg.to_dict(),
        "train": {k: getattr(state.config, k) for k in state.config.__dataclass_fields__},
        "epoch": state.epoch, "pos": state.pos, "step": state.step,
        "adam": {"lr": opt.lr, "beta1": opt.beta1, "beta2": opt.beta2, "eps": opt.eps,
                 "t": {k: v.tolist() for k, v in opt.t.items()}},
        "trace": [[int(s), float(a), float(b), float(c)] for s, a, b, c in state.trace],
        "arrays": entries,
        "extra": extra or {},
    }
    hb = json.dumps(header).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(hb)) + hb + b"".join(blobs))


def read_header(path) -> dict:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    (n,) = struct.unpack_from("<I", data, 4)
    return json.loads(data[8:8 + n].decode("utf-8"))


def load_state(path) -> TrainState:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint")
    (n,) = struct.unpack_from("<I", data, 4)
    header = json.loads(data[8:8 + n].decode("utf-8"))
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    base = 8 + n
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        arrays[e["name"]] = np.frombuffer(data, "<f4", count, base + e["offset"]).astype(np.float32).reshape(e["shape"])

    mcfg = ModelConfig.from_dict(header["model"])
    scene = {k[len("scene."):]: v for k, v in arrays.items() if k.startswith("scene.")}
    trans = {k[len("trans."):]: v for k, v in arrays.items() if k.startswith("trans.")}
    model = VairModel(mcfg, Decoder(mcfg.scene_decoder(), scene, np.float32),
                      Decoder(mcfg.trans_decoder(), trans, np.float32))
    a = header["adam"]
    opt = Adam(a["lr"], a["beta1"], a["beta2"], a["eps"])
    for k, t in a["t"].items():
        opt.t[k] = np.array(t, dtype=np.int64)
        opt.m[k] = arrays[f"adam.m.{k}"]
        opt.v[k] = arrays[f"adam.v.{k}"]
    tc = header["train"]
    cfg = TrainConfig.from_dict(tc)
    trace = [tuple(r) for r in header["trace"]]
    return TrainState(model, arrays["codes.scene"], arrays["codes.trans"], opt, cfg,
                      header["epoch"], header["pos"], header["step"], trace)


def load_model(path) -> VairModel:
    return load_state(path).model
