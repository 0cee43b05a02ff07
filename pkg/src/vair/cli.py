"""Command-line entry point: ``vair {gen,train,infer,eval,sim}``.

Every command reads an optional JSON ``--config`` whose sections are overridden by flags.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger("vair")

SECTIONS = ("synth", "model", "train", "infer", "pipeline", "sim", "eval")
LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class ConfigError(ValueError):
    """Bad configuration or usage; maps to exit code 2."""


@dataclass
class RunConfig:
    seed: int = 0
    threads: Optional[int] = None
    synth: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    infer: dict = field(default_factory=dict)
    pipeline: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path}: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError("config root must be an object")
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        for s in SECTIONS:
            if not isinstance(doc.get(s, {}), dict):
                raise ConfigError(f"config section '{s}' must be an object")
        return cls(**doc)


def _build(cls, values: dict, what: str):
    """Instantiate a config dataclass, turning unknown keys and bad values into ConfigError."""
    try:
        if hasattr(cls, "from_dict"):
            return cls.from_dict(dict(values))
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ValueError(f"unknown keys: {sorted(unknown)}")
        return cls(**values)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{what} config: {exc}") from None


def _set(section: dict, key: str, value) -> None:
    if value is not None:
        section[key] = value


# commands ---------------------------------------------------------------------------------

def cmd_gen(args, rc: RunConfig) -> int:
    from .synthgen import SynthConfig, make_dataset

    if args.scenes is None or args.scenes < 1:
        raise ConfigError("--scenes must be >= 1")
    if args.out is None:
        raise ConfigError("--out is required")
    cfg = _build(SynthConfig, rc.synth, "synth")
    make_dataset(args.scenes, cfg, seed=rc.seed, out=Path(args.out), start=args.start)
    log.info("wrote %d scenes to %s", args.scenes, args.out)
    return 0


def cmd_train(args, rc: RunConfig) -> int:
    from .glo import ModelConfig, TrainConfig, load_state, save_state, train, write_trace
    from .synthgen import load_dataset

    if args.data is None or not (Path(args.data) / "dataset.json").exists():
        raise ConfigError(f"dataset not found: {args.data}")
    if args.out is None:
        raise ConfigError("--out is required")
    _set(rc.model, "grid", args.grid)
    _set(rc.train, "epochs", args.epochs)
    _set(rc.train, "checkpoint_every", args.checkpoint_every)
    rc.train.setdefault("seed", rc.seed)
    mcfg = _build(ModelConfig, rc.model, "model")
    tcfg = _build(TrainConfig, rc.train, "train")
    pairs = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = None
    if args.resume:
        state = load_state(args.resume)
        if state.model.cfg != mcfg and rc.model:
            raise ConfigError(f"checkpoint model {state.model.cfg.to_dict()} does not match config {mcfg.to_dict()}")
        state.config = tcfg
        log.info("resuming at epoch %d, step %d", state.epoch, state.step)
    state = train(pairs, mcfg, tcfg, state=state, checkpoint_dir=out)
    save_state(out / "model.vckp", state)
    write_trace(out / "loss.csv", state.trace)
    if state.trace:
        log.info("loss %.6g -> %.6g over %d steps", state.trace[0][3], state.trace[-1][3], len(state.trace))
    return 0


def _pipeline_config(args, rc: RunConfig):
    from .pipeline import PipelineConfig

    p = dict(rc.pipeline)
    _set(p, "epsilon", args.epsilon)
    _set(p, "threshold", args.threshold)
    p.setdefault("seed", rc.seed)
    infer_cfg = dict(rc.infer)
    infer_cfg.setdefault("seed", rc.seed)
    p["infer"] = infer_cfg
    return _build(PipelineConfig, p, "pipeline")


def cmd_infer(args, rc: RunConfig) -> int:
    from .glo import ModelConfig, load_model
    from .glo.checkpoint import read_header
    from .io import save_cloud, save_grid
    from .pipeline import run

    if args.manifest is None or not Path(args.manifest).exists():
        raise ConfigError(f"manifest not found: {args.manifest}")
    if args.out is None:
        raise ConfigError("--out is required")
    arm = "aspp" if args.aspp_only else "depth" if args.depth_only else "vair"
    cfg = _pipeline_config(args, rc)
    model = None
    if arm == "vair":
        if args.checkpoint is None or not Path(args.checkpoint).exists():
            raise ConfigError(f"checkpoint not found: {args.checkpoint}")
        try:
            header = read_header(args.checkpoint)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for key in ("scene_latent", "trans_latent", "grid"):
            if key in rc.model and rc.model[key] != header["model"][key]:
                raise ConfigError(f"config {key}={rc.model[key]} but checkpoint has {header['model'][key]}")
        _build(ModelConfig, {**header["model"], **rc.model}, "model")
        model = load_model(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = run(args.manifest, model, cfg, arm)
    save_cloud(out / "transparent.ply", res.transparent)
    summary = {"arm": arm, "bounds": res.evidence.bounds.to_list(), "apc_points": len(res.evidence.apc),
               "aspp_points": len(res.evidence.aspp), "glass_rays": res.evidence.n_rays,
               "transparent_points": len(res.transparent)}
    if res.inference is not None:
        save_cloud(out / "scene.ply", res.scene)
        save_grid(out / "trans_grid.vgrd", res.inference.trans_field)
        save_grid(out / "scene_grid.vgrd", res.inference.scene_field)
        summary["loss_trace"] = [list(map(float, t)) for t in res.inference.trace]
    (out / "infer.json").write_text(json.dumps(summary, indent=1))
    if not len(res.transparent):
        log.warning("transparent prediction is empty")
    log.info("%s: %d transparent points -> %s", arm, len(res.transparent), out)
    return 0


def _load_gt(path: Path):
    from .geometry import Box
    from .io import load_cloud, load_mesh, read_ply

    bounds = None
    if path.is_dir():
        meta = path / "meta.json"
        if meta.exists():
            bounds = Box.from_list(json.loads(meta.read_text())["bounds"])
        path = path / "gt_glass.ply"
    if not path.exists():
        raise ConfigError(f"ground truth not found: {path}")
    if path.suffix == ".obj":
        return load_mesh(path), bounds
    try:
        faces = read_ply(path).get("faces")
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if faces is not None and len(faces):
        return load_mesh(path), bounds
    return load_cloud(path), bounds


def cmd_eval(args, rc: RunConfig) -> int:
    from .geometry import Box, PointCloud
    from .io import load_cloud
    from .metrics import EVAL_POINTS, EVAL_RES, evaluate, table

    preds, gts = args.pred or [], args.gt or []
    if not preds or len(preds) != len(gts):
        raise ConfigError("--pred and --gt need the same, non-zero number of paths")
    names = args.names or [Path(p).parent.name or Path(p).stem for p in preds]
    if len(names) != len(preds):
        raise ConfigError("--names must match the number of predictions")
    res = int(args.resolution or rc.eval.get("resolution", EVAL_RES))
    n_gt = int(rc.eval.get("gt_points", EVAL_POINTS))
    reports = {}
    for name, p, g in zip(names, preds, gts):
        pp = Path(p)
        if pp.is_dir():
            pp = pp / "transparent.ply"
        if not pp.exists():
            raise ConfigError(f"prediction not found: {pp}")
        gt, bounds = _load_gt(Path(g))
        if args.bounds is not None:
            bounds = Box(args.bounds[:3], args.bounds[3:])
        pred = load_cloud(pp)
        reports[name] = evaluate(pred, gt, bounds=bounds, resolution=res, n_gt=n_gt, seed=rc.seed)
    text = table(reports)
    out = Path(args.out) if args.out else None
    doc = {"per_scene": {k: asdict(v) for k, v in reports.items()}}
    if len(reports) > 1:
        doc["average"] = {k: float(np.mean([asdict(v)[k] for v in reports.values()]))
                          for k in ("iou_masked", "iou_unmasked", "iou_masked_recall", "cd_l1", "cd_l1_x1000")}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(json.dumps(doc, indent=1))
        (out / "report.txt").write_text(text + "\n")
    print(text)
    return 0


def cmd_sim(args, rc: RunConfig) -> int:
    from .geometry import CameraIntrinsics
    from .simfix import SimConfig, capture_plan
    from .synthgen import SynthConfig, plan_scene

    if args.out is None:
        raise ConfigError("--out is required")
    if args.scene is None or args.scene < 0:
        raise ConfigError("--scene must be a non-negative scene index")
    sim = dict(rc.sim)
    coverage = float(args.coverage if args.coverage is not None else sim.pop("coverage", 0.5))
    sim.pop("coverage", None)
    if isinstance(sim.get("intrinsics"), dict):
        sim["intrinsics"] = CameraIntrinsics.from_dict(sim["intrinsics"])
    if "sensor_yaws" in sim:
        sim["sensor_yaws"] = tuple(sim["sensor_yaws"])
    sim.setdefault("seed", rc.seed)
    scfg = _build(SimConfig, sim, "sim")
    synth = _build(SynthConfig, rc.synth, "synth")
    plan = plan_scene(args.scene, synth, rc.seed)
    res = capture_plan(plan, Path(args.out), coverage, scfg)
    log.info("simulated scene %d: %d frames, %d pings -> %s", args.scene, res.n_frames, res.n_pings, args.out)
    return 0


# argument parsing ------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file (flags override it)")
    common.add_argument("--seed", type=int, help="master seed for every random substream")
    common.add_argument("--threads", type=int, help="cap on BLAS threads; 1 gives bit-reproducible runs")
    common.add_argument("--out", help="output directory")

    ap = argparse.ArgumentParser(prog="vair", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", parents=[common], help="generate a synthetic training dataset")
    g.add_argument("--scenes", type=int, help="number of scenes")
    g.add_argument("--start", type=int, default=0, help="index of the first scene")

    t = sub.add_parser("train", parents=[common], help="train the decoders and per-scene codes")
    t.add_argument("--data", help="dataset directory written by 'gen'")
    t.add_argument("--epochs", type=int)
    t.add_argument("--grid", type=int, help="decoded grid size per axis")
    t.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    t.add_argument("--resume", help="checkpoint to continue from")

    i = sub.add_parser("infer", parents=[common], help="reconstruct glass from a capture manifest")
    i.add_argument("--manifest", help="capture manifest.json")
    i.add_argument("--checkpoint", help="trained model checkpoint")
    i.add_argument("--epsilon", type=float, help="ASPP pillar radius (m)")
    i.add_argument("--threshold", type=float, help="density threshold for point extraction")
    arm = i.add_mutually_exclusive_group()
    arm.add_argument("--aspp-only", action="store_true", help="emit the ASPP points as the prediction")
    arm.add_argument("--depth-only", action="store_true", help="emit the depth-camera cloud as the prediction")

    e = sub.add_parser("eval", parents=[common], help="voxel IOU and Chamfer-L1 against ground truth")
    e.add_argument("--pred", nargs="+", help="predicted clouds (or 'infer' output directories)")
    e.add_argument("--gt", nargs="+", help="ground-truth clouds/meshes (or 'sim' output directories)")
    e.add_argument("--names", nargs="+", help="row names for the report")
    e.add_argument("--resolution", type=int, help="voxels per axis (default 64)")
    e.add_argument("--bounds", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"))

    s = sub.add_parser("sim", parents=[common], help="simulate a capture of a generated scene")
    s.add_argument("--scene", type=int, help="scene index in the generator's sequence")
    s.add_argument("--coverage", type=float, help="fraction of the first pane's width swept")
    return ap


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval, "sim": cmd_sim}


def _configure_logging() -> None:
    level = os.environ.get("VAIR_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if level not in LOG_LEVELS:
        log.warning("VAIR_LOG=%s not recognised; using warn", level)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        rc = RunConfig.load(args.config)
        _set_run(rc, "seed", args.seed)
        _set_run(rc, "threads", args.threads)
        if rc.threads is not None and rc.threads < 1:
            raise ConfigError("--threads must be >= 1")
        if rc.threads is not None:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=rc.threads):
                return COMMANDS[args.command](args, rc)
        return COMMANDS[args.command](args, rc)
    except ConfigError as exc:
        log.error("%s", exc)
        return 2
    except KeyboardInterrupt:
        return 1
    except Exception as exc:  # runtime failure; keep the traceback at debug level
        log.error("%s: %s", type(exc).__name__, exc)
        log.debug("traceback", exc_info=True)
        return 1


def _set_run(rc: RunConfig, key: str, value) -> None:
    if value is not None:
        setattr(rc, key, value)


if __name__ == "__main__":
    sys.exit(main())
