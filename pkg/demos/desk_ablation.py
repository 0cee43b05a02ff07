"""
Three ways to guess where the glass is
======================================

Trains on generated rooms, then simulates a half-coverage sideways pass in front
of held-out rooms and scores three predictions of the glass against the truth:

- depth: the depth cloud itself (it sees through glass, so it should score ~0)
- aspp: acoustic returns lifted into pillars along glass-pixel rays
- vair: the transparent field found by latent search on that evidence

Run with ``python3 demos/desk_ablation.py [train_scenes] [epochs] [held_out]``.
The defaults (16 scenes, 30 epochs, 4 held out) finish in a few minutes; the
acceptance suite uses 64 scenes, 150 epochs and 8 held-out rooms.
"""
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from vair.glo import ModelConfig, TrainConfig, train
from vair.io import load_cloud
from vair.metrics import evaluate, table
from vair.pipeline import PipelineConfig, run
from vair.simfix import capture_plan
from vair.synthgen import SynthConfig, make_dataset, plan_scene

defaults = [16, 30, 4]
args = [int(a) for a in sys.argv[1:4]]
n_train, epochs, n_test = args + defaults[len(args):]
cfg = SynthConfig()
work = Path(tempfile.mkdtemp(prefix="vair_ablation_"))

t0 = time.perf_counter()
pairs = make_dataset(n_train, cfg, seed=0)
state = train(pairs, ModelConfig(), TrainConfig(epochs=epochs, seed=0))
print(f"trained on {n_train} scenes for {epochs} epochs in {time.perf_counter() - t0:.0f} s")

# held-out rooms continue the same generator stream past the training indices
pipe = PipelineConfig(n_points=100_000)
reports = {arm: {} for arm in ("depth", "aspp", "vair")}
for i in range(n_train, n_train + n_test):
    plan = plan_scene(i, cfg, 0)
    sim = capture_plan(plan, work / f"scene_{i}", coverage=0.5)
    gt = load_cloud(work / f"scene_{i}" / "gt_glass.ply")
    for arm, rows in reports.items():
        pred = run(sim.manifest, state.model, pipe, arm).transparent
        rows[f"scene_{i}"] = evaluate(pred, gt, bounds=plan.bounds)

for arm, rows in reports.items():
    print(f"\n[{arm}]")
    print(table(rows))

mean = {arm: np.mean([r.iou_masked for r in rows.values()]) for arm, rows in reports.items()}
print("\nmean masked IOU:", ", ".join(f"{k} {v:.3f}" for k, v in mean.items()))
