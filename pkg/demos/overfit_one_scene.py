"""
Fit the decoders to one synthetic room, then recover it by latent search
========================================================================

Trains the scene and transparent decoders on a single generated desk-scale
scene, throws the learned codes away, and finds new ones by gradient descent
with the weights frozen. If the decoders memorized the scene, the transparent
field decoded from the recovered codes should put its dense voxels on the glass.

Run with ``python3 demos/overfit_one_scene.py [steps]`` (default 200; 500 is
what the acceptance suite uses and takes a few minutes).
"""
import sys
import time

import numpy as np

from vair.geometry import voxelize
from vair.glo import InferConfig, ModelConfig, TrainConfig, infer, train
from vair.metrics import extract_points, iou
from vair.synthgen import SynthConfig, make_dataset

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 200

# %% one scene: opaque samples, glass samples and free space around both
pair, = make_dataset(1, SynthConfig(), seed=1)
print("glass:", [g.kind for g in pair.plan.glass], "crop", pair.bounds)
print(f"{len(pair.scene_samples)} scene samples, {len(pair.trans_samples)} transparent samples")

# %% joint training of decoders and per-scene codes
t0 = time.perf_counter()
state = train([pair], ModelConfig(), TrainConfig(epochs=steps, max_steps=steps, seed=0))
first, last = state.trace[0][3], state.trace[-1][3]
print(f"{state.step} steps in {time.perf_counter() - t0:.0f} s, loss {first:.4g} -> {last:.4g} ({last / first:.2%})")

# %% fresh codes, frozen weights
res = infer(state.model, pair.scene_samples, pair.trans_samples, pair.bounds, InferConfig())
trace = np.array([t[2] for t in res.trace])
print("inference loss:", " ".join(f"{v:.3g}" for v in trace[::5]))

# %% compare voxels of the extracted glass points with the true glass samples
pts = extract_points(res.trans_field, 85.0, 200_000, seed=0)
pred, gt = voxelize(pts, 32, pair.bounds), voxelize(pair.trans, 32, pair.bounds)
print(f"masked IOU {iou(pred, gt, masked=True):.3f}, recall {iou(pred, gt, masked=True, variant='recall'):.3f}, "
      f"{pred.count()} predicted vs {gt.count()} true voxels")
