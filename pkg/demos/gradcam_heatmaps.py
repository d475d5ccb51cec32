"""
Where the model looks: activation heatmaps per task
===================================================

Grad-CAM weights the aggregated feature maps by each task target's
gradient. After a short overfit on plants whose only reliable height cue
is their vertical extent, the height map should pile its mass on the
upper half of a tall plant; the segmentation map spreads across the
foliage instead.
"""

import tempfile
from pathlib import Path

import numpy as np

from weedmtl.data import (SynthSpec, generate_sample, normalize_image,
                          save_image)
from weedmtl.gradcam import grad_cam
from weedmtl.losses import LossWeights
from weedmtl.model import ModelConfig, build
from weedmtl.training import TrainConfig, train

# One species with a randomized growth rate per sample, so neither color
# nor week identifies the height and the network has to measure extent.
# 300 iterations at 128x128 take about six minutes on one core.
spec = SynthSpec(species=(2,), weeks=(2, 5, 8, 11), growth_rates=(1.8,),
                 image_size=128, px_per_cm=4.5, noise=0.08, seed=5)
rng = np.random.default_rng(77)
samples = []
for week in spec.weeks:
    for rep in range(2):
        rate = float(rng.uniform(1.7, 2.2))
        samples.append(generate_sample(spec, 2, week, rep, rate=rate))

model = build(ModelConfig(size="medium"), seed=0)
cfg = TrainConfig(epochs=150, batch_size=4, base_lr=2e-3, warmup_iters=30,
                  min_lr=1e-5, seed=0, aug=None, use_class_weights=False,
                  loss_weights=LossWeights(height=2.0, week=2.0))
result = train(model, samples, cfg)
print(f"trained {result.iterations} iterations, final loss "
      f"{result.rows[-1]['loss_total']:.2f}")

# Heatmaps live at 1/8 of the input resolution and are min-max scaled.
tall = max(samples, key=lambda s: s.height_cm)
x = normalize_image(tall.image)[None].astype(np.float32)
out_dir = Path(tempfile.mkdtemp(prefix="heatmaps_"))
for task in ("seg", "height", "week"):
    heat, degenerate = grad_cam(model, x, task)
    save_image(np.repeat(heat[0], 3, axis=0), out_dir / f"{task}.png")
    rows = heat[0, 0].mean(axis=1)
    bar = "".join(" .:-=+*#"[min(7, int(v * 8))] for v in rows)
    print(f"{task:<7} degenerate={degenerate}  row profile |{bar}|")

h = 128 // 8
heat, _ = grad_cam(model, x, "height")
top = float(heat[0, 0, :h // 2].sum())
bottom = float(heat[0, 0, h // 2:].sum())
print(f"height map on the {tall.height_cm:.0f}cm plant: "
      f"top half {top:.2f} vs bottom half {bottom:.2f}")
print(f"wrote {out_dir}/seg.png height.png week.png")
