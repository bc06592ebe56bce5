#!/usr/bin/env python3
"""Fool one image and visualize where the change went.

Takes a correctly-classified validation image, nudges it toward the other
class with small-step logit ascent, and renders: the before/after images,
their class-evidence heatmaps, the difference heatmap, and the robustness
report. Fragile images flip early with diffuse difference maps.

    python demos/attribution_maps.py --weights demo_out/cat_dog.mcnn \
        --data data/cifar-10-batches-bin --out demo_out
"""

import argparse
from pathlib import Path

import numpy as np

from cnnscope import (
    compute_stats,
    diff_heatmap,
    grad_cam,
    load_cifar10,
    load_weights,
    robustness,
    subset,
)
from cnnscope.attribution import render_heatmap_pgm, render_overlay_ppm
from cnnscope.data import denormalize, to_batch, write_ppm
from cnnscope.maximize import AscentConfig, RegularizerConfig, ascend, class_logit
from cnnscope.model import predict_logits

parser = argparse.ArgumentParser()
parser.add_argument("--weights", default="demo_out/cat_dog.mcnn")
parser.add_argument("--data", default="data/cifar-10-batches-bin")
parser.add_argument("--lr", type=float, default=0.0001)
parser.add_argument("--epochs", type=int, default=100)
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

model = load_weights(args.weights)
train_images = load_cifar10(args.data, "train")
stats = compute_stats(train_images)
val = subset(load_cifar10(args.data, "test"), {3, 5}, {3: 0, 5: 1})

# first validation cat the model actually gets right
x_all, y_all = to_batch(val, stats)
preds = predict_logits(model, x_all).argmax(axis=1)
idx = next(i for i in range(len(val)) if y_all[i] == 0 and preds[i] == 0)
x = x_all[idx]
print(f"using {val[idx].source_id} (predicted cat)")

trace = ascend(model, class_logit(1), RegularizerConfig(),
               AscentConfig(lr=args.lr, epochs=args.epochs), x, stats)
print("prediction flip:", trace.flip_epoch or "never within the budget")

write_ppm(np.clip(denormalize(x, stats), 0, 1), out / "attr_before.ppm")
write_ppm(np.clip(denormalize(trace.final_image, stats), 0, 1), out / "attr_after.ppm")

for tag, img, cls in (("before_cat", x, 0), ("after_dog", trace.final_image, 1)):
    hm = grad_cam(model, img, cls)
    render_heatmap_pgm(hm, out / f"attr_cam_{tag}.pgm")
    render_overlay_ppm(np.clip(denormalize(img, stats), 0, 1), hm,
                       out / f"attr_overlay_{tag}.ppm")

dh = diff_heatmap(x, trace.final_image)
render_heatmap_pgm(dh, out / "attr_diff.pgm")

report = robustness(model, x, target_class=1, lr=args.lr,
                    budget_epochs=args.epochs, stats=stats)
print(f"robustness score {report.score:.2f} "
      f"(flip epoch {report.flip_epoch}, diff energy {report.diff_energy:.3f})")
print(f"artifacts under {out}/attr_*.p?m")
