#!/usr/bin/env python3
"""Train the small residual classifier on a CIFAR-10 category subset.

Walks through the full training story: load the binary batches, compute
channel statistics, carve out a relabeled subset, train with seeded SGD,
and save a weight file the other demos can reuse.

    python demos/train_classifier.py --data data/cifar-10-batches-bin \
        --classes cat,dog --epochs 5 --out demo_out
"""

import argparse
import time
from pathlib import Path

from cnnscope import (
    CIFAR10_CLASSES,
    Hyper,
    build_model,
    compute_stats,
    default_spec,
    load_cifar10,
    save_weights,
    subset,
    train,
)

parser = argparse.ArgumentParser()
parser.add_argument("--data", default="data/cifar-10-batches-bin")
parser.add_argument("--classes", default="cat,dog")
parser.add_argument("--epochs", type=int, default=5)
parser.add_argument("--lr", type=float, default=0.02)
parser.add_argument("--batch-size", type=int, default=16)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

print("loading CIFAR-10 ...")
train_images = load_cifar10(args.data, "train")
test_images = load_cifar10(args.data, "test")

# channel statistics come from the full training split; every later stage
# (training, synthesis, attribution) normalizes with these same numbers
stats = compute_stats(train_images)
print("channel means:", [f"{m:.3f}" for m in stats.channel_mean])
print("channel stds: ", [f"{s:.3f}" for s in stats.channel_std])

names = tuple(args.classes.split(","))
labels = [CIFAR10_CLASSES.index(n) for n in names]
relabel = {lab: i for i, lab in enumerate(labels)}
tr = subset(train_images, labels, relabel)
va = subset(test_images, labels, relabel)
print(f"subset {names}: {len(tr)} train / {len(va)} val images")

model = build_model(default_spec(len(names)), seed=args.seed)
hyper = Hyper(lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
              seed=args.seed)
t0 = time.time()
report = train(model, tr, va, hyper, stats)
print(f"trained in {time.time() - t0:.0f}s")
for e, (loss, acc) in enumerate(zip(report.epoch_loss, report.epoch_accuracy), 1):
    print(f"  epoch {e}: loss {loss:.4f}  train acc {acc:.3f}")
print(f"validation accuracy: {report.val_accuracy:.3f}")

weights = out / f"{'_'.join(names)}.mcnn"
save_weights(model, weights)
print(f"weights saved to {weights}")
