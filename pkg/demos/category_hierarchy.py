#!/usr/bin/env python3
"""Cluster the ten CIFAR categories by what the network sees.

Averages each category's deepest feature maps into a representative vector,
wires the categories into a complete half-cosine-distance graph, and emits
both the greedy merge hierarchy and the minimum spanning tree as DOT files
(render with `dot -Tpng`). Optionally adds generated noise as an eleventh
pseudo-category to see where it attaches.

    python demos/category_hierarchy.py --weights demo_out/ten.mcnn \
        --data data/cifar-10-batches-bin --include-noise 100 --out demo_out
"""

import argparse
from pathlib import Path

from cnnscope import (
    CIFAR10_CLASSES,
    build_hierarchy,
    category_graph,
    compute_stats,
    emit_tree_dot,
    gaussian_noise_images,
    load_cifar10,
    load_weights,
    minimum_spanning_tree,
    representative_vectors,
)

parser = argparse.ArgumentParser()
parser.add_argument("--weights", default="demo_out/ten.mcnn")
parser.add_argument("--data", default="data/cifar-10-batches-bin")
parser.add_argument("--layer", default="layer4")
parser.add_argument("--per-class", type=int, default=300)
parser.add_argument("--include-noise", type=int, default=0)
parser.add_argument("--seed", type=int, default=0)
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

model = load_weights(args.weights)
train_images = load_cifar10(args.data, "train")
stats = compute_stats(train_images)

counts: dict = {}
sample = []
for im in load_cifar10(args.data, "test"):
    if counts.get(im.label, 0) < args.per_class:
        counts[im.label] = counts.get(im.label, 0) + 1
        sample.append(im)

names = {i: n for i, n in enumerate(CIFAR10_CLASSES)}
if args.include_noise:
    sample = sample + gaussian_noise_images(stats, args.include_noise, args.seed)
    names[-1] = "noise"

reps = representative_vectors(model, sample, args.layer, names, stats)
print(f"{len(reps)} categories, vectors of length {len(reps[0].vector)}")

graph = category_graph(reps)
closest = min(graph.edges.items(), key=lambda kv: kv[1])
print(f"closest pair: {closest[0][0]} / {closest[0][1]} at {closest[1]:.4f}")

tree = build_hierarchy(graph)
for step, m in enumerate(tree.merge_order, 1):
    print(f"  merge {step}: {m.child_a} + {m.child_b}  (distance {m.weight:.4f})")
emit_tree_dot(tree, out / "hierarchy.dot")

mst = minimum_spanning_tree(graph)
emit_tree_dot(mst, out / "mst.dot")
degree: dict = {}
for a, b, _ in mst:
    degree[a] = degree.get(a, 0) + 1
    degree[b] = degree.get(b, 0) + 1
hub = max(degree, key=degree.get)
print(f"MST hub: {hub} (degree {degree[hub]})")
print(f"DOT files under {out}/hierarchy.dot and {out}/mst.dot")
