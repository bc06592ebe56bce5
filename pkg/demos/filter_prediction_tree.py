#!/usr/bin/env python3
"""Extract one category's filter-wise prediction tree and query it.

Builds the merge tree over a handful of horse images at the deepest layer:
each merge finds the closest pair of nodes and names the filter whose
removal would change their similarity the most. Internal nodes get
annotated with the images that most activate their critical filters, and a
held-out horse is routed down the tree to show its prediction path.

    python demos/filter_prediction_tree.py --weights demo_out/ten.mcnn \
        --data data/cifar-10-batches-bin --out demo_out
"""

import argparse
from pathlib import Path

from cnnscope import (
    CIFAR10_CLASSES,
    annotate_tree,
    build_prediction_tree,
    compute_stats,
    load_cifar10,
    load_weights,
    query_path,
)
from cnnscope.filter_tree import emit_prediction_tree_dot

parser = argparse.ArgumentParser()
parser.add_argument("--weights", default="demo_out/ten.mcnn")
parser.add_argument("--data", default="data/cifar-10-batches-bin")
parser.add_argument("--category", default="horse")
parser.add_argument("--layer", default="layer4")
parser.add_argument("--leaves", type=int, default=24)
parser.add_argument("--out", default="demo_out")
args = parser.parse_args()

out = Path(args.out)
out.mkdir(parents=True, exist_ok=True)

model = load_weights(args.weights)
stats = compute_stats(load_cifar10(args.data, "train"))
label = CIFAR10_CLASSES.index(args.category)
members = [im for im in load_cifar10(args.data, "test") if im.label == label]
leaves, held_out = members[:args.leaves], members[args.leaves]

tree = build_prediction_tree(model, leaves, args.layer, stats)
print(f"{len(leaves)} leaves, {len(tree.merge_log)} merges, "
      f"stopped because: {tree.stop_reason}")
for m in tree.merge_log[-5:]:
    print(f"  late merge: cos {m.cosine:.4f}, critical filter {m.critical_filter}")

notes = annotate_tree(tree, model, members, k=3, stats=stats)
sample_node = tree.merge_log[-1].supernode
print(f"node {sample_node!r} critical-filter exemplars: {notes[sample_node]}")

emit_prediction_tree_dot(tree, out / "prediction_tree.dot")

print(f"\nrouting held-out {held_out.source_id} down the tree:")
for node, crit, act in query_path(tree, model, held_out, stats):
    kind = "leaf" if not node.children else f"critical filter {crit}"
    act_s = "" if act is None else f"  activation {act:.4f}"
    print(f"  {node.name[:60]:60s} {kind}{act_s}")
print(f"\nDOT written to {out}/prediction_tree.dot")
