"""Category hierarchy from feature-space distances.

Each category is summarized by the mean vectorized feature map of its
images at a chosen layer. Pairwise half-cosine distances over those
summaries form a complete weighted graph; a greedy merge loop (pick the
lightest edge between parentless nodes, splice in a supernode, re-link
neighbors at averaged weight) turns the graph into a binary hierarchy, and
Kruskal's algorithm over the same original graph yields its minimum
spanning tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetStats, to_batch
from .errors import ShapeError, UsageError
from .model import Model, forward_with_activations


@dataclass
class RepresentativeVector:
    """Mean vectorized layer output over one category's images."""

    category: str
    vector: np.ndarray
    image_count: int


def representative_vectors(model: Model, images, layer_name: str,
                           names: dict | None = None,
                           stats: DatasetStats | None = None,
                           batch_size: int = 256) -> list[RepresentativeVector]:
    """Per-category mean of vectorized activations at layer_name.

    images are grouped by label; names maps label -> category name (default
    str(label)). Returned sorted by category name. A name listed in names
    with no images raises an error naming the category.
    """
    if not len(images):
        raise UsageError("representative_vectors needs a non-empty dataset")
    x, y = to_batch(images, stats)
    sums: dict[int, np.ndarray] = {}
    counts: dict[int, int] = {}
    for lo in range(0, len(x), batch_size):
        _, acts = forward_with_activations(model, x[lo:lo + batch_size])
        feats = acts[layer_name].data
        feats = feats.reshape(len(feats), -1)
        for i, label in enumerate(y[lo:lo + batch_size]):
            label = int(label)
            if label in sums:
                sums[label] += feats[i]
                counts[label] += 1
            else:
                sums[label] = feats[i].copy()
                counts[label] = 1
    if names is not None:
        empty = [names[k] for k in names if k not in sums]
        if empty:
            raise UsageError(f"categories with no images: {', '.join(sorted(empty))}")
    out = []
    for label in sums:
        name = names[label] if names is not None and label in names else str(label)
        out.append(RepresentativeVector(category=name,
                                        vector=sums[label] / counts[label],
                                        image_count=counts[label]))
    out.sort(key=lambda r: r.category)
    return out


def cosine_distance(u, v) -> float:
    """Half-cosine distance (1 - cos)/2 in [0,1]; zero-norm vectors get cos 0."""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise ShapeError(f"cosine_distance: lengths differ, {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    cos = 0.0 if nu == 0.0 or nv == 0.0 else float(u @ v) / (nu * nv)
    return 0.5 * (1.0 - cos)


def _pair(a: str, b: str) -> tuple:
    return (a, b) if a <= b else (b, a)


class CategoryGraph:
    """Dense weighted graph over category names; no self edges."""

    def __init__(self):
        self.nodes: set = set()
        self.edges: dict = {}

    def add_node(self, a: str):
        self.nodes.add(a)

    def add_edge(self, a: str, b: str, weight: float):
        if a == b:
            raise UsageError(f"self edge on {a!r}")
        self.nodes.add(a)
        self.nodes.add(b)
        self.edges[_pair(a, b)] = float(weight)

    def weight(self, a: str, b: str) -> float:
        return self.edges[_pair(a, b)]

    def copy(self) -> "CategoryGraph":
        g = CategoryGraph()
        g.nodes = set(self.nodes)
        g.edges = dict(self.edges)
        return g


def category_graph(reps: list[RepresentativeVector]) -> CategoryGraph:
    """Complete graph with half-cosine distances between representatives."""
    g = CategoryGraph()
    for r in reps:
        g.add_node(r.category)
    for i in range(len(reps)):
        for j in range(i + 1, len(reps)):
            g.add_edge(reps[i].category, reps[j].category,
                       cosine_distance(reps[i].vector, reps[j].vector))
    return g


@dataclass
class MergeStep:
    child_a: str
    child_b: str
    supernode: str
    weight: float


@dataclass
class HierarchyTree:
    """Binary merge tree: |leaves| - 1 supernodes, each with exactly 2 children."""

    leaves: list
    root: str
    children: dict
    merge_order: list


def supernode_name(a: str, b: str) -> str:
    a, b = _pair(a, b)
    return f"({a}+{b})"


def build_hierarchy(graph: CategoryGraph) -> HierarchyTree:
    """Greedy agglomeration of a complete category graph.

    Repeatedly picks the minimum-weight edge between parentless nodes (ties
    break lexicographically on the name pair), replaces its endpoints with a
    supernode, and re-links every other parentless neighbor at the mean of
    its existing edges to the two endpoints. Ends when one parentless node
    remains; the recorded merge weights need not be monotone because
    re-linked weights are averages.
    """
    if len(graph.nodes) < 2:
        raise UsageError(f"need at least 2 categories, got {len(graph.nodes)}")
    edges = dict(graph.edges)
    parentless = set(graph.nodes)
    children: dict = {}
    merges: list[MergeStep] = []
    while len(parentless) > 1:
        (a, b), w = min(edges.items(), key=lambda kv: (kv[1], kv[0]))
        s = supernode_name(a, b)
        del edges[(a, b)]
        parentless.discard(a)
        parentless.discard(b)
        for other in sorted(parentless):
            wa = edges.pop(_pair(other, a), None)
            wb = edges.pop(_pair(other, b), None)
            existing = [v for v in (wa, wb) if v is not None]
            if existing:
                edges[_pair(other, s)] = sum(existing) / len(existing)
        parentless.add(s)
        children[s] = (a, b)
        merges.append(MergeStep(child_a=a, child_b=b, supernode=s, weight=w))
    return HierarchyTree(leaves=sorted(graph.nodes), root=next(iter(parentless)),
                         children=children, merge_order=merges)


def minimum_spanning_tree(graph: CategoryGraph) -> list:
    """Kruskal MST of the original dense graph; returns (a, b, weight) edges.

    Deterministic under ties (edges considered in (weight, a, b) order).
    """
    nodes = sorted(graph.nodes)
    if len(nodes) < 2:
        raise UsageError(f"need at least 2 nodes, got {len(nodes)}")
    parent = {n: n for n in nodes}

    def find(n):
        while parent[n] != n:
            parent[n] = parent[parent[n]]
            n = parent[n]
        return n

    chosen = []
    for (a, b), w in sorted(graph.edges.items(), key=lambda kv: (kv[1], kv[0])):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[ra] = rb
            chosen.append((a, b, w))
            if len(chosen) == len(nodes) - 1:
                break
    if len(chosen) != len(nodes) - 1:
        raise UsageError("graph is disconnected; no spanning tree exists")
    return sorted(chosen, key=lambda e: (e[0], e[1]))


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------


def _dot_quote(name: str) -> str:
    return '"' + name.replace('"', r'\"') + '"'


def emit_tree_dot(tree_or_mst, path):
    """Write a hierarchy (digraph) or an MST edge list (graph) as DOT text.

    Edge labels carry weights with 4 decimal places.
    """
    if isinstance(tree_or_mst, HierarchyTree):
        lines = ["digraph hierarchy {"]
        for step in tree_or_mst.merge_order:
            s = _dot_quote(step.supernode)
            for child in (step.child_a, step.child_b):
                lines.append(f"  {s} -> {_dot_quote(child)} [label=\"{step.weight:.4f}\"];")
        lines.append("}")
    else:
        lines = ["graph mst {"]
        for a, b, w in tree_or_mst:
            lines.append(f"  {_dot_quote(a)} -- {_dot_quote(b)} [label=\"{w:.4f}\"];")
        lines.append("}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def distance_matrix_rows(reps: list[RepresentativeVector]):
    """CSV rows of the full pairwise distance matrix (header row included)."""
    names = [r.category for r in reps]
    header = ["category"] + names
    rows = []
    for r in reps:
        row = [r.category]
        for r2 in reps:
            row.append(0.0 if r is r2 else cosine_distance(r.vector, r2.vector))
        rows.append(row)
    return header, rows


def merge_log_rows(tree: HierarchyTree):
    """CSV rows (step, child_a, child_b, supernode, weight)."""
    return [(i + 1, m.child_a, m.child_b, m.supernode, m.weight)
            for i, m in enumerate(tree.merge_order)]
