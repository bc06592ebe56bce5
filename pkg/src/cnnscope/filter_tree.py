"""Filter-wise prediction tree for one category over one layer.

Every image of the category becomes a leaf holding its flattened feature
map at the chosen layer, with all d filters reachable. The closest pair of
the root's children (by half-cosine distance over their stored vectors) is
merged into a supernode whose vector is the pair mean; the merge is
annotated with a critical filter, the one whose removal from the pair's
shared filter set changes their masked cosine the most (smallest ratio
cos_without / cos_full), and the supernode's reachable set is the shared
set minus that filter. Root-to-leaf paths then read as semantic features
ordered from common to specific, and a new image can be routed down the
tree by cosine similarity to see which filters carry its prediction.

Filter indices are 0-based channel indices, matching LayerAddress.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DatasetStats, to_batch
from .errors import UsageError
from .model import LayerAddress, Model, forward_with_activations


@dataclass
class FeatureNode:
    """A leaf (one image) or a merge supernode.

    vector has length d * block_size where block_size is the spatial size
    of one filter's map. filters is the node's reachable filter set.
    """

    name: str
    vector: np.ndarray
    filters: frozenset
    block_size: int = 1
    children: tuple = ()
    critical_filter: int | None = None
    source_id: str | None = None


@dataclass
class MergeRecord:
    child_a: str
    child_b: str
    supernode: str
    cosine: float
    critical_filter: int | None


@dataclass
class PredictionTree:
    """Result of the merge loop: the virtual root's children plus the log.

    stop_reason records why merging ended: 'single_child',
    'all_filters_exhausted' (no child has more than one reachable filter) or
    'no_shared_filters' (every candidate pair had an empty intersection).
    """

    children: list
    merge_log: list
    layer_name: str
    num_filters: int
    block_size: int
    stop_reason: str
    nodes: dict = field(default_factory=dict)

    def internal_nodes(self):
        return [n for n in self.nodes.values() if n.children]

    def leaves(self):
        return [n for n in self.nodes.values() if not n.children]


def _cos(u: np.ndarray, v: np.ndarray) -> float:
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(u @ v) / (nu * nv)


def _mask_vector(vec: np.ndarray, mask, block_size: int) -> np.ndarray:
    out = np.zeros_like(vec)
    for f in mask:
        out[f * block_size:(f + 1) * block_size] = vec[f * block_size:(f + 1) * block_size]
    return out


def masked_cosine(u: FeatureNode, v: FeatureNode, mask_u, mask_v) -> float:
    """Cosine of the two node vectors after zeroing filters outside each mask.

    Zero-norm vectors (e.g. an empty mask) use the cos := 0 convention.
    """
    return _cos(_mask_vector(u.vector, mask_u, u.block_size),
                _mask_vector(v.vector, mask_v, v.block_size))


def critical_filter(u: FeatureNode, v: FeatureNode) -> int:
    """The shared filter whose removal changes the pair's cosine the most.

    Minimizes cos(masked without F) / cos(masked full) over the shared set;
    if the full-mask cosine is 0 the ratio is undefined and the numerator
    alone is minimized. Ties break to the smallest filter index.
    """
    shared = sorted(u.filters & v.filters)
    if not shared:
        raise UsageError("critical_filter needs a non-empty filter intersection")
    full = masked_cosine(u, v, u.filters, v.filters)
    best = None
    best_key = None
    for f in shared:
        c = masked_cosine(u, v, u.filters - {f}, v.filters - {f})
        key = c if full == 0.0 else c / full
        if best_key is None or key < best_key:
            best, best_key = f, key
    return best


def build_prediction_tree(model: Model, images, layer_name: str,
                          stats: DatasetStats | None = None) -> PredictionTree:
    """Merge a category's per-image feature maps into a filter-annotated tree.

    Needs at least 2 images and a layer with at least 2 filters. Pair
    selection uses half-cosine distance over the nodes' stored vectors; ties
    break lexicographically on the (name, name) pair, so identical feature
    maps merge in name order. A chosen pair with no shared filters still
    merges (empty reachable set, no critical filter); merging stops when one
    child remains, when no child has more than one reachable filter, or when
    every candidate pair's intersection is empty.
    """
    if len(images) < 2:
        raise UsageError(f"need at least 2 images, got {len(images)}")
    x, _ = to_batch(images, stats)
    feats = []
    d = block = None
    for lo in range(0, len(x), 256):
        _, acts = forward_with_activations(model, x[lo:lo + 256])
        a = acts[layer_name].data
        d = a.shape[1]
        block = a.shape[2] * a.shape[3]
        feats.append(a.reshape(len(a), -1))
    feats = np.concatenate(feats)
    if d < 2:
        raise UsageError(f"layer {layer_name!r} has {d} filter(s); need at least 2")

    named = [(images[i].source_id, feats[i]) for i in range(len(images))]
    return build_tree_from_features(named, d, block, layer_name)


def build_tree_from_features(named_vectors, num_filters: int, block_size: int = 1,
                             layer_name: str = "features") -> PredictionTree:
    """Build the tree directly from (name, vector) pairs.

    vector length must be num_filters * block_size. This is the merge loop
    behind build_prediction_tree, usable with any precomputed features.
    """
    if len(named_vectors) < 2:
        raise UsageError(f"need at least 2 vectors, got {len(named_vectors)}")
    if num_filters < 2:
        raise UsageError(f"need at least 2 filters, got {num_filters}")
    full = frozenset(range(num_filters))
    leaves = []
    for name, vec in named_vectors:
        vec = np.asarray(vec, dtype=np.float64).ravel()
        if len(vec) != num_filters * block_size:
            raise UsageError(
                f"vector {name!r} has length {len(vec)}, "
                f"expected {num_filters * block_size}")
        leaves.append(FeatureNode(name=name, vector=vec, filters=full,
                                  block_size=block_size, source_id=name))
    leaves.sort(key=lambda n: n.name)
    return _merge_loop(leaves, layer_name, num_filters, block_size)


def _merge_loop(leaves, layer_name, d, block) -> PredictionTree:
    children = list(leaves)
    nodes = {n.name: n for n in children}
    log: list[MergeRecord] = []
    cos_cache: dict = {}

    def pair_cos(u, v):
        key = (u.name, v.name) if u.name <= v.name else (v.name, u.name)
        c = cos_cache.get(key)
        if c is None:
            c = _cos(u.vector, v.vector)
            cos_cache[key] = c
        return c

    stop = "single_child"
    while True:
        # the loop's own condition first, then the added degenerate guards
        if not any(len(p.filters) > 1 for p in children):
            stop = "all_filters_exhausted"
            break
        if len(children) < 2:
            stop = "single_child"
            break
        best = None
        best_key = None
        any_shared = False
        for i in range(len(children)):
            for j in range(i + 1, len(children)):
                u, v = children[i], children[j]
                if u.filters & v.filters:
                    any_shared = True
                dist = 0.5 * (1.0 - pair_cos(u, v))
                names = (u.name, v.name) if u.name <= v.name else (v.name, u.name)
                key = (dist, names)
                if best_key is None or key < best_key:
                    best, best_key = (u, v), key
        if not any_shared:
            stop = "no_shared_filters"
            break
        u, v = best
        shared = u.filters & v.filters
        crit = critical_filter(u, v) if shared else None
        s = FeatureNode(
            name=f"({min(u.name, v.name)}+{max(u.name, v.name)})",
            vector=(u.vector + v.vector) / 2.0,
            filters=frozenset(shared - {crit}) if shared else frozenset(),
            block_size=block,
            children=(u, v),
            critical_filter=crit,
        )
        children = [c for c in children if c is not u and c is not v]
        children.append(s)
        nodes[s.name] = s
        log.append(MergeRecord(child_a=u.name, child_b=v.name, supernode=s.name,
                               cosine=pair_cos(u, v), critical_filter=crit))
    return PredictionTree(children=children, merge_log=log, layer_name=layer_name,
                          num_filters=d, block_size=block, stop_reason=stop, nodes=nodes)


def query_path(tree: PredictionTree, model: Model, image,
               stats: DatasetStats | None = None) -> list:
    """Route an image down the tree by masked cosine similarity.

    At each branching point the child whose vector is most similar to the
    image's feature map (both masked to the child's filter set) wins; ties
    go to the first child. Returns (node, critical_filter, activation)
    per visited node, where activation is the image's mean activation on
    that node's critical filter (None at leaves).
    """
    from .data import LabeledImage

    img = image if isinstance(image, LabeledImage) else LabeledImage(
        pixels=np.asarray(image, dtype=np.float64), label=-1, source_id="query")
    x, _ = to_batch([img], stats)
    _, acts = forward_with_activations(model, x)
    a = acts[tree.layer_name].data[0]
    feat = a.reshape(-1)
    per_filter = a.reshape(a.shape[0], -1).mean(axis=1)
    probe = FeatureNode(name="query", vector=feat,
                        filters=frozenset(range(tree.num_filters)),
                        block_size=tree.block_size)

    def best_child(candidates):
        best = None
        best_c = None
        for c in candidates:
            cval = masked_cosine(c, probe, c.filters, c.filters)
            if best_c is None or cval > best_c:
                best, best_c = c, cval
        return best

    path = []
    node = best_child(tree.children)
    while node is not None:
        act = float(per_filter[node.critical_filter]) if node.critical_filter is not None else None
        path.append((node, node.critical_filter, act))
        if not node.children:
            break
        node = best_child(node.children)
    return path


def annotate_tree(tree: PredictionTree, model: Model, images, k: int,
                  stats: DatasetStats | None = None) -> dict:
    """Top-k activating source_ids of each internal node's critical filter.

    Delegates scoring to attribution.top_k_activating semantics (one shared
    dataset scan, then a per-filter sort).
    """
    from .attribution import activation_scores

    internal = [n for n in tree.internal_nodes() if n.critical_filter is not None]
    filters = sorted({n.critical_filter for n in internal})
    if k < 0 or k > len(images):
        raise UsageError(f"k must be in [0, {len(images)}], got {k}")
    per_filter: dict[int, list] = {}
    for f in filters:
        addr = LayerAddress("filter", layer_name=tree.layer_name, channel_index=f)
        scores = activation_scores(model, images, addr, stats)
        ranked = sorted(((images[i].source_id, float(scores[i]))
                         for i in range(len(images))), key=lambda t: (-t[1], t[0]))
        per_filter[f] = [sid for sid, _ in ranked[:k]]
    return {n.name: per_filter[n.critical_filter] for n in internal}


def emit_prediction_tree_dot(tree: PredictionTree, path):
    """DOT digraph with per-node filter counts and merge annotations."""
    def q(s):
        return '"' + s.replace('"', r'\"') + '"'

    lines = ["digraph prediction_tree {", '  "ROOT" [shape=box];']
    merged = {m.supernode: m for m in tree.merge_log}
    for node in tree.nodes.values():
        if node.children:
            m = merged[node.name]
            crit = "none" if m.critical_filter is None else str(m.critical_filter)
            label = (f"filters={len(node.filters)}\\ncritical={crit}"
                     f"\\ncos={m.cosine:.4f}")
        else:
            label = f"{node.name}\\nfilters={len(node.filters)}"
        lines.append(f"  {q(node.name)} [label=\"{label}\"];")
    for top in tree.children:
        lines.append(f"  \"ROOT\" -> {q(top.name)};")
    for node in tree.nodes.values():
        for child in node.children:
            lines.append(f"  {q(node.name)} -> {q(child.name)};")
    lines.append("}")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


def merge_log_rows(tree: PredictionTree):
    """CSV rows (step, child_a, child_b, supernode, cosine, critical_filter)."""
    return [(i + 1, m.child_a, m.child_b, m.supernode, m.cosine,
             "" if m.critical_filter is None else m.critical_filter)
            for i, m in enumerate(tree.merge_log)]
