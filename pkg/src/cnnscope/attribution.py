"""Attribution and dataset-scan analyses over a trained model.

Covers class-discriminative localization heatmaps (gradient-weighted
channel sums over a late layer), pixel-difference heatmaps between an
image pair, a fooling-budget robustness score, top-k activating image
mining, activation-score histograms, and the out-of-sample prediction
table with its logit decomposition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetStats, to_batch, write_pgm, write_ppm
from .errors import ShapeError, UsageError
from .maximize import (
    AscentConfig,
    Objective,
    RegularizerConfig,
    ascend,
    class_logit,
)
from .model import LayerAddress, Model, forward_with_activations, predict_logits, validate_address
from .tensor import Tape, backward


@dataclass
class Heatmap:
    """(H,W) values normalized to [0,1]; source is 'gradcam' or 'diff'."""

    values: np.ndarray
    source: str


@dataclass
class RobustnessReport:
    """Outcome of a targeted pixel-ascent fooling run.

    score is flip_epoch/budget_epochs when the prediction flipped, else 1.0,
    so fragile images score near 0 and images that survive the whole budget
    score 1. diff_energy is the L2 norm of (final - start).
    """

    flip_epoch: int | None
    budget_epochs: int
    lr: float
    diff_energy: float
    score: float


@dataclass
class OOSTable:
    """Percentage of each out-of-sample dataset predicted as each trained class.

    decomposition carries, per dataset, the mean feature term (w . x) per
    class and the head bias per class, so the 'everything lands on the
    biggest bias' hypothesis can be inspected directly.
    """

    class_names: tuple
    rows: dict
    decomposition: dict


def _minmax(v: np.ndarray) -> np.ndarray:
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def _bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Endpoint-aligned bilinear resize of a 2-D map."""
    h, w = a.shape
    if (h, w) == (out_h, out_w):
        return a.copy()
    ys = np.linspace(0, h - 1, out_h) if out_h > 1 else np.zeros(1)
    xs = np.linspace(0, w - 1, out_w) if out_w > 1 else np.zeros(1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = a[np.ix_(y0, x0)] * (1 - wx) + a[np.ix_(y0, x1)] * wx
    bot = a[np.ix_(y1, x0)] * (1 - wx) + a[np.ix_(y1, x1)] * wx
    return top * (1 - wy) + bot * wy


def grad_cam(model: Model, x, class_index: int, layer_name: str = "layer4") -> Heatmap:
    """Class-discriminative heatmap from gradient-weighted activations.

    Channel weights are the spatial means of d(logit)/d(activation); the map
    is relu of the weighted channel sum, upsampled bilinearly to the input
    size and min-max normalized. An all-zero pre-normalization map yields an
    all-zero heatmap (documented degenerate case).
    """
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != tuple(model.spec.input_shape):
        raise ShapeError(
            f"grad_cam input shape {x.shape} does not match spec "
            f"input_shape {tuple(model.spec.input_shape)}")
    validate_address(LayerAddress("presoftmax", class_index=class_index), model.spec)
    with Tape():
        logits, acts = forward_with_activations(model, x[None])
        act = acts.get(layer_name)
        if act is None:
            raise UsageError(f"grad_cam layer must be one of {tuple(acts)}, got {layer_name!r}")
        act.requires_grad = True
        score = logits[0, class_index]
    backward(score)
    weights = act.grad[0].mean(axis=(1, 2))
    cam = np.maximum((weights[:, None, None] * act.data[0]).sum(axis=0), 0.0)
    cam = _bilinear_resize(cam, x.shape[1], x.shape[2])
    return Heatmap(values=_minmax(cam), source="gradcam")


def diff_heatmap(x_start, x_final) -> Heatmap:
    """Per-pixel channel-wise Euclidean norm of (final - start), min-max normalized."""
    a = np.asarray(x_start, dtype=np.float64)
    b = np.asarray(x_final, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"diff_heatmap: shapes differ, {a.shape} vs {b.shape}")
    if a.ndim != 3:
        raise ShapeError(f"diff_heatmap wants (C,H,W) images, got {a.shape}")
    d = np.sqrt(((b - a) ** 2).sum(axis=0))
    return Heatmap(values=_minmax(d), source="diff")


def robustness(model: Model, x, target_class: int, lr: float,
               budget_epochs: int, stats: DatasetStats | None = None) -> RobustnessReport:
    """Push x toward target_class by plain logit ascent and report survival.

    No regularizers or jitter; target_class must differ from the model's
    current prediction of x.
    """
    if budget_epochs < 1:
        raise UsageError(f"budget_epochs must be >= 1, got {budget_epochs}")
    x = np.asarray(x, dtype=np.float64)
    current = int(predict_logits(model, x[None])[0].argmax())
    if current == target_class:
        raise UsageError(
            f"target_class {target_class} is already the prediction of this image")
    trace = ascend(model, class_logit(target_class), RegularizerConfig(),
                   AscentConfig(lr=lr, epochs=budget_epochs), x, stats)
    energy = float(np.linalg.norm(trace.final_image - trace.start_image))
    score = (trace.flip_epoch / budget_epochs) if trace.flip_epoch is not None else 1.0
    return RobustnessReport(flip_epoch=trace.flip_epoch, budget_epochs=budget_epochs,
                            lr=lr, diff_energy=energy, score=score)


# ---------------------------------------------------------------------------
# dataset scans
# ---------------------------------------------------------------------------


def activation_scores(model: Model, images, address: LayerAddress,
                      stats: DatasetStats | None = None,
                      batch_size: int = 256) -> np.ndarray:
    """Per-image objective score for a single address, computed in batches.

    Matches evaluate_objective on each image individually; batching only
    changes the schedule, not the math (eval-mode forward is per-sample).
    """
    validate_address(address, model.spec)
    x, _ = to_batch(images, stats)
    out = np.zeros(len(x))
    for lo in range(0, len(x), batch_size):
        logits, acts = forward_with_activations(model, x[lo:lo + batch_size])
        if address.kind == "presoftmax":
            s = logits.data[:, address.class_index]
        elif address.kind == "softmax":
            z = logits.data - logits.data.max(axis=1, keepdims=True)
            e = np.exp(z)
            s = (e / e.sum(axis=1, keepdims=True))[:, address.class_index]
        elif address.kind == "layer":
            a = acts[address.layer_name].data
            s = a.reshape(len(a), -1).mean(axis=1)
        else:
            a = acts[address.layer_name].data[:, address.channel_index]
            s = a.reshape(len(a), -1).mean(axis=1)
        out[lo:lo + len(s)] = s
    return out


def top_k_activating(model: Model, images, address: LayerAddress, k: int,
                     stats: DatasetStats | None = None) -> list:
    """The k images scoring highest on an address, descending.

    Ties break by source_id ascending. k must not exceed the dataset size.
    """
    if k < 0 or k > len(images):
        raise UsageError(f"k must be in [0, {len(images)}], got {k}")
    scores = activation_scores(model, images, address, stats)
    ranked = sorted(((images[i].source_id, float(scores[i])) for i in range(len(images))),
                    key=lambda t: (-t[1], t[0]))
    return ranked[:k]


def activation_histogram(model: Model, images, address: LayerAddress, bins: int,
                         stats: DatasetStats | None = None) -> list:
    """Equal-width histogram of activation scores over [min, max].

    Returns (bin_lo, bin_hi, count) triples; the rightmost bin is closed.
    A degenerate score range puts every image in the first bin.
    """
    if bins < 1:
        raise UsageError(f"bins must be >= 1, got {bins}")
    scores = activation_scores(model, images, address, stats)
    if len(scores) == 0:
        raise UsageError("activation_histogram needs a non-empty dataset")
    lo, hi = float(scores.min()), float(scores.max())
    width = (hi - lo) / bins
    if width == 0.0:
        idx = np.zeros(len(scores), dtype=int)
    else:
        idx = np.minimum(((scores - lo) / width).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins)
    return [(lo + i * width, lo + (i + 1) * width, int(counts[i])) for i in range(bins)]


def oos_table(model: Model, class_names, oos_datasets: dict,
              stats: DatasetStats | None = None) -> OOSTable:
    """Classify out-of-sample image sets and tabulate prediction percentages.

    Each row sums to 100 (within float rounding). The logit decomposition
    (mean w.x per class, plus the shared bias) rides along per dataset.
    """
    class_names = tuple(class_names)
    if len(class_names) != model.spec.num_classes:
        raise UsageError(
            f"{len(class_names)} class names for a {model.spec.num_classes}-class model")
    rows = {}
    decomposition = {}
    w = model.params["head.fc.weight"].data
    b = model.params["head.fc.bias"].data
    for name, images in oos_datasets.items():
        if not len(images):
            raise UsageError(f"out-of-sample dataset {name!r} is empty")
        x, _ = to_batch(images, stats)
        feats = []
        preds = []
        for lo in range(0, len(x), 256):
            _, acts = forward_with_activations(model, x[lo:lo + 256])
            f = acts["layer4"].data.mean(axis=(2, 3))
            feats.append(f)
            preds.append((f @ w.T + b).argmax(axis=1))
        feats = np.concatenate(feats)
        preds = np.concatenate(preds)
        counts = np.bincount(preds, minlength=len(class_names))
        rows[name] = [100.0 * c / len(images) for c in counts]
        decomposition[name] = {
            "wx_mean": tuple((feats @ w.T).mean(axis=0)),
            "bias": tuple(b),
        }
    return OOSTable(class_names=class_names, rows=rows, decomposition=decomposition)


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_heatmap_pgm(heatmap: Heatmap, path):
    write_pgm(heatmap.values, path)


def render_overlay_ppm(pixels, heatmap: Heatmap, path, floor: float = 0.2):
    """Overlay: the image's brightness modulated by the heatmap.

    floor keeps cold regions faintly visible instead of pure black.
    """
    pixels = np.asarray(pixels, dtype=np.float64)
    if pixels.shape[1:] != heatmap.values.shape:
        raise ShapeError(
            f"overlay: image {pixels.shape} vs heatmap {heatmap.values.shape}")
    scale = floor + (1.0 - floor) * heatmap.values[None, :, :]
    write_ppm(np.clip(pixels, 0.0, 1.0) * scale, path)
