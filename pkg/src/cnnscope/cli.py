"""Command-line orchestration of every experiment.

Each subcommand delegates to one library operation and writes its artifacts
into a run directory (named by timestamp and seed unless --out pins it),
together with a manifest listing every output and the effective
configuration. All randomness flows from --seed through named substreams,
so re-running with the same arguments reproduces every non-manifest
artifact byte for byte.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
abort. Errors print a human-readable message plus one machine-readable
ERROR line on stderr.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import attribution, filter_tree, hierarchy, maximize
from .config import dump_config, load_config
from .data import (
    CIFAR10_CLASSES,
    DatasetStats,
    compute_stats,
    denormalize,
    gaussian_noise_images,
    load_cifar10,
    normalize,
    read_ppm,
    subset,
    write_csv,
    write_ppm,
)
from .errors import (
    AddressError,
    CnnscopeError,
    DataFormatError,
    NumericsError,
    ShapeError,
    UsageError,
)
from .model import (
    Hyper,
    LayerAddress,
    build_model,
    default_spec,
    load_weights,
    save_weights,
    spec_from_config,
    train,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p):
    p.add_argument("--config", help="config file; flags override its values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", help="run directory (default runs/<timestamp>-seed<N>)")
    p.add_argument("--data", help="CIFAR-10 binary batch directory")
    p.add_argument("--weights", help="model weight file")
    p.add_argument("--stats", help="stats CSV (from a train run); else derived from --data")


def build_parser() -> _Parser:
    parser = _Parser(prog="cnnscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a classifier on a category subset")
    _add_common(p)
    p.add_argument("--classes", default="all",
                   help="comma list of class names/indices, or 'all'")
    p.add_argument("--spec-config", help="model spec config file")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--no-hflip", action="store_true")
    p.add_argument("--limit-per-class", type=int, default=None,
                   help="cap training images per class (file order)")

    p = sub.add_parser("maximize", help="gradient ascent on pixels toward an objective")
    _add_common(p)
    _add_objective(p)
    p.add_argument("--start", default="noise",
                   help="'noise', a PPM path, or train:IDX / test:IDX")
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lambda-alpha", type=float, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--lambda-tv", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--jitter", action="store_true",
                   help="blur/translate/rotate the gradient each step")
    p.add_argument("--jitter-translate", type=int, default=None)
    p.add_argument("--jitter-rotate", type=float, default=None)
    p.add_argument("--jitter-blur", type=float, default=None)
    p.add_argument("--clamp", action="store_true", help="clamp pixels to the data range")
    p.add_argument("--snapshot-every", type=int, default=0,
                   help="also render the image every N epochs")

    p = sub.add_parser("gradcam", help="class-discriminative heatmap for an image")
    _add_common(p)
    p.add_argument("--image", required=True, help="PPM path or train:IDX / test:IDX")
    p.add_argument("--class", dest="class_", required=True)
    p.add_argument("--classes", default=None, help="trained class names for --class lookup")
    p.add_argument("--layer", default="layer4")

    p = sub.add_parser("diff", help="difference heatmap between two images")
    _add_common(p)
    p.add_argument("--image-a", required=True)
    p.add_argument("--image-b", required=True)

    p = sub.add_parser("robustness", help="fooling-budget survival score of an image")
    _add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--target-class", dest="target_class", required=True)
    p.add_argument("--classes", default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)

    p = sub.add_parser("topk", help="top-k images activating an address")
    _add_common(p)
    _add_objective(p)
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--k", type=int, default=16)

    p = sub.add_parser("hist", help="activation-score histogram over a dataset")
    _add_common(p)
    _add_objective(p)
    p.add_argument("--split", default="train", choices=("train", "test"))
    p.add_argument("--bins", type=int, default=20)

    p = sub.add_parser("oos-table", help="out-of-sample prediction percentages")
    _add_common(p)
    p.add_argument("--classes", required=True,
                   help="comma list of the classes the model was trained on")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--noise", type=int, default=0, help="also test N generated noise images")

    p = sub.add_parser("category-tree", help="greedy category hierarchy from features")
    _add_common(p)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--layer", default="layer4")
    p.add_argument("--include-noise", type=int, default=0,
                   help="add a pseudo-category of N noise images")
    p.add_argument("--limit-per-class", type=int, default=None)

    p = sub.add_parser("mst", help="minimum spanning tree of the category graph")
    _add_common(p)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--layer", default="layer4")
    p.add_argument("--include-noise", type=int, default=0)
    p.add_argument("--limit-per-class", type=int, default=None)

    p = sub.add_parser("filter-tree", help="filter-wise prediction tree for one category")
    _add_common(p)
    p.add_argument("--class", dest="class_", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--layer", default="layer4")
    p.add_argument("--limit", type=int, default=32, help="images used as tree leaves")
    p.add_argument("--annotate-k", type=int, default=0,
                   help="annotate nodes with top-k activating images")

    p = sub.add_parser("query-path", help="route an image down a prediction tree")
    _add_common(p)
    p.add_argument("--class", dest="class_", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--layer", default="layer4")
    p.add_argument("--limit", type=int, default=32)

    return parser


def _add_objective(p):
    p.add_argument("--class", dest="class_", default=None,
                   help="class logit objective (name or index)")
    p.add_argument("--softmax", action="store_true",
                   help="use the softmax probability instead of the logit")
    p.add_argument("--layer", default=None, help="layer objective")
    p.add_argument("--channel", type=int, default=None,
                   help="channel/filter of --layer (omit for whole-layer mean)")
    p.add_argument("--classes", default=None, help="trained class names for --class lookup")


# ---------------------------------------------------------------------------
# shared plumbing
# ---------------------------------------------------------------------------


class Run:
    """Effective configuration plus the artifact ledger for one invocation."""

    def __init__(self, args):
        self.args = args
        self.cfg = load_config(args.config) if args.config else {}
        self.seed = self._eff("seed", "run", "seed", 0)
        out = self._eff("out", "run", "out", None)
        if out is None:
            out = f"runs/{time.strftime('%Y%m%d-%H%M%S')}-seed{self.seed}"
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.params = {}

    def _eff(self, attr, section, key, default):
        v = getattr(self.args, attr, None)
        if v is not None and v is not False:
            return v
        sec = self.cfg.get(section, {})
        if key in sec:
            return sec[key]
        return default

    def eff(self, attr, section, key, default):
        v = self._eff(attr, section, key, default)
        self.params[f"{section}.{key}"] = v
        return v

    def path(self, name) -> Path:
        self.artifacts.append(name)
        return self.dir / name

    def finish(self, command):
        lines = ["# cnnscope run manifest",
                 f"command={command}",
                 f"timestamp={time.strftime('%Y-%m-%dT%H:%M:%S')}",
                 f"seed={self.seed}",
                 ""]
        for key in sorted(self.params):
            lines.append(f"{key}={self.params[key]}")
        lines.append("")
        for name in self.artifacts:
            lines.append(f"artifact {name}")
        (self.dir / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _data_dir(run: Run) -> Path:
    d = run.eff("data", "run", "data", None)
    if d is None:
        raise UsageError("this command needs --data (a CIFAR-10 binary batch directory)")
    return Path(d)


def _weights(run: Run):
    w = run.eff("weights", "run", "weights", None)
    if w is None:
        raise UsageError("this command needs --weights")
    return load_weights(w)


def _stats(run: Run, required=True) -> DatasetStats | None:
    p = run.eff("stats", "run", "stats", None)
    if p is not None:
        rows = Path(p).read_text(encoding="utf-8").strip().splitlines()[1:]
        vals = [row.split(",") for row in rows]
        return DatasetStats(channel_mean=tuple(float(v[1]) for v in vals),
                            channel_std=tuple(float(v[2]) for v in vals))
    d = run.eff("data", "run", "data", None)
    if d is not None:
        return compute_stats(load_cifar10(d, "train"))
    if required:
        raise UsageError("need --stats or --data to place images in the model's input space")
    return None


def _write_stats(stats: DatasetStats, path):
    rows = [(ch, stats.channel_mean[i], stats.channel_std[i])
            for i, ch in enumerate(("r", "g", "b"))]
    write_csv(path, ("channel", "mean", "std"), rows)


def _class_names(arg: str | None) -> tuple:
    if arg is None or arg == "all":
        return CIFAR10_CLASSES
    names = []
    for tok in arg.split(","):
        tok = tok.strip()
        names.append(CIFAR10_CLASSES[int(tok)] if tok.isdigit() else tok)
    return tuple(names)


def _class_index(value: str, names: tuple) -> int:
    if value.isdigit() or (value.startswith("-") and value[1:].isdigit()):
        return int(value)
    try:
        return names.index(value)
    except ValueError:
        raise AddressError(f"unknown class {value!r}; expected one of {names}") from None


def _label_of(name: str) -> int:
    try:
        return CIFAR10_CLASSES.index(name)
    except ValueError:
        raise AddressError(f"unknown CIFAR-10 class {name!r}") from None


def _load_image(run: Run, ref: str, stats: DatasetStats | None) -> np.ndarray:
    """Resolve 'noise', a PPM path, or train:IDX / test:IDX to a model-space image."""
    if ref == "noise":
        if stats is None:
            raise UsageError("a noise start image needs --stats or --data")
        pix = gaussian_noise_images(stats, 1, run.seed)[0].pixels
    elif ref.startswith("train:") or ref.startswith("test:"):
        split, _, idx = ref.partition(":")
        images = load_cifar10(_data_dir(run), split)
        i = int(idx)
        if not (0 <= i < len(images)):
            raise UsageError(f"index {i} out of range for {split} split of {len(images)}")
        pix = images[i].pixels
    else:
        pix = read_ppm(ref)
    return normalize(pix, stats) if stats is not None else pix


def _render(run: Run, name: str, model_space_image: np.ndarray,
            stats: DatasetStats | None):
    pix = denormalize(model_space_image, stats) if stats is not None else model_space_image
    write_ppm(pix, run.path(name))


def _objective_from_args(run: Run, model, names: tuple):
    kind_soft = bool(getattr(run.args, "softmax", False))
    cls = getattr(run.args, "class_", None)
    layer = run.args.layer
    channel = getattr(run.args, "channel", None)
    if cls is not None:
        idx = _class_index(cls, names)
        addr = LayerAddress("softmax" if kind_soft else "presoftmax", class_index=idx)
    elif layer is not None and channel is not None:
        addr = LayerAddress("filter", layer_name=layer, channel_index=channel)
    elif layer is not None:
        addr = LayerAddress("layer", layer_name=layer)
    else:
        raise UsageError("give an objective: --class NAME|IDX, or --layer [--channel N]")
    run.params["objective"] = addr.describe()
    return maximize.Objective(((addr, 1.0),))


def _category_images(run: Run, split: str, limit_per_class: int | None):
    images = load_cifar10(_data_dir(run), split)
    if limit_per_class is not None:
        counts = {}
        kept = []
        for im in images:
            if counts.get(im.label, 0) < limit_per_class:
                counts[im.label] = counts.get(im.label, 0) + 1
                kept.append(im)
        images = kept
    return images


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(run: Run) -> int:
    names = _class_names(run.args.classes)
    run.params["train.classes"] = ",".join(names)
    hyper = Hyper(
        lr=float(run.eff("lr", "train", "lr", 0.05)),
        momentum=float(run.eff("momentum", "train", "momentum", 0.9)),
        weight_decay=float(run.eff("weight_decay", "train", "weight_decay", 5e-4)),
        epochs=int(run.eff("epochs", "train", "epochs", 10)),
        batch_size=int(run.eff("batch_size", "train", "batch_size", 64)),
        seed=run.seed,
        hflip=not run.args.no_hflip,
    )
    data = _data_dir(run)
    train_images = load_cifar10(data, "train")
    val_images = load_cifar10(data, "test")
    stats = compute_stats(train_images)
    if names != CIFAR10_CLASSES:
        labels = [_label_of(n) for n in names]
        relabel = {lab: i for i, lab in enumerate(labels)}
        train_images = subset(train_images, labels, relabel)
        val_images = subset(val_images, labels, relabel)
    limit = run.args.limit_per_class
    if limit is not None:
        counts: dict = {}
        kept = []
        for im in train_images:
            if counts.get(im.label, 0) < limit:
                counts[im.label] = counts.get(im.label, 0) + 1
                kept.append(im)
        train_images = kept

    spec_cfg = run.eff("spec_config", "train", "spec_config", None)
    spec = spec_from_config(load_config(spec_cfg)) if spec_cfg else default_spec(len(names))
    model = build_model(spec, seed=run.seed)
    report = train(model, train_images, val_images, hyper, stats)

    save_weights(model, run.path("weights.mcnn"))
    _write_stats(stats, run.path("stats.csv"))
    rows = [(e + 1, report.epoch_loss[e], report.epoch_accuracy[e])
            for e in range(len(report.epoch_loss))]
    rows.append(("final_val", report.val_accuracy, ""))
    write_csv(run.path("training_report.csv"), ("epoch", "loss", "accuracy"), rows)
    print(f"val_accuracy={report.val_accuracy:.4f}")
    return 0


def cmd_maximize(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run, required=False)
    names = _class_names(getattr(run.args, "classes", None))
    objective = _objective_from_args(run, model, names)
    reg = maximize.RegularizerConfig(
        lambda_alpha=float(run.eff("lambda_alpha", "regularizer", "lambda_alpha", 0.0)),
        alpha=float(run.eff("alpha", "regularizer", "alpha", 6.0)),
        lambda_tv=float(run.eff("lambda_tv", "regularizer", "lambda_tv", 0.0)),
        beta=float(run.eff("beta", "regularizer", "beta", 2.0)),
    )
    jitter = None
    if run.args.jitter or run.cfg.get("jitter"):
        jitter = maximize.JitterConfig(
            max_translate_px=int(run.eff("jitter_translate", "jitter", "max_translate_px", 2)),
            max_rotate_deg=float(run.eff("jitter_rotate", "jitter", "max_rotate_deg", 5.0)),
            blur_sigma=float(run.eff("jitter_blur", "jitter", "blur_sigma", 0.5)),
        )
    cfg = maximize.AscentConfig(
        lr=float(run.eff("lr", "ascent", "lr", 0.0001)),
        epochs=int(run.eff("epochs", "ascent", "epochs", 100)),
        seed=run.seed,
        jitter=jitter,
        clamp_to_data_range=bool(run.args.clamp),
    )
    start = _load_image(run, run.args.start, stats)
    snap = run.args.snapshot_every

    def on_epoch(epoch, image):
        if snap and epoch % snap == 0 and epoch < cfg.epochs:
            _render(run, f"epoch{epoch:05d}.ppm", image, stats)

    trace = maximize.ascend(model, objective, reg, cfg, start, stats,
                            on_epoch=on_epoch if snap else None)
    _render(run, "start.ppm", trace.start_image, stats)
    _render(run, "final.ppm", trace.final_image, stats)
    write_csv(run.path("trace.csv"), ("epoch", "objective", "predicted_class"),
              maximize.trace_rows(trace))
    flip = trace.flip_epoch if trace.flip_epoch is not None else ""
    print(f"flip_epoch={flip} final_objective={trace.objective_per_epoch[-1]:.6g}")
    return 0


def cmd_gradcam(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run, required=False)
    names = _class_names(run.args.classes)
    x = _load_image(run, run.args.image, stats)
    cls = _class_index(run.args.class_, names)
    hm = attribution.grad_cam(model, x, cls, run.args.layer)
    attribution.render_heatmap_pgm(hm, run.path("gradcam.pgm"))
    raw = denormalize(x, stats) if stats is not None else x
    attribution.render_overlay_ppm(raw, hm, run.path("overlay.ppm"))
    return 0


def cmd_diff(run: Run) -> int:
    stats = _stats(run, required=False)
    a = _load_image(run, run.args.image_a, stats)
    b = _load_image(run, run.args.image_b, stats)
    hm = attribution.diff_heatmap(a, b)
    attribution.render_heatmap_pgm(hm, run.path("diff.pgm"))
    return 0


def cmd_robustness(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run, required=False)
    names = _class_names(run.args.classes)
    x = _load_image(run, run.args.image, stats)
    target = _class_index(run.args.target_class, names)
    lr = float(run.eff("lr", "ascent", "lr", 0.0001))
    epochs = int(run.eff("epochs", "ascent", "epochs", 100))
    rep = attribution.robustness(model, x, target, lr, epochs, stats)
    write_csv(run.path("robustness.csv"),
              ("flip_epoch", "budget_epochs", "lr", "diff_energy", "score"),
              [(rep.flip_epoch if rep.flip_epoch is not None else "",
                rep.budget_epochs, rep.lr, rep.diff_energy, rep.score)])
    print(f"score={rep.score:.4f} diff_energy={rep.diff_energy:.6g}")
    return 0


def cmd_topk(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run, required=False)
    names = _class_names(getattr(run.args, "classes", None))
    objective = _objective_from_args(run, model, names)
    addr = objective.terms[0][0]
    images = load_cifar10(_data_dir(run), run.args.split)
    ranked = attribution.top_k_activating(model, images, addr, run.args.k, stats)
    write_csv(run.path("topk.csv"), ("rank", "source_id", "score"),
              [(i + 1, sid, score) for i, (sid, score) in enumerate(ranked)])
    return 0


def cmd_hist(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run, required=False)
    names = _class_names(getattr(run.args, "classes", None))
    objective = _objective_from_args(run, model, names)
    addr = objective.terms[0][0]
    images = load_cifar10(_data_dir(run), run.args.split)
    bins = attribution.activation_histogram(model, images, addr, run.args.bins, stats)
    write_csv(run.path("hist.csv"), ("bin_lo", "bin_hi", "count"), bins)
    return 0


def cmd_oos_table(run: Run) -> int:
    model = _weights(run)
    trained = _class_names(run.args.classes)
    data = _data_dir(run)
    stats = _stats(run)
    images = load_cifar10(data, run.args.split)
    trained_labels = {_label_of(n) for n in trained}
    datasets = {}
    for name in CIFAR10_CLASSES:
        lab = _label_of(name)
        if lab in trained_labels:
            continue
        members = [im for im in images if im.label == lab]
        if members:  # classes absent from this split simply have no row
            datasets[name] = members
    if run.args.noise:
        datasets["random_noise"] = gaussian_noise_images(stats, run.args.noise, run.seed)
    table = attribution.oos_table(model, trained, datasets, stats)
    rows = [[name] + [f"{v:.1f}" for v in table.rows[name]] for name in table.rows]
    write_csv(run.path("oos.csv"), ["dataset"] + list(trained), rows)
    dec_rows = []
    for name, dec in table.decomposition.items():
        for i, cls in enumerate(trained):
            dec_rows.append((name, cls, dec["wx_mean"][i], dec["bias"][i]))
    write_csv(run.path("decomposition.csv"),
              ("dataset", "class", "wx_mean", "bias"), dec_rows)
    return 0


def _reps_for(run: Run, model, stats):
    # the model is only the feature extractor here; categories come from the
    # dataset labels, independent of how many classes the head predicts
    images = _category_images(run, run.args.split, run.args.limit_per_class)
    names = {i: n for i, n in enumerate(CIFAR10_CLASSES)}
    names = {i: n for i, n in names.items() if any(im.label == i for im in images)}
    if run.args.include_noise:
        images = images + gaussian_noise_images(stats, run.args.include_noise, run.seed)
        names[-1] = "noise"
    return hierarchy.representative_vectors(model, images, run.args.layer, names, stats)


def cmd_category_tree(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run)
    reps = _reps_for(run, model, stats)
    graph = hierarchy.category_graph(reps)
    tree = hierarchy.build_hierarchy(graph)
    hierarchy.emit_tree_dot(tree, run.path("category_tree.dot"))
    write_csv(run.path("merges.csv"),
              ("step", "child_a", "child_b", "supernode", "weight"),
              hierarchy.merge_log_rows(tree))
    header, rows = hierarchy.distance_matrix_rows(reps)
    write_csv(run.path("distances.csv"), header, rows)
    return 0


def cmd_mst(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run)
    reps = _reps_for(run, model, stats)
    graph = hierarchy.category_graph(reps)
    mst = hierarchy.minimum_spanning_tree(graph)
    hierarchy.emit_tree_dot(mst, run.path("mst.dot"))
    write_csv(run.path("mst.csv"), ("a", "b", "weight"), mst)
    return 0


def _tree_for(run: Run, model, stats):
    label = _label_of(run.args.class_) if not run.args.class_.isdigit() else int(run.args.class_)
    images = [im for im in load_cifar10(_data_dir(run), run.args.split)
              if im.label == label][:run.args.limit]
    if len(images) < 2:
        raise UsageError(f"fewer than 2 images of class {run.args.class_!r} available")
    return filter_tree.build_prediction_tree(model, images, run.args.layer, stats), images


def cmd_filter_tree(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run)
    tree, images = _tree_for(run, model, stats)
    filter_tree.emit_prediction_tree_dot(tree, run.path("filter_tree.dot"))
    write_csv(run.path("filter_merges.csv"),
              ("step", "child_a", "child_b", "supernode", "cosine", "critical_filter"),
              filter_tree.merge_log_rows(tree))
    if run.args.annotate_k:
        notes = filter_tree.annotate_tree(tree, model, images, run.args.annotate_k, stats)
        write_csv(run.path("annotations.csv"), ("node", "top_activating"),
                  [(n, ";".join(v)) for n, v in sorted(notes.items())])
    print(f"merges={len(tree.merge_log)} stop={tree.stop_reason}")
    return 0


def cmd_query_path(run: Run) -> int:
    model = _weights(run)
    stats = _stats(run)
    tree, _ = _tree_for(run, model, stats)
    x = _load_image(run, run.args.image, stats)
    raw = denormalize(x, stats) if stats is not None else x
    path = filter_tree.query_path(tree, model, raw, stats)
    lines = []
    for node, crit, act in path:
        crit_s = "-" if crit is None else str(crit)
        act_s = "-" if act is None else f"{act:.6g}"
        lines.append(f"{node.name}\tcritical_filter={crit_s}\tactivation={act_s}")
    run.path("query_path.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


_COMMANDS = {
    "train": cmd_train,
    "maximize": cmd_maximize,
    "gradcam": cmd_gradcam,
    "diff": cmd_diff,
    "robustness": cmd_robustness,
    "topk": cmd_topk,
    "hist": cmd_hist,
    "oos-table": cmd_oos_table,
    "category-tree": cmd_category_tree,
    "mst": cmd_mst,
    "filter-tree": cmd_filter_tree,
    "query-path": cmd_query_path,
}


def _fail(exc: Exception, code: int) -> int:
    print(f"error: {exc}", file=sys.stderr)
    print(f"ERROR kind={type(exc).__name__} code={code} msg={exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        run = Run(args)
        if argv is not None:
            run.params["argv"] = " ".join(str(a) for a in argv)
        else:
            run.params["argv"] = " ".join(sys.argv[1:])
        rc = _COMMANDS[args.command](run)
        run.finish(args.command)
        return rc
    except (UsageError, AddressError, ShapeError) as e:
        return _fail(e, 1)
    except DataFormatError as e:
        return _fail(e, 2)
    except NumericsError as e:
        return _fail(e, 3)
    except CnnscopeError as e:  # anything else from the library is a usage problem
        return _fail(e, 1)


if __name__ == "__main__":
    sys.exit(main())
