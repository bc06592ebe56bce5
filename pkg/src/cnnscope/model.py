"""A small residual image classifier: spec, init, forward, training, weight files.

The architecture is a scaled-down residual network with a conv+bn+relu stem
and exactly four residual stages addressed as layer1..layer4, followed by
global average pooling and a linear head. Four stages keep layer addressing
total for every downstream analysis; the default sizing (16/16/32/64/128
channels on 32x32 inputs) trains in minutes on a CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import struct

import numpy as np

from . import tensor as T
from .errors import (
    AddressError,
    ShapeError,
    TrainingDiverged,
    UsageError,
    WeightFileError,
    WeightMagicError,
    WeightShapeError,
    WeightTruncationError,
    WeightVersionError,
)
from .seeds import substream
from .tensor import Tape, Tensor, backward

LAYER_NAMES = ("stem", "layer1", "layer2", "layer3", "layer4")

_MAGIC = b"MCNN"
_VERSION = 1


@dataclass(frozen=True)
class StageSpec:
    channels: int
    blocks: int = 1
    stride: int = 1


@dataclass(frozen=True)
class ModelSpec:
    """Declarative description of the classifier.

    Exactly four stages are required so that "layer1".."layer4" addressing
    is always valid, and stage channel counts must be non-decreasing.
    """

    num_classes: int
    input_shape: tuple = (3, 32, 32)
    stem_channels: int = 16
    stages: tuple = (
        StageSpec(16, 1, 1),
        StageSpec(32, 1, 2),
        StageSpec(64, 1, 2),
        StageSpec(128, 1, 2),
    )

    def __post_init__(self):
        if self.num_classes < 2:
            raise UsageError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.input_shape) != 3 or any(d < 1 for d in self.input_shape):
            raise UsageError(f"input_shape must be (C,H,W) positive, got {self.input_shape}")
        if len(self.stages) != 4:
            raise UsageError(f"exactly 4 stages required, got {len(self.stages)}")
        chans = [s.channels for s in self.stages]
        if any(b > a for a, b in zip(chans[1:], chans[:-1])):
            raise UsageError(f"stage channels must be non-decreasing, got {chans}")
        for s in self.stages:
            if s.blocks < 1 or s.stride < 1 or s.channels < 1:
                raise UsageError(f"invalid stage {s}")
        if self.stem_channels < 1:
            raise UsageError("stem_channels must be >= 1")

    def channels_of(self, layer_name: str) -> int:
        if layer_name == "stem":
            return self.stem_channels
        if layer_name in ("layer1", "layer2", "layer3", "layer4"):
            return self.stages[int(layer_name[-1]) - 1].channels
        raise AddressError(f"unknown layer {layer_name!r}, expected one of {LAYER_NAMES}")


def default_spec(num_classes: int) -> ModelSpec:
    return ModelSpec(num_classes=num_classes)


@dataclass(frozen=True)
class LayerAddress:
    """Names one scalar statistic of the network.

    kind is one of:
      presoftmax  class_index'th logit
      softmax     class_index'th softmax probability
      layer       mean over every element the named layer outputs
      channel     mean over one channel's spatial elements
      filter      synonym for channel (a filter's output map is a channel)
    """

    kind: str
    layer_name: str = ""
    channel_index: int | None = None
    class_index: int | None = None

    def __post_init__(self):
        if self.kind not in ("presoftmax", "softmax", "layer", "channel", "filter"):
            raise AddressError(f"unknown address kind {self.kind!r}")
        if self.kind in ("presoftmax", "softmax") and self.class_index is None:
            raise AddressError(f"{self.kind} address needs class_index")
        if self.kind == "layer" and not self.layer_name:
            raise AddressError("layer address needs layer_name")
        if self.kind in ("channel", "filter") and (
                not self.layer_name or self.channel_index is None):
            raise AddressError(f"{self.kind} address needs layer_name and channel_index")

    def describe(self) -> str:
        if self.kind in ("presoftmax", "softmax"):
            return f"{self.kind}[{self.class_index}]"
        if self.kind == "layer":
            return f"layer:{self.layer_name}"
        return f"{self.kind}:{self.layer_name}[{self.channel_index}]"


def validate_address(address: LayerAddress, spec: ModelSpec):
    """Check an address against a concrete spec; raises AddressError."""
    if address.kind in ("presoftmax", "softmax"):
        if not (0 <= address.class_index < spec.num_classes):
            raise AddressError(
                f"class index {address.class_index} out of range for "
                f"{spec.num_classes} classes")
        return
    c = spec.channels_of(address.layer_name)
    if address.kind in ("channel", "filter"):
        if not (0 <= address.channel_index < c):
            raise AddressError(
                f"channel {address.channel_index} out of range for "
                f"{address.layer_name} with {c} channels")


@dataclass
class Model:
    spec: ModelSpec
    params: dict = field(default_factory=dict)
    running_stats: dict = field(default_factory=dict)

    def trainable(self):
        return self.params


def _block_prefixes(spec: ModelSpec):
    """Yield (prefix, in_channels, out_channels, stride) per residual block."""
    cin = spec.stem_channels
    for i, st in enumerate(spec.stages, start=1):
        for b in range(1, st.blocks + 1):
            stride = st.stride if b == 1 else 1
            yield f"layer{i}.block{b}", cin, st.channels, stride
            cin = st.channels


def parameter_shapes(spec: ModelSpec):
    """The full named-parameter map (params, running_stats) as shape dicts."""
    params = {}
    running = {}

    def bn(prefix, c):
        params[f"{prefix}.gamma"] = (c,)
        params[f"{prefix}.beta"] = (c,)
        running[f"{prefix}.mean"] = (c,)
        running[f"{prefix}.var"] = (c,)

    cin = spec.input_shape[0]
    params["stem.conv.weight"] = (spec.stem_channels, cin, 3, 3)
    bn("stem.bn", spec.stem_channels)
    for prefix, ci, co, stride in _block_prefixes(spec):
        params[f"{prefix}.conv1.weight"] = (co, ci, 3, 3)
        bn(f"{prefix}.bn1", co)
        params[f"{prefix}.conv2.weight"] = (co, co, 3, 3)
        bn(f"{prefix}.bn2", co)
        if ci != co or stride != 1:
            params[f"{prefix}.proj.weight"] = (co, ci, 1, 1)
            bn(f"{prefix}.projbn", co)
    feat = spec.stages[-1].channels
    params["head.fc.weight"] = (spec.num_classes, feat)
    params["head.fc.bias"] = (spec.num_classes,)
    return params, running


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Fresh model with Kaiming fan-in conv init, unit gamma, zero beta/bias."""
    rng = substream(seed, "init")
    shapes, running_shapes = parameter_shapes(spec)
    params = {}
    for name in sorted(shapes):
        shp = shapes[name]
        if name.endswith("conv.weight") or ".conv" in name or ".proj" in name:
            fan_in = int(np.prod(shp[1:]))
            params[name] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shp),
                                  requires_grad=True)
        elif name.endswith(".gamma"):
            params[name] = Tensor(np.ones(shp), requires_grad=True)
        elif name.endswith(".beta") or name.endswith(".bias"):
            params[name] = Tensor(np.zeros(shp), requires_grad=True)
        elif name == "head.fc.weight":
            fan_in = shp[1]
            params[name] = Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), shp),
                                  requires_grad=True)
        else:  # pragma: no cover - the naming scheme above is exhaustive
            raise AssertionError(name)
    running = {}
    for name in sorted(running_shapes):
        init = np.ones(running_shapes[name]) if name.endswith(".var") else np.zeros(running_shapes[name])
        running[name] = Tensor(init)
    return Model(spec=spec, params=params, running_stats=running)


def _bn(model: Model, prefix: str, x, training: bool):
    p, r = model.params, model.running_stats
    return T.batchnorm2d(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"],
                         r[f"{prefix}.mean"], r[f"{prefix}.var"], training)


def _bn_relu(model: Model, prefix: str, x, training: bool):
    p, r = model.params, model.running_stats
    return T.batchnorm2d_relu(x, p[f"{prefix}.gamma"], p[f"{prefix}.beta"],
                              r[f"{prefix}.mean"], r[f"{prefix}.var"], training)


def forward_with_activations(model: Model, batch, training: bool = False):
    """Run the network, returning (logits, activations).

    activations maps each of the 5 addressable layer names to its
    post-activation output tensor. In eval mode the pass is deterministic:
    the same input yields bitwise-identical outputs.
    """
    x = batch if isinstance(batch, Tensor) else Tensor(batch)
    if x.data.ndim != 4:
        raise ShapeError(f"forward: batch must be rank 4 (N,C,H,W), got rank {x.data.ndim}")
    if tuple(x.data.shape[1:]) != tuple(model.spec.input_shape):
        raise ShapeError(
            f"forward: batch shape {tuple(x.data.shape[1:])} does not match "
            f"spec input_shape {tuple(model.spec.input_shape)}")
    p = model.params
    acts = {}
    h = _bn_relu(model, "stem.bn", T.conv2d(x, p["stem.conv.weight"], stride=1, padding=1),
                 training)
    acts["stem"] = h
    stage_of = {}
    for prefix, ci, co, stride in _block_prefixes(model.spec):
        identity = h
        y = _bn_relu(model, f"{prefix}.bn1",
                     T.conv2d(h, p[f"{prefix}.conv1.weight"], stride=stride, padding=1),
                     training)
        y = _bn(model, f"{prefix}.bn2",
                T.conv2d(y, p[f"{prefix}.conv2.weight"], stride=1, padding=1), training)
        if f"{prefix}.proj.weight" in p:
            identity = _bn(model, f"{prefix}.projbn",
                           T.conv2d(h, p[f"{prefix}.proj.weight"], stride=stride, padding=0),
                           training)
        h = T.add_relu(y, identity)
        stage_of[prefix.split(".")[0]] = h
    for i in range(1, 5):
        acts[f"layer{i}"] = stage_of[f"layer{i}"]
    side = h.data.shape[2]
    pooled = T.avgpool2d(h, kernel=side)
    flat = T.reshape(pooled, (h.data.shape[0], h.data.shape[1]))
    logits = T.linear(flat, p["head.fc.weight"], p["head.fc.bias"])
    return logits, acts


def forward(model: Model, batch, training: bool = False) -> Tensor:
    return forward_with_activations(model, batch, training)[0]


def predict_logits(model: Model, images_array: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode logits for a (N,C,H,W) array, computed in batches."""
    outs = []
    for lo in range(0, len(images_array), batch_size):
        logits = forward(model, images_array[lo:lo + batch_size])
        outs.append(logits.data)
    return np.concatenate(outs, axis=0) if outs else np.zeros((0, model.spec.num_classes))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Hyper:
    """SGD hyperparameters.

    The batch partition is drawn once per run from the seed; epochs revisit
    identical batches in identical order, which keeps per-epoch reports
    comparable and makes the lr=0 run exactly loss-constant. hflip enables
    the one supported augmentation (random horizontal flip, per epoch).
    """

    lr: float
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 10
    batch_size: int = 64
    seed: int = 0
    hflip: bool = True


@dataclass
class TrainingReport:
    epoch_loss: list
    epoch_accuracy: list
    val_accuracy: float


def train(model: Model, train_images, val_images, hyper: Hyper, stats=None) -> TrainingReport:
    """SGD-with-momentum training; mutates model params in place.

    Runs are fully determined by (datasets, hyper, initial params): shuffling
    and flips come from the seed's named substreams. A non-finite loss
    aborts with TrainingDiverged carrying (epoch, batch, lr).
    """
    from .data import to_batch  # local import to avoid a module cycle

    x_all, y_all = to_batch(train_images, stats)
    if y_all.size and y_all.max() >= model.spec.num_classes:
        raise UsageError(
            f"dataset label {int(y_all.max())} out of range for "
            f"{model.spec.num_classes} classes")
    n = len(x_all)
    order = substream(hyper.seed, "train.shuffle").permutation(n)
    flip_rng = substream(hyper.seed, "train.flip")
    velocity = {name: np.zeros_like(p.data) for name, p in model.params.items()}

    epoch_loss, epoch_acc = [], []
    for epoch in range(hyper.epochs):
        seen = correct = 0
        loss_sum = 0.0
        for bi, lo in enumerate(range(0, n, hyper.batch_size)):
            idx = order[lo:lo + hyper.batch_size]
            xb = x_all[idx]
            yb = y_all[idx]
            if hyper.hflip:
                flips = flip_rng.random(len(idx)) < 0.5
                if flips.any():
                    xb = xb.copy()
                    xb[flips] = xb[flips, :, :, ::-1]
            with Tape() as tape:
                logits = forward(model, xb, training=True)
                loss = T.cross_entropy(logits, yb)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise TrainingDiverged(epoch=epoch, batch=bi, lr=hyper.lr, loss=loss_val)
            backward(loss)
            tape.release()
            for name, p in model.params.items():
                g = p.grad
                if g is None:
                    continue
                v = velocity[name]
                v *= hyper.momentum
                v += g
                if hyper.weight_decay:
                    v += hyper.weight_decay * p.data
                p.data -= hyper.lr * v
                p.grad = None
            loss_sum += loss_val * len(idx)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
            seen += len(idx)
        epoch_loss.append(loss_sum / seen)
        epoch_acc.append(correct / seen)

    val_accuracy = evaluate(model, val_images, stats) if len(val_images) else float("nan")
    return TrainingReport(epoch_loss=epoch_loss, epoch_accuracy=epoch_acc,
                          val_accuracy=val_accuracy)


def evaluate(model: Model, images, stats=None, batch_size: int = 256) -> float:
    """Eval-mode accuracy over a labeled dataset."""
    from .data import to_batch

    x, y = to_batch(images, stats)
    if len(x) == 0:
        raise UsageError("evaluate needs a non-empty dataset")
    logits = predict_logits(model, x, batch_size)
    return float((logits.argmax(axis=1) == y).mean())


# ---------------------------------------------------------------------------
# weight file format
# ---------------------------------------------------------------------------
#
# magic "MCNN" | u32 version=1 | u32 tensor count | per tensor:
#   u16 name length, UTF-8 name, u8 rank, rank x u32 dims,
#   prod(dims) x f32 little-endian values.
# Running stats are stored as ordinary named tensors. Values round-trip
# through 32-bit floats; reloaded logits agree within ~1e-4.


def save_weights(model: Model, path):
    entries = {}
    entries.update(model.params)
    entries.update(model.running_stats)
    chunks = [_MAGIC, struct.pack("<I", _VERSION), struct.pack("<I", len(entries))]
    for name in sorted(entries):
        data = entries[name].data
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(np.ascontiguousarray(data, dtype="<f4").tobytes())
    with open(path, "wb") as f:
        f.write(b"".join(chunks))


def _read_exact(buf: bytes, off: int, size: int, what: str):
    if off + size > len(buf):
        raise WeightTruncationError(f"file ends inside {what} (need {size} bytes at offset {off})")
    return buf[off:off + size], off + size


def read_weight_tensors(path) -> dict:
    """Parse a weight file into {name: float64 ndarray}; structural checks only."""
    with open(path, "rb") as f:
        buf = f.read()
    magic, off = _read_exact(buf, 0, 4, "magic")
    if magic != _MAGIC:
        raise WeightMagicError(f"bad magic {magic!r}, expected {_MAGIC!r}")
    raw, off = _read_exact(buf, off, 4, "version")
    version = struct.unpack("<I", raw)[0]
    if version != _VERSION:
        raise WeightVersionError(f"unsupported weight file version {version}")
    raw, off = _read_exact(buf, off, 4, "tensor count")
    count = struct.unpack("<I", raw)[0]
    tensors = {}
    for i in range(count):
        raw, off = _read_exact(buf, off, 2, f"name length of tensor #{i}")
        nlen = struct.unpack("<H", raw)[0]
        raw, off = _read_exact(buf, off, nlen, f"name of tensor #{i}")
        name = raw.decode("utf-8")
        raw, off = _read_exact(buf, off, 1, f"rank of tensor '{name}'")
        rank = raw[0]
        raw, off = _read_exact(buf, off, 4 * rank, f"dims of tensor '{name}'")
        dims = struct.unpack(f"<{rank}I", raw) if rank else ()
        need = int(np.prod(dims, dtype=np.int64)) if dims else 1
        raw, off = _read_exact(buf, off, 4 * need, f"tensor '{name}'")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(dims)
    if off != len(buf):
        raise WeightFileError(f"{len(buf) - off} trailing bytes after the last tensor")
    return tensors


def _infer_spec(tensors: dict) -> ModelSpec:
    # Recoverable from shapes: channel plan, block counts, class count, input
    # channels. Strides follow the default family (stage 1 keeps resolution,
    # a later stage halves it iff it has a projection); spatial input size
    # defaults to 32x32. Pass an explicit spec for anything else.
    try:
        num_classes = tensors["head.fc.bias"].shape[0]
        cin = tensors["stem.conv.weight"].shape[1]
        stem = tensors["stem.conv.weight"].shape[0]
        stages = []
        for i in range(1, 5):
            blocks = 0
            while f"layer{i}.block{blocks + 1}.conv1.weight" in tensors:
                blocks += 1
            if blocks == 0:
                raise KeyError(f"layer{i}")
            channels = tensors[f"layer{i}.block1.conv1.weight"].shape[0]
            has_proj = f"layer{i}.block1.proj.weight" in tensors
            stride = 2 if (has_proj and i > 1) else 1
            stages.append(StageSpec(channels, blocks, stride))
    except KeyError as e:
        raise WeightShapeError(f"cannot infer a model spec: missing tensor {e}") from None
    return ModelSpec(num_classes=num_classes, input_shape=(cin, 32, 32),
                     stem_channels=stem, stages=tuple(stages))


def load_weights(path, spec: ModelSpec | None = None) -> Model:
    """Load a weight file into a Model, validating every shape against the spec."""
    tensors = read_weight_tensors(path)
    if spec is None:
        spec = _infer_spec(tensors)
    want_params, want_running = parameter_shapes(spec)
    expected = dict(want_params)
    expected.update(want_running)
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise WeightShapeError(f"missing tensors for this spec: {', '.join(missing)}")
    unexpected = sorted(set(tensors) - set(expected))
    if unexpected:
        raise WeightShapeError(f"unexpected tensors for this spec: {', '.join(unexpected)}")
    for name, shp in expected.items():
        if tuple(tensors[name].shape) != tuple(shp):
            raise WeightShapeError(
                f"tensor '{name}' has shape {tuple(tensors[name].shape)}, spec wants {tuple(shp)}")
    params = {n: Tensor(tensors[n], requires_grad=True) for n in want_params}
    running = {n: Tensor(tensors[n]) for n in want_running}
    return Model(spec=spec, params=params, running_stats=running)


# ---------------------------------------------------------------------------
# spec config files
# ---------------------------------------------------------------------------


def spec_from_config(cfg: dict) -> ModelSpec:
    """Build a ModelSpec from a parsed config mapping (see cnnscope.config).

    Expected layout: a [model] section with num_classes, optional
    input_shape / stem_channels, and [model.stageN] sections carrying
    channels / blocks / stride.
    """
    m = cfg.get("model", {})
    if "num_classes" not in m:
        raise UsageError("model config needs num_classes")
    kwargs = {"num_classes": int(m["num_classes"])}
    if "input_shape" in m:
        kwargs["input_shape"] = tuple(int(v) for v in m["input_shape"])
    if "stem_channels" in m:
        kwargs["stem_channels"] = int(m["stem_channels"])
    stages = []
    for i in range(1, 5):
        s = cfg.get(f"model.stage{i}")
        if s is None:
            stages = None
            break
        stages.append(StageSpec(channels=int(s["channels"]),
                                blocks=int(s.get("blocks", 1)),
                                stride=int(s.get("stride", 1))))
    if stages is not None:
        kwargs["stages"] = tuple(stages)
    return ModelSpec(**kwargs)
