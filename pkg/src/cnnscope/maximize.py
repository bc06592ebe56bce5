"""Gradient ascent on input pixels to maximize a network statistic.

An Objective is a weighted sum of scalar layer addresses (class logits,
softmax probabilities, layer/channel/filter means). ascend() climbs that
objective in pixel space with the network weights frozen, optionally
penalized by an alpha-norm and a total-variation regularizer;
the total being maximized is

    objective(x) - lambda_alpha * alpha_norm(x) - lambda_tv * tv(x)

and optionally smoothed by blurring/translating/rotating the gradient a
little each step before it is applied, which suppresses the nail-shaped
high-frequency artifacts pooling otherwise produces.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import tensor as T
from .data import DatasetStats, normalize
from .errors import AscentAborted, ShapeError, UsageError
from .model import LayerAddress, Model, forward_with_activations, validate_address
from .seeds import substream
from .tensor import Tape, Tensor, backward, record


@dataclass(frozen=True)
class Objective:
    """A weighted sum of scalar statistics: sum_i weight_i * score(address_i)."""

    terms: tuple

    def __post_init__(self):
        if not self.terms:
            raise UsageError("an objective needs at least one term")
        for addr, weight in self.terms:
            if not isinstance(addr, LayerAddress):
                raise UsageError(f"objective term {addr!r} is not a LayerAddress")
            float(weight)

    def describe(self) -> str:
        return " + ".join(f"{w:g}*{a.describe()}" for a, w in self.terms)


def class_logit(class_index: int, weight: float = 1.0) -> Objective:
    return Objective(((LayerAddress("presoftmax", class_index=class_index), weight),))

def class_prob(class_index: int, weight: float = 1.0) -> Objective:
    return Objective(((LayerAddress("softmax", class_index=class_index), weight),))

def layer_mean(layer_name: str, weight: float = 1.0) -> Objective:
    return Objective(((LayerAddress("layer", layer_name=layer_name), weight),))

def filter_mean(layer_name: str, channel: int, weight: float = 1.0) -> Objective:
    return Objective(
        ((LayerAddress("filter", layer_name=layer_name, channel_index=channel), weight),))

def combine(*objectives: Objective) -> Objective:
    terms = []
    for o in objectives:
        terms.extend(o.terms)
    return Objective(tuple(terms))


@dataclass(frozen=True)
class RegularizerConfig:
    lambda_alpha: float = 0.0
    alpha: float = 6.0
    lambda_tv: float = 0.0
    beta: float = 2.0

    def __post_init__(self):
        if self.lambda_alpha < 0 or self.lambda_tv < 0:
            raise UsageError("regularizer coefficients must be >= 0")
        if self.alpha <= 1:
            raise UsageError(f"alpha must be > 1, got {self.alpha}")
        if self.beta <= 0:
            raise UsageError(f"beta must be > 0, got {self.beta}")


@dataclass(frozen=True)
class JitterConfig:
    """Per-step random transforms applied to the gradient, in the fixed
    order blur, translate, rotate."""

    max_translate_px: int = 0
    max_rotate_deg: float = 0.0
    blur_sigma: float = 0.0

    def __post_init__(self):
        if self.max_translate_px < 0 or self.max_rotate_deg < 0 or self.blur_sigma < 0:
            raise UsageError("jitter parameters must be non-negative")


@dataclass(frozen=True)
class AscentConfig:
    lr: float
    epochs: int
    seed: int = 0
    jitter: JitterConfig | None = None
    clamp_to_data_range: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise UsageError(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise UsageError(f"epochs must be >= 1, got {self.epochs}")


@dataclass
class AscentTrace:
    start_image: np.ndarray
    final_image: np.ndarray
    objective_per_epoch: list
    predicted_class_per_epoch: list
    flip_epoch: int | None


# ---------------------------------------------------------------------------
# objective evaluation
# ---------------------------------------------------------------------------


def _term_tensor(logits, acts, address: LayerAddress):
    if address.kind == "presoftmax":
        return logits[0, address.class_index]
    if address.kind == "softmax":
        return T.softmax(logits)[0, address.class_index]
    act = acts.get(address.layer_name)
    if act is None:
        raise UsageError(f"no activation recorded for layer {address.layer_name!r}")
    if address.kind == "layer":
        return T.mean_all(act)
    return T.mean_all(act[:, address.channel_index])


def _combine_terms(logits, acts, objective: Objective, spec) -> Tensor:
    total = None
    for addr, weight in objective.terms:
        validate_address(addr, spec)
        term = T.mul(_term_tensor(logits, acts, addr), float(weight))
        total = term if total is None else T.add(total, term)
    return total


def objective_tensor(model: Model, objective: Objective, x_t: Tensor) -> Tensor:
    """The objective as a scalar graph node; x_t must be a (C,H,W) tensor."""
    batch = T.reshape(x_t, (1, *x_t.data.shape))
    logits, acts = forward_with_activations(model, batch)
    return _combine_terms(logits, acts, objective, model.spec)


def evaluate_objective(model: Model, objective: Objective, x) -> float:
    """Deterministic scalar value of the objective at image x (no gradients)."""
    x = np.asarray(x, dtype=np.float64)
    if tuple(x.shape) != tuple(model.spec.input_shape):
        raise ShapeError(
            f"objective input shape {x.shape} does not match spec "
            f"input_shape {tuple(model.spec.input_shape)}")
    logits, acts = forward_with_activations(model, x[None])
    total = 0.0
    for addr, weight in objective.terms:
        validate_address(addr, model.spec)
        if addr.kind == "presoftmax":
            v = logits.data[0, addr.class_index]
        elif addr.kind == "softmax":
            z = logits.data[0] - logits.data[0].max()
            e = np.exp(z)
            v = (e / e.sum())[addr.class_index]
        elif addr.kind == "layer":
            v = acts[addr.layer_name].data.mean()
        else:
            v = acts[addr.layer_name].data[:, addr.channel_index].mean()
        total += float(weight) * float(v)
    return total


# ---------------------------------------------------------------------------
# regularizers
# ---------------------------------------------------------------------------


def regularizer_alpha(x, alpha: float) -> float:
    """sum |x_i - mean(x)|^alpha over all pixels of all channels (global mean).

    A constant image scores exactly 0 (the mean subtraction is bypassed in
    that case so float rounding in the mean cannot leak through).
    """
    if alpha <= 1:
        raise UsageError(f"alpha must be > 1, got {alpha}")
    v = np.asarray(x, dtype=np.float64)
    if v.size == 0 or v.min() == v.max():
        return 0.0
    d = v - v.mean()
    return float(np.sum(np.abs(d) ** alpha))


def regularizer_tv(x, beta: float) -> float:
    """Finite-difference total variation, summed over channels.

    Per channel: sum over (i,j) of ((x[i,j+1]-x[i,j])^2 + (x[i+1,j]-x[i,j])^2)^(beta/2),
    omitting out-of-range differences at the borders, so a constant image
    scores exactly 0.
    """
    if beta <= 0:
        raise UsageError(f"beta must be > 0, got {beta}")
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 2:
        v = v[None]
    if v.ndim != 3:
        raise ShapeError(f"regularizer_tv wants (C,H,W) or (H,W), got {np.asarray(x).shape}")
    e = _tv_energy(v)
    return float(np.sum(e ** (beta / 2.0)))


def _tv_energy(v: np.ndarray) -> np.ndarray:
    e = np.zeros_like(v)
    du = v[:, :, 1:] - v[:, :, :-1]
    dv = v[:, 1:, :] - v[:, :-1, :]
    e[:, :, :-1] += du * du
    e[:, :-1, :] += dv * dv
    return e


def _alpha_term(x_t: Tensor, alpha: float) -> Tensor:
    xv = x_t.data
    if xv.min() == xv.max():  # exact-zero degenerate case, gradient is 0 too
        return record((x_t,), np.float64(0.0), lambda g: (np.zeros_like(xv),))
    d = xv - xv.mean()
    out = np.sum(np.abs(d) ** alpha)

    def bw(g):
        base = alpha * np.abs(d) ** (alpha - 1.0) * np.sign(d)
        return (float(g) * (base - base.mean()),)

    return record((x_t,), out, bw)


def _tv_term(x_t: Tensor, beta: float) -> Tensor:
    xv = x_t.data
    e = _tv_energy(xv)
    out = np.sum(e ** (beta / 2.0))

    def bw(g):
        # p = d(e^(beta/2))/de, forced to 0 where e == 0 (subgradient; also
        # dodges the singular exponent for beta < 2)
        with np.errstate(divide="ignore"):
            p = np.where(e > 0, e ** (beta / 2.0 - 1.0), 0.0) * (beta / 2.0)
        du = xv[:, :, 1:] - xv[:, :, :-1]
        dv = xv[:, 1:, :] - xv[:, :-1, :]
        gu = p[:, :, :-1] * 2.0 * du
        gv = p[:, :-1, :] * 2.0 * dv
        dx = np.zeros_like(xv)
        dx[:, :, 1:] += gu
        dx[:, :, :-1] -= gu
        dx[:, 1:, :] += gv
        dx[:, :-1, :] -= gv
        return (float(g) * dx,)

    return record((x_t,), out, bw)


# ---------------------------------------------------------------------------
# ascent
# ---------------------------------------------------------------------------


def _translate_zero_fill(a: np.ndarray, dy: int, dx: int) -> np.ndarray:
    out = np.zeros_like(a)
    h, w = a.shape[1], a.shape[2]
    ys = slice(max(dy, 0), min(h + dy, h))
    yd = slice(max(-dy, 0), min(h - dy, h))
    xs = slice(max(dx, 0), min(w + dx, w))
    xd = slice(max(-dx, 0), min(w - dx, w))
    out[:, ys, xs] = a[:, yd, xd]
    return out


def _transform_gradient(g: np.ndarray, jitter: JitterConfig, rng) -> np.ndarray:
    if jitter.blur_sigma > 0:
        g = ndimage.gaussian_filter(g, sigma=(0.0, jitter.blur_sigma, jitter.blur_sigma))
    if jitter.max_translate_px > 0:
        dy, dx = rng.integers(-jitter.max_translate_px, jitter.max_translate_px + 1, size=2)
        g = _translate_zero_fill(g, int(dy), int(dx))
    if jitter.max_rotate_deg > 0:
        angle = rng.uniform(-jitter.max_rotate_deg, jitter.max_rotate_deg)
        g = ndimage.rotate(g, angle, axes=(2, 1), reshape=False, order=1,
                           mode="constant", cval=0.0)
    return g


def ascend(model: Model, objective: Objective, reg: RegularizerConfig,
           cfg: AscentConfig, start: np.ndarray,
           stats: DatasetStats | None = None, on_epoch=None) -> AscentTrace:
    """Plain gradient ascent on the image with network weights frozen.

    Per epoch: differentiate the regularized objective at the current image,
    optionally blur/translate/rotate the gradient, take x += lr * g, and
    record the post-step objective and prediction. flip_epoch is the first
    epoch whose prediction differs from the start image's.

    When clamp_to_data_range is set, pixels are clipped each step to the
    normalized range of [0,1] under stats (or to [0,1] if stats is None).
    A non-finite objective aborts with AscentAborted carrying the partial
    trace. on_epoch(epoch, image), when given, observes each post-step
    image (e.g. to render snapshots); it must not mutate it.
    """
    start = np.asarray(start, dtype=np.float64)
    if tuple(start.shape) != tuple(model.spec.input_shape):
        raise ShapeError(
            f"start image shape {start.shape} does not match spec "
            f"input_shape {tuple(model.spec.input_shape)}")
    lo = hi = None
    if cfg.clamp_to_data_range:
        if stats is None:
            lo = np.zeros((3, 1, 1))
            hi = np.ones((3, 1, 1))
        else:
            lo = normalize(np.zeros((3, 1, 1)), stats)
            hi = normalize(np.ones((3, 1, 1)), stats)
    rng = substream(cfg.seed, "jitter")

    def step_forward(x, want_grad):
        with Tape() as tape:
            x_t = Tensor(x, requires_grad=True)
            batch = T.reshape(x_t, (1, *x.shape))
            logits, acts = forward_with_activations(model, batch)
            phi = _combine_terms(logits, acts, objective, model.spec)
            if reg.lambda_alpha > 0:
                phi = T.sub(phi, T.mul(_alpha_term(x_t, reg.alpha), reg.lambda_alpha))
            if reg.lambda_tv > 0:
                phi = T.sub(phi, T.mul(_tv_term(x_t, reg.beta), reg.lambda_tv))
        val = phi.item()
        pred = int(np.argmax(logits.data[0]))
        g = None
        if want_grad:
            backward(phi)
            g = x_t.grad
        tape.release()
        return val, pred, g

    # One forward per visited point: the gradient from epoch e-1's point
    # drives epoch e's step, and that step's forward records the trace row.
    x = start.copy()
    objs: list[float] = []
    preds: list[int] = []
    flip = None

    val, start_pred, g = step_forward(x, want_grad=True)
    if not np.isfinite(val):
        raise AscentAborted(
            f"objective is non-finite ({val!r}) at the start image",
            AscentTrace(start.copy(), x, objs, preds, flip))
    for epoch in range(1, cfg.epochs + 1):
        gt = _transform_gradient(g, cfg.jitter, rng) if cfg.jitter is not None else g
        x = x + cfg.lr * gt
        if lo is not None:
            np.clip(x, lo, hi, out=x)
        val, pred, g = step_forward(x, want_grad=(epoch < cfg.epochs))
        if not np.isfinite(val):
            raise AscentAborted(
                f"objective became non-finite ({val!r}) at epoch {epoch}",
                AscentTrace(start.copy(), x, objs, preds, flip))
        objs.append(val)
        preds.append(pred)
        if flip is None and pred != start_pred:
            flip = epoch
        if on_epoch is not None:
            on_epoch(epoch, x)
    return AscentTrace(start_image=start.copy(), final_image=x,
                       objective_per_epoch=objs, predicted_class_per_epoch=preds,
                       flip_epoch=flip)


def trace_rows(trace: AscentTrace):
    """CSV rows (epoch, objective, predicted_class) for a finished ascent."""
    return [(e + 1, trace.objective_per_epoch[e], trace.predicted_class_per_epoch[e])
            for e in range(len(trace.objective_per_epoch))]
