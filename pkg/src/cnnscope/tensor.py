"""Dense float64 tensors with taped reverse-mode differentiation.

The design is deliberately small: a Tensor wraps a numpy float64 array plus
an optional gradient slot, and a Tape records every differentiable
operation executed while it is active. Calling backward(loss) replays the
tape in exact reverse recording order and deposits gradients into every
tensor whose requires_grad flag is set. Gradients accumulate across
backward calls until explicitly zeroed, which is what lets a composite
objective sum contributions from several scalar terms.

There is no broadcasting beyond scalar constants, no GPU path, and no
higher-order differentiation. Shapes are validated eagerly and violations
raise ShapeError naming the offending axis.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ShapeError, UsageError

_TLS = threading.local()


def _tape_stack():
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = _TLS.stack = []
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A dense N-dimensional float64 array with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    @property
    def ndim(self):
        return self.data.ndim

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Small operator surface; everything routes through the module-level ops
    # so that recording stays in one place.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return tslice(self, idx)


class TapeNode:
    __slots__ = ("inputs", "output", "backward")

    def __init__(self, inputs, output, backward):
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of a forward pass.

    Use as a context manager around the forward computation; every
    differentiable op executed inside appends one node. A tape is
    single-writer: never share an active tape across threads. Independent
    tapes (each owning its tensors) may run concurrently.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False

    def backward(self, loss: "Tensor"):
        backward(loss, tape=self)

    def release(self):
        """Drop all recorded nodes (and the arrays their closures captured).

        The graph is a reference cycle (tape -> nodes -> tensors -> tape), so
        without this the garbage collector decides when the forward buffers
        die; training loops call release() per step to keep memory flat.
        Backward is impossible afterwards.
        """
        self.nodes.clear()


def record(inputs, out_data, backward_fn) -> Tensor:
    """Create an op output and register its backward rule on the active tape.

    This is the hook used by every built-in op and is public so that new
    differentiable operations (e.g. image regularizers) can be defined
    outside this module. backward_fn receives the output gradient and must
    return one gradient (or None) per input, in order.
    """
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape.nodes.append(TapeNode(tuple(inputs), out, backward_fn))
        out._tape = tape
    return out


def backward(loss: Tensor, tape: Tape | None = None):
    """Accumulate d(loss)/d(t) into t.grad for every tensor t with requires_grad.

    loss must be a scalar (size-1) tensor produced under a tape. Gradients
    add onto whatever is already in the grad slots; call zero_grads first
    for a fresh pass.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.data.shape}")
    if tape is None:
        tape = loss._tape
    if tape is None and not loss.requires_grad:
        raise UsageError("backward called on a tensor with no recorded tape")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    if tape is not None:
        for node in reversed(tape.nodes):
            g_out = grads.get(id(node.output))
            if g_out is None:
                continue
            for t, g in zip(node.inputs, node.backward(g_out)):
                if g is None:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + g
                else:
                    grads[key] = g
                    holders[key] = t
    for key, t in holders.items():
        if t.requires_grad:
            g = np.asarray(grads[key], dtype=np.float64).reshape(t.data.shape)
            t.grad = g.copy() if t.grad is None else t.grad + g


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def _astensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a: Tensor, b) -> Tensor:
    a = _astensor(a)
    if isinstance(b, (int, float)):
        return record((a,), a.data + float(b), lambda g: (g,))
    b = _astensor(b)
    if a.data.shape != b.data.shape:
        axis = _first_mismatch(a.data.shape, b.data.shape)
        raise ShapeError(f"add: operands disagree on axis {axis}: {a.data.shape} vs {b.data.shape}")
    return record((a, b), a.data + b.data, lambda g: (g, g))


def sub(a: Tensor, b) -> Tensor:
    a = _astensor(a)
    if isinstance(b, (int, float)):
        return record((a,), a.data - float(b), lambda g: (g,))
    b = _astensor(b)
    if a.data.shape != b.data.shape:
        axis = _first_mismatch(a.data.shape, b.data.shape)
        raise ShapeError(f"sub: operands disagree on axis {axis}: {a.data.shape} vs {b.data.shape}")
    return record((a, b), a.data - b.data, lambda g: (g, -g))


def mul(a: Tensor, b) -> Tensor:
    a = _astensor(a)
    if isinstance(b, (int, float)):
        c = float(b)
        return record((a,), a.data * c, lambda g: (g * c,))
    b = _astensor(b)
    if a.data.shape != b.data.shape:
        axis = _first_mismatch(a.data.shape, b.data.shape)
        raise ShapeError(f"mul: operands disagree on axis {axis}: {a.data.shape} vs {b.data.shape}")
    av, bv = a.data, b.data
    return record((a, b), av * bv, lambda g: (g * bv, g * av))


def _first_mismatch(sa, sb):
    if len(sa) != len(sb):
        return f"rank ({len(sa)} vs {len(sb)})"
    for i, (x, y) in enumerate(zip(sa, sb)):
        if x != y:
            return i
    return "?"


def reshape(x: Tensor, shape) -> Tensor:
    x = _astensor(x)
    old = x.data.shape
    return record((x,), x.data.reshape(shape), lambda g: (g.reshape(old),))


def tslice(x: Tensor, idx) -> Tensor:
    """Basic (non-advanced) indexing as a differentiable op."""
    x = _astensor(x)
    out = x.data[idx]
    out = np.array(out)  # decouple from the parent buffer

    def bw(g):
        dx = np.zeros_like(x.data)
        dx[idx] += g
        return (dx,)

    return record((x,), out, bw)


def sum_all(x: Tensor) -> Tensor:
    x = _astensor(x)
    shp = x.data.shape

    def bw(g):
        return (np.broadcast_to(g, shp),)

    return record((x,), x.data.sum(), bw)


def mean_all(x: Tensor) -> Tensor:
    x = _astensor(x)
    shp = x.data.shape
    n = x.data.size

    def bw(g):
        return (np.broadcast_to(g / n, shp),)

    return record((x,), x.data.mean(), bw)


def relu(x: Tensor) -> Tensor:
    x = _astensor(x)
    out = np.maximum(x.data, 0.0)
    if _active_tape() is None:
        return Tensor(out)
    mask = x.data > 0.0  # subgradient at 0 is 0

    def bw(g):
        return (g * mask,)

    return record((x,), out, bw)


# ---------------------------------------------------------------------------
# convolution and pooling
# ---------------------------------------------------------------------------


def _im2col(xp: np.ndarray, kh: int, kw: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Patch matrix of shape (C*kh*kw, N*ho*wo).

    Built row by row from strided slices of the padded input: each row copy
    is nearly contiguous, which is what keeps convolution memory-bound work
    fast; the actual arithmetic is a single GEMM against this matrix.
    """
    n, c, _, _ = xp.shape
    he = stride * (ho - 1) + 1
    we = stride * (wo - 1) + 1
    cols = np.empty((c * kh * kw, n, ho, wo))
    idx = 0
    for ci in range(c):
        for i in range(kh):
            for j in range(kw):
                cols[idx] = xp[:, ci, i:i + he:stride, j:j + we:stride]
                idx += 1
    return cols.reshape(c * kh * kw, n * ho * wo)


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation over an (N,C,H,W) batch with zero padding.

    Output spatial size is floor((H + 2*padding - kh)/stride) + 1 per axis.
    """
    x, kernel = _astensor(x), _astensor(kernel)
    xv, kv = x.data, kernel.data
    if xv.ndim != 4:
        raise ShapeError(f"conv2d: input must be rank 4 (N,C,H,W), got rank {xv.ndim}")
    if kv.ndim != 4:
        raise ShapeError(f"conv2d: kernel must be rank 4 (K,C,kh,kw), got rank {kv.ndim}")
    n, c, h, w = xv.shape
    k, ck, kh, kw = kv.shape
    if ck != c:
        raise ShapeError(f"conv2d: kernel axis 1 (in-channels) is {ck}, input axis 1 has {c}")
    if stride < 1:
        raise UsageError(f"conv2d: stride must be >= 1, got {stride}")
    if padding < 0:
        raise UsageError(f"conv2d: padding must be >= 0, got {padding}")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded input axis 2 ({hp})")
    if kw > wp:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded input axis 3 ({wp})")
    if bias is not None:
        bias = _astensor(bias)
        if bias.data.shape != (k,):
            raise ShapeError(f"conv2d: bias axis 0 must be ({k},), got {bias.data.shape}")

    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if padding:
        xp = np.zeros((n, c, hp, wp))
        xp[:, :, padding:padding + h, padding:padding + w] = xv
    else:
        xp = xv
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    wmat = kv.reshape(k, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(k, n, ho, wo).transpose(1, 0, 2, 3))
    if _active_tape() is None:
        return Tensor(out)

    def bw(g):
        gk = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(k, -1)
        dkernel = (gk @ cols.T).reshape(kv.shape)
        # dx only when someone upstream can use it (x taped or a grad leaf)
        dx = None
        if x.requires_grad or x._tape is not None:
            dx = _conv_input_grad(g, kv, stride, padding, h, w)
        if bias is not None:
            return (dx, dkernel, gk.sum(axis=1))
        return (dx, dkernel)

    inputs = (x, kernel) if bias is None else (x, kernel, bias)
    return record(inputs, out, bw)


def _conv_input_grad(g: np.ndarray, kv: np.ndarray, stride: int, padding: int,
                     h: int, w: int) -> np.ndarray:
    """Adjoint of conv2d w.r.t. its input as one GEMM.

    The output gradient is stride-dilated and zero-framed, then correlated
    with the flipped, channel-transposed kernel; this touches each buffer
    once instead of re-accumulating the image per kernel offset.
    """
    n, k, ho, wo = g.shape
    _, c, kh, kw = kv.shape
    lh = (ho - 1) * stride + 1
    lw = (wo - 1) * stride + 1
    gpad = np.zeros((n, k, lh + 2 * (kh - 1), lw + 2 * (kw - 1)))
    gpad[:, :, kh - 1:kh - 1 + lh:stride, kw - 1:kw - 1 + lw:stride] = g
    oh = lh + kh - 1  # valid-correlation output size
    ow = lw + kw - 1
    cols_g = _im2col(gpad, kh, kw, 1, oh, ow)
    wflip = kv[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)      # (C, K, kh, kw)
    dxp_part = (wflip.reshape(c, -1) @ cols_g).reshape(c, n, oh, ow)
    hp, wp = h + 2 * padding, w + 2 * padding
    if (oh, ow) != (hp, wp):  # floor-discarded rows/cols never received grad
        full = np.zeros((c, n, hp, wp))
        full[:, :, :min(oh, hp), :min(ow, wp)] = dxp_part[:, :, :hp, :wp]
        dxp_part = full
    dxp = dxp_part[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(dxp.transpose(1, 0, 2, 3))


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor,
                running_mean: Tensor, running_var: Tensor,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over an (N,C,H,W) batch.

    Training mode normalizes by batch statistics and folds them into the
    running stats in place (momentum-weighted, unbiased variance). Eval
    mode normalizes by the running stats and never mutates them.
    """
    x = _astensor(x)
    xv = x.data
    if xv.ndim != 4:
        raise ShapeError(f"batchnorm2d: input must be rank 4 (N,C,H,W), got rank {xv.ndim}")
    c = xv.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.data.shape != (c,):
            raise ShapeError(
                f"batchnorm2d: {name} must have shape ({c},) to match axis 1 (channels), "
                f"got {t.data.shape}")

    gshape = (1, c, 1, 1)
    if training:
        m = xv.shape[0] * xv.shape[2] * xv.shape[3]
        mu = xv.mean(axis=(0, 2, 3))
        var = xv.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xv - mu.reshape(gshape)) * inv.reshape(gshape)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mu
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * unbiased
    else:
        inv = 1.0 / np.sqrt(running_var.data + eps)
        if _active_tape() is None:
            # inference fast path: fold the whole affine into scale/shift
            scale = gamma.data * inv
            shift = beta.data - running_mean.data * scale
            return Tensor(xv * scale.reshape(gshape) + shift.reshape(gshape))
        xhat = (xv - running_mean.data.reshape(gshape)) * inv.reshape(gshape)
    out = gamma.data.reshape(gshape) * xhat + beta.data.reshape(gshape)
    if _active_tape() is None:
        return Tensor(out)

    if training:
        def bw(g):
            gi = g * gamma.data.reshape(gshape)
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            mean_gi = gi.mean(axis=(0, 2, 3)).reshape(gshape)
            mean_gx = (gi * xhat).mean(axis=(0, 2, 3)).reshape(gshape)
            dx = inv.reshape(gshape) * (gi - mean_gi - xhat * mean_gx)
            return (dx, dgamma, dbeta)
    else:
        scale = (gamma.data * inv).reshape(gshape)

        def bw(g):
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            return (g * scale, dgamma, dbeta)

    return record((x, gamma, beta), out, bw)


def batchnorm2d_relu(x: Tensor, gamma: Tensor, beta: Tensor,
                     running_mean: Tensor, running_var: Tensor,
                     training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """relu(batchnorm2d(...)) as one op: same values, one less full-tensor pass.

    The hot path of every conv block; keeping it fused roughly halves the
    elementwise memory traffic per block on bandwidth-poor machines.
    """
    x = _astensor(x)
    xv = x.data
    if xv.ndim != 4:
        raise ShapeError(f"batchnorm2d_relu: input must be rank 4, got rank {xv.ndim}")
    c = xv.shape[1]
    for name, t in (("gamma", gamma), ("beta", beta),
                    ("running_mean", running_mean), ("running_var", running_var)):
        if t.data.shape != (c,):
            raise ShapeError(
                f"batchnorm2d_relu: {name} must have shape ({c},) to match axis 1 "
                f"(channels), got {t.data.shape}")
    gshape = (1, c, 1, 1)
    taped = _active_tape() is not None
    if training:
        m = xv.shape[0] * xv.shape[2] * xv.shape[3]
        mu = xv.mean(axis=(0, 2, 3))
        var = xv.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + eps)
        xhat = (xv - mu.reshape(gshape)) * inv.reshape(gshape)
        unbiased = var * (m / (m - 1)) if m > 1 else var
        running_mean.data[...] = (1.0 - momentum) * running_mean.data + momentum * mu
        running_var.data[...] = (1.0 - momentum) * running_var.data + momentum * unbiased
        pre = gamma.data.reshape(gshape) * xhat
        pre += beta.data.reshape(gshape)
    else:
        inv = 1.0 / np.sqrt(running_var.data + eps)
        scale = gamma.data * inv
        shift = beta.data - running_mean.data * scale
        if not taped:
            out = xv * scale.reshape(gshape)
            out += shift.reshape(gshape)
            return Tensor(np.maximum(out, 0.0, out=out))
        xhat = (xv - running_mean.data.reshape(gshape)) * inv.reshape(gshape)
        pre = gamma.data.reshape(gshape) * xhat
        pre += beta.data.reshape(gshape)
    mask = pre > 0.0
    out = np.maximum(pre, 0.0, out=pre)  # pre is ours; clobber in place
    if not taped:
        return Tensor(out)

    if training:
        def bw(g):
            gr = g * mask
            gi = gr * gamma.data.reshape(gshape)
            dbeta = gr.sum(axis=(0, 2, 3))
            dgamma = (gr * xhat).sum(axis=(0, 2, 3))
            mean_gi = gi.mean(axis=(0, 2, 3)).reshape(gshape)
            mean_gx = (gi * xhat).mean(axis=(0, 2, 3)).reshape(gshape)
            dx = inv.reshape(gshape) * (gi - mean_gi - xhat * mean_gx)
            return (dx, dgamma, dbeta)
    else:
        def bw(g):
            gr = g * mask
            dbeta = gr.sum(axis=(0, 2, 3))
            dgamma = (gr * xhat).sum(axis=(0, 2, 3))
            return (gr * (gamma.data * inv).reshape(gshape), dgamma, dbeta)

    return record((x, gamma, beta), out, bw)


def add_relu(a: Tensor, b: Tensor) -> Tensor:
    """relu(a + b) as one op (the residual join)."""
    a, b = _astensor(a), _astensor(b)
    if a.data.shape != b.data.shape:
        axis = _first_mismatch(a.data.shape, b.data.shape)
        raise ShapeError(f"add_relu: operands disagree on axis {axis}: "
                         f"{a.data.shape} vs {b.data.shape}")
    pre = a.data + b.data
    if _active_tape() is None:
        return Tensor(np.maximum(pre, 0.0, out=pre))
    mask = pre > 0.0
    out = np.maximum(pre, 0.0, out=pre)

    def bw(g):
        gr = g * mask
        return (gr, gr)

    return record((a, b), out, bw)


def _pool_windows(xv: np.ndarray, kernel: int, stride: int, ho: int, wo: int) -> np.ndarray:
    n, c, _, _ = xv.shape
    s0, s1, s2, s3 = xv.strides
    win = np.lib.stride_tricks.as_strided(
        xv,
        shape=(n, c, ho, wo, kernel, kernel),
        strides=(s0, s1, s2 * stride, s3 * stride, s2, s3),
        writeable=False,
    )
    return win.reshape(n, c, ho, wo, kernel * kernel)


def _pool_check(xv, kernel, stride, opname):
    if xv.ndim != 4:
        raise ShapeError(f"{opname}: input must be rank 4 (N,C,H,W), got rank {xv.ndim}")
    _, _, h, w = xv.shape
    if kernel > h:
        raise ShapeError(f"{opname}: window {kernel} exceeds input axis 2 ({h})")
    if kernel > w:
        raise ShapeError(f"{opname}: window {kernel} exceeds input axis 3 ({w})")
    if stride < 1:
        raise UsageError(f"{opname}: stride must be >= 1, got {stride}")


def maxpool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    """Max pooling; ties within a window resolve to the first element."""
    x = _astensor(x)
    stride = kernel if stride is None else stride
    xv = x.data
    _pool_check(xv, kernel, stride, "maxpool2d")
    n, c, h, w = xv.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = _pool_windows(xv, kernel, stride, ho, wo)
    am = win.argmax(axis=-1)  # first max on ties
    out = np.take_along_axis(win, am[..., None], axis=-1)[..., 0]
    if _active_tape() is None:
        return Tensor(out)

    def bw(g):
        dx = np.zeros_like(xv)
        di, dj = np.divmod(am, kernel)
        ni, ci, ai, bi = np.indices(am.shape)
        np.add.at(dx, (ni, ci, ai * stride + di, bi * stride + dj), g)
        return (dx,)

    return record((x,), out, bw)


def avgpool2d(x: Tensor, kernel: int, stride: int | None = None) -> Tensor:
    x = _astensor(x)
    stride = kernel if stride is None else stride
    xv = x.data
    _pool_check(xv, kernel, stride, "avgpool2d")
    n, c, h, w = xv.shape
    ho = (h - kernel) // stride + 1
    wo = (w - kernel) // stride + 1
    win = _pool_windows(xv, kernel, stride, ho, wo)
    out = win.mean(axis=-1)
    if _active_tape() is None:
        return Tensor(out)

    def bw(g):
        gk = g / (kernel * kernel)
        dx = np.zeros_like(xv)
        for i in range(kernel):
            for j in range(kernel):
                dx[:, :, i:i + stride * (ho - 1) + 1:stride,
                   j:j + stride * (wo - 1) + 1:stride] += gk
        return (dx,)

    return record((x,), out, bw)


# ---------------------------------------------------------------------------
# dense head and losses
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map: (N,F) @ (K,F)^T + (K,)."""
    x, weight = _astensor(x), _astensor(weight)
    xv, wv = x.data, weight.data
    if xv.ndim != 2:
        raise ShapeError(f"linear: input must be rank 2 (N,F), got rank {xv.ndim}")
    if wv.ndim != 2:
        raise ShapeError(f"linear: weight must be rank 2 (K,F), got rank {wv.ndim}")
    if xv.shape[1] != wv.shape[1]:
        raise ShapeError(
            f"linear: feature axis mismatch, input axis 1 is {xv.shape[1]} "
            f"but weight axis 1 is {wv.shape[1]}")
    if bias is not None:
        bias = _astensor(bias)
        if bias.data.shape != (wv.shape[0],):
            raise ShapeError(f"linear: bias must be ({wv.shape[0]},), got {bias.data.shape}")
    out = xv @ wv.T
    if bias is not None:
        out = out + bias.data
    if _active_tape() is None:
        return Tensor(out)

    def bw(g):
        dx = g @ wv
        dw = g.T @ xv
        if bias is not None:
            return (dx, dw, g.sum(axis=0))
        return (dx, dw)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return record(inputs, out, bw)


def softmax(x: Tensor) -> Tensor:
    """Row-wise softmax over the last axis; each row sums to 1."""
    x = _astensor(x)
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)
    if _active_tape() is None:
        return Tensor(out)

    def bw(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        return ((g - dot) * out,)

    return record((x,), out, bw)


def cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean over the batch of -log softmax(logits)[target]."""
    logits = _astensor(logits)
    lv = logits.data
    if lv.ndim != 2:
        raise ShapeError(f"cross_entropy: logits must be rank 2 (N,K), got rank {lv.ndim}")
    t = np.asarray(targets)
    n, k = lv.shape
    if t.shape != (n,):
        raise ShapeError(f"cross_entropy: targets must have shape ({n},), got {t.shape}")
    if not np.issubdtype(t.dtype, np.integer):
        raise UsageError("cross_entropy: targets must be integers")
    if t.min(initial=0) < 0 or t.max(initial=0) >= k:
        raise UsageError(f"cross_entropy: target out of range for {k} classes")
    mx = lv.max(axis=-1, keepdims=True)
    z = lv - mx
    lse = np.log(np.exp(z).sum(axis=-1)) + mx[:, 0]
    out = (lse - lv[np.arange(n), t]).mean()
    if _active_tape() is None:
        return Tensor(out)

    def bw(g):
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        p[np.arange(n), t] -= 1.0
        return ((float(g) / n) * p,)

    return record((logits,), out, bw)
