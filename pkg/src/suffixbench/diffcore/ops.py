"""Differentiable operators over :class:`Tensor`.

Every op computes its forward value with numpy and registers a closure that
maps the upstream gradient to one gradient per parent.
"""

from __future__ import annotations

import logging
from collections import Counter

import numpy as np

from .tensor import ShapeError, Tensor, get_dtype, make_node

logger = logging.getLogger(__name__)

#: Counts degenerate-input events such as losses over an all-zero mask.
warning_counter: Counter = Counter()


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


# --- elementwise binary ---------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), back, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), back, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), back, "mul")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes, leading axes broadcast."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    if b.ndim == 2:
        # activations times a weight matrix: one flat GEMM
        lead = a.shape[:-1]
        a2 = a.data.reshape(-1, a.shape[-1])
        out = (a2 @ b.data).reshape(lead + (b.shape[1],))

        def back(g):
            g2 = g.reshape(-1, g.shape[-1])
            ga = (g2 @ b.data.T).reshape(a.shape) if a.requires_grad else None
            gb = a2.T @ g2 if b.requires_grad else None
            return ga, gb

        return make_node(out, (a, b), back, "matmul")

    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_node(out, (a, b), back, "matmul")


# --- elementwise unary ----------------------------------------------------

def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return make_node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    keep = a.data > 0
    return make_node(a.data * keep, (a,), lambda g: (g * keep,), "relu")


def softplus(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))
    sig = 0.5 * (np.tanh(0.5 * x) + 1.0)
    return make_node(out, (a,), lambda g: (g * sig,), "softplus")


def log_sigmoid(a) -> Tensor:
    """``log(sigmoid(a))`` without overflow for large negative inputs."""
    return neg(softplus(neg(a)))


# --- reductions and shape ---------------------------------------------------

def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make_node(np.asarray(out), (a,), back, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),), "transpose")


def expand(a, shape) -> Tensor:
    """Broadcast ``a`` to ``shape`` (e.g. a per-event scalar to a latent vector)."""
    a = as_tensor(a)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"expand: cannot broadcast {a.shape} to {tuple(shape)}") from None
    return make_node(out, (a,), lambda g: (_unbroadcast(g, a.shape),), "expand")


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    basic = isinstance(index, (slice, int)) or (
        isinstance(index, tuple) and all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in index)
    )

    def back(g):
        full = np.zeros_like(a.data)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node(np.ascontiguousarray(out), (a,), back, "slice")


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in tensors]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_node(out, tuple(tensors), back, "concat")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in tensors}
    if len(shapes) != 1:
        raise ShapeError(f"stack: shapes differ {sorted(shapes)}")
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.moveaxis(g, axis, 0))

    return make_node(out, tuple(tensors), back, "stack")


# --- normalisation and attention helpers ------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_node(out, (a,), back, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def back(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return make_node(out, (a,), back, "log_softmax")


def layer_norm(a, gamma, beta, eps: float = 1e-5) -> Tensor:
    a, gamma, beta = as_tensor(a), as_tensor(gamma), as_tensor(beta)
    width = a.shape[-1]
    if gamma.shape != (width,) or beta.shape != (width,):
        raise ShapeError(f"layer_norm: input {a.shape} with gamma {gamma.shape} and beta {beta.shape}")
    mu = a.data.mean(axis=-1, keepdims=True)
    centred = a.data - mu
    inv = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        lead = tuple(range(g.ndim - 1))
        gx = None
        if a.requires_grad:
            dxhat = g * gamma.data
            gx = inv / width * (
                width * dxhat
                - dxhat.sum(axis=-1, keepdims=True)
                - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
            )
        return gx, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return make_node(out, (a, gamma, beta), back, "layer_norm")


def dropout(a, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; the identity at ``p == 0`` or outside training."""
    a = as_tensor(a)
    if not training or p == 0.0:
        return a
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    keep = (rng.random(a.shape) >= p).astype(a.data.dtype) / (1.0 - p)
    return make_node(a.data * keep, (a,), lambda g: (g * keep,), "dropout")


def embedding(indices: np.ndarray, weight) -> Tensor:
    """Row lookup, identical to ``one_hot(indices) @ weight``."""
    weight = as_tensor(weight)
    indices = np.asarray(indices, dtype=np.int64)
    if weight.ndim != 2:
        raise ShapeError(f"embedding: weight must be 2-D, got {weight.shape}")
    if indices.size and (indices.min() < 0 or indices.max() >= weight.shape[0]):
        raise ShapeError(f"embedding: index out of range for weight {weight.shape}")
    out = weight.data[indices]

    def back(g):
        onehot = np.eye(weight.shape[0], dtype=g.dtype)[indices.reshape(-1)]
        return (onehot.T @ g.reshape(-1, weight.shape[1]),)

    return make_node(out, (weight,), back, "embedding")


def causal_conv1d(x, weight, dilation: int = 1) -> Tensor:
    """Causal dilated convolution over the time axis.

    ``x`` is ``[B, n, C_in]``, ``weight`` is ``[k, C_in, C_out]``. Output
    position ``t`` reads input positions ``t - (k-1-j)*dilation`` for tap ``j``;
    positions before the sequence start are zeros.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 3 or x.shape[2] != weight.shape[1]:
        raise ShapeError(f"causal_conv1d: input {x.shape} incompatible with filter {weight.shape}")
    if dilation < 1:
        raise ValueError(f"causal_conv1d: dilation must be >= 1, got {dilation}")
    batch, n, _ = x.shape
    taps = weight.shape[0]
    shifts = [(taps - 1 - j) * dilation for j in range(taps)]
    out = np.zeros((batch, n, weight.shape[2]), dtype=x.data.dtype)
    for j, s in enumerate(shifts):
        if s < n:
            out[:, s:] += x.data[:, : n - s] @ weight.data[j]

    def back(g):
        gx = np.zeros_like(x.data) if x.requires_grad else None
        gw = np.zeros_like(weight.data) if weight.requires_grad else None
        for j, s in enumerate(shifts):
            if s >= n:
                continue
            if gx is not None:
                gx[:, : n - s] += g[:, s:] @ weight.data[j].T
            if gw is not None:
                gw[j] = x.data[:, : n - s].reshape(-1, x.shape[2]).T @ g[:, s:].reshape(-1, g.shape[2])
        return gx, gw

    return make_node(out, (x, weight), back, "causal_conv1d")


def lstm_cell(gates, h_prev, c_prev, keep: np.ndarray | None = None) -> Tensor:
    """Fused LSTM state update.

    ``gates`` holds the pre-activations ``[B, 4d]`` in (input, forget, cell,
    output) order. Returns ``concat([h, c], -1)`` of shape ``[B, 2d]``. Rows
    where ``keep`` is 0 carry ``h_prev``/``c_prev`` through unchanged, which
    freezes the state on padded steps.
    """
    gates, h_prev, c_prev = as_tensor(gates), as_tensor(h_prev), as_tensor(c_prev)
    d = c_prev.shape[-1]
    if gates.shape[-1] != 4 * d or h_prev.shape != c_prev.shape or gates.shape[:-1] != c_prev.shape[:-1]:
        raise ShapeError(f"lstm_cell: gates {gates.shape}, h {h_prev.shape}, c {c_prev.shape}")
    z = gates.data
    i = 0.5 * (np.tanh(0.5 * z[:, :d]) + 1.0)
    f = 0.5 * (np.tanh(0.5 * z[:, d : 2 * d]) + 1.0)
    g = np.tanh(z[:, 2 * d : 3 * d])
    o = 0.5 * (np.tanh(0.5 * z[:, 3 * d :]) + 1.0)
    c = f * c_prev.data + i * g
    tc = np.tanh(c)
    h = o * tc
    if keep is not None:
        keep = np.asarray(keep, dtype=z.dtype).reshape(-1, 1)
        h_out = keep * h + (1.0 - keep) * h_prev.data
        c_out = keep * c + (1.0 - keep) * c_prev.data
    else:
        h_out, c_out = h, c

    def back(grad):
        gh, gc = grad[:, :d], grad[:, d:]
        if keep is not None:
            gh_new, gc_new = gh * keep, gc * keep
            gh_carry, gc_carry = gh * (1.0 - keep), gc * (1.0 - keep)
        else:
            gh_new, gc_new = gh, gc
            gh_carry = gc_carry = 0.0
        dc = gc_new + gh_new * o * (1.0 - tc * tc)
        dz = np.concatenate(
            [dc * g * i * (1.0 - i), dc * c_prev.data * f * (1.0 - f), dc * i * (1.0 - g * g), gh_new * tc * o * (1.0 - o)],
            axis=-1,
        )
        return dz, gh_carry + np.zeros_like(gh), dc * f + gc_carry

    return make_node(np.concatenate([h_out, c_out], axis=-1), (gates, h_prev, c_prev), back, "lstm_cell")


# --- losses -------------------------------------------------------------------

def cross_entropy_masked(logits, targets: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean of ``-log softmax(logits)[target]`` over positions where ``mask == 1``.

    Masked-out positions contribute exactly zero. An all-zero mask yields a
    zero loss and bumps ``warning_counter['cross_entropy_empty_mask']``.
    """
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.shape[:-1] != targets.shape or targets.shape != np.shape(mask):
        raise ShapeError(
            f"cross_entropy_masked: logits {logits.shape}, targets {targets.shape}, mask {np.shape(mask)}"
        )
    mask = np.asarray(mask, dtype=logits.data.dtype)
    count = mask.sum()
    if count == 0:
        warning_counter["cross_entropy_empty_mask"] += 1
        logger.warning("cross_entropy_masked called with an all-zero mask")
    denom = max(float(count), 1.0)
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    picked = np.take_along_axis(logp, targets[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / denom

    def back(g):
        grad = np.exp(logp)
        np.put_along_axis(grad, targets[..., None], np.take_along_axis(grad, targets[..., None], -1) - 1.0, -1)
        return (grad * (mask / denom)[..., None] * g,)

    return make_node(np.asarray(loss, dtype=logits.data.dtype), (logits,), back, "cross_entropy_masked")


def mse_masked(pred, target: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean of ``(pred - target)**2`` over positions where ``mask == 1``."""
    pred = as_tensor(pred)
    target = np.asarray(target, dtype=pred.data.dtype)
    if pred.shape != target.shape or target.shape != np.shape(mask):
        raise ShapeError(f"mse_masked: pred {pred.shape}, target {target.shape}, mask {np.shape(mask)}")
    mask = np.asarray(mask, dtype=pred.data.dtype)
    count = mask.sum()
    if count == 0:
        warning_counter["mse_empty_mask"] += 1
        logger.warning("mse_masked called with an all-zero mask")
    denom = max(float(count), 1.0)
    diff = (pred.data - target) * mask
    loss = (diff * diff).sum() / denom
    return make_node(np.asarray(loss, dtype=pred.data.dtype), (pred,), lambda g: (2.0 * diff / denom * g,), "mse_masked")


def gumbel_softmax_sample(logits, tau: float, rng: np.random.Generator | None = None, noise=None) -> Tensor:
    """Relaxed one-hot sample ``softmax((logits + gumbel) / tau)``.

    Pass ``noise`` to fix the Gumbel perturbation; otherwise it is drawn
    from ``rng``.
    """
    if tau <= 0:
        raise ValueError(f"gumbel_softmax_sample: temperature must be > 0, got {tau}")
    logits = as_tensor(logits)
    if noise is None:
        u = rng.random(logits.shape)
        noise = -np.log(-np.log(np.clip(u, 1e-20, 1.0 - 1e-7)))
    return softmax(mul(add(logits, np.asarray(noise, dtype=get_dtype())), 1.0 / tau), axis=-1)


# --- operator sugar -------------------------------------------------------------

Tensor.__add__ = lambda self, other: add(self, other)
Tensor.__radd__ = lambda self, other: add(other, self)
Tensor.__sub__ = lambda self, other: sub(self, other)
Tensor.__rsub__ = lambda self, other: sub(other, self)
Tensor.__mul__ = lambda self, other: mul(self, other)
Tensor.__rmul__ = lambda self, other: mul(other, self)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, other: matmul(self, other)
Tensor.__getitem__ = lambda self, index: getitem(self, index)
Tensor.sum = lambda self, axis=None, keepdims=False: sum(self, axis, keepdims)
Tensor.mean = lambda self, axis=None, keepdims=False: mean(self, axis, keepdims)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)
