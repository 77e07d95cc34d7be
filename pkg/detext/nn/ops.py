"""
Differentiable primitives for the DeText forward pass.

Ops take Tensors (or arrays, treated as constants) and return Tensors.
Elementwise binary ops accept a right operand that broadcasts over leading
axes only; that covers biases, positional tables and attention masks.
"""

import math
from typing import Optional, Sequence

import numpy as np
from scipy.special import erf

from detext.data.tokenizer import PAD_ID
from detext.errors import ShapeMismatchError, TokenRangeError
from detext.nn.tensor import ParameterTensor, Tensor, as_tensor, record

_SQRT_2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    tail = a.shape[a.ndim - b.ndim:] if b.ndim <= a.ndim else None
    if tail is None or any(y not in (x, 1) for x, y in zip(tail, b.shape)):
        raise ShapeMismatchError(f"{op}: cannot combine {a.shape} with {b.shape}")


# ============================================================================
# Embedding
# ============================================================================

def lookup(E: ParameterTensor, ids: np.ndarray) -> Tensor:
    """
    Gather embedding columns of E (d x V) for an id array.

    Returns ids.shape + (d,). PAD positions are zero and get no gradient.
    """
    ids = np.asarray(ids, dtype=np.int64)
    d, vocab = E.shape
    if ids.size and (ids.min() < 0 or ids.max() >= vocab):
        raise TokenRangeError(f"token id out of range [0, {vocab}) for {E.name}")
    keep = ids != PAD_ID
    out = np.where(keep[..., None], E.data.T[ids], 0).astype(E.dtype)

    def backward(g):
        g_t = np.zeros((vocab, d), dtype=g.dtype)
        np.add.at(g_t, ids[keep], g[keep])
        return (g_t.T,)

    return record(out, (E,), backward)


def embed_tokens(E: ParameterTensor, ids: Sequence[int]) -> Tensor:
    """d x m matrix whose column j is column ids[j] of E."""
    return transpose(lookup(E, np.asarray(ids, dtype=np.int64).reshape(-1)), (1, 0))


# ============================================================================
# Linear algebra
# ============================================================================

def dense(W: Tensor, b: Optional[Tensor], x: Tensor) -> Tensor:
    """Wx + b applied to the last axis of x; W is out x in."""
    x = as_tensor(x, W.dtype)
    if W.data.ndim != 2 or x.shape[-1:] != W.shape[1:]:
        raise ShapeMismatchError(f"dense: weight {W.shape} vs input {x.shape}")
    if b is not None and b.shape != W.shape[:1]:
        raise ShapeMismatchError(f"dense: bias {b.shape} vs weight {W.shape}")
    out = x.data @ W.data.T
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        gx = g @ W.data
        gW = g2.T @ x2
        gb = g2.sum(axis=0) if b is not None else None
        return (gW, gb, gx) if b is not None else (gW, gx)

    parents = (W, b, x) if b is not None else (W, x)
    return record(out, parents, backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched a @ b with identical leading axes."""
    if a.data.ndim != b.data.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: {a.shape} @ {b.shape}")
    out = a.data @ b.data

    def backward(g):
        return g @ np.swapaxes(b.data, -1, -2), np.swapaxes(a.data, -1, -2) @ g

    return record(out, (a, b), backward)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return record(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    original = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


# ============================================================================
# Elementwise arithmetic
# ============================================================================

def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "add")
    return record(a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, b.shape)))


def sub(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "sub")
    return record(a.data - b.data, (a, b), lambda g: (g, -_unbroadcast(g, b.shape)))


def mul(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a.dtype)
    _check_broadcast(a, b, "mul")

    def backward(g):
        return g * b.data, _unbroadcast(g * a.data, b.shape)

    return record(a.data * b.data, (a, b), backward)


def scale(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)
    return record(x.data * c, (x,), lambda g: (g * c,))


def neg(x: Tensor) -> Tensor:
    return scale(x, -1.0)


# ============================================================================
# Activations
# ============================================================================

def relu(x: Tensor) -> Tensor:
    return record(np.maximum(x.data, 0), (x,), lambda g: (g * (x.data > 0),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return record(y, (x,), lambda g: (g * (1 - y * y),))


def gelu(x: Tensor) -> Tensor:
    """Exact GELU: 0.5 x (1 + erf(x / sqrt 2))."""
    cdf = (0.5 * (1.0 + erf(x.data / _SQRT_2))).astype(x.dtype)
    y = x.data * cdf

    def backward(g):
        pdf = np.exp(-0.5 * x.data * x.data) * _INV_SQRT_2PI
        return (g * (cdf + x.data * pdf).astype(x.dtype),)

    return record(y, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return record(y, (x,), lambda g: (g * y * (1 - y),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    y = np.logaddexp(0, x.data).astype(x.dtype)
    return record(y, (x,), lambda g: (g * _stable_sigmoid(x.data),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Max-shifted softmax."""
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return record(y, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)

    return record(y, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then gain * x_hat + bias."""
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeMismatchError(f"layer_norm: gain {gain.shape} vs input {x.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=-1, keepdims=True) + eps)
    x_hat = centered * inv_std
    out = x_hat * gain.data + bias.data

    def backward(g):
        g_hat = g * gain.data
        gx = inv_std * (
            g_hat
            - g_hat.mean(axis=-1, keepdims=True)
            - x_hat * (g_hat * x_hat).mean(axis=-1, keepdims=True)
        )
        flat = g.reshape(-1, g.shape[-1])
        return gx, (flat * x_hat.reshape(flat.shape)).sum(axis=0), flat.sum(axis=0)

    return record(out.astype(x.dtype), (x, gain, bias), backward)


# ============================================================================
# Reductions and indexing
# ============================================================================

def sum_all(x: Tensor) -> Tensor:
    return record(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean_all(x: Tensor) -> Tensor:
    n = max(x.data.size, 1)
    return scale(sum_all(x), 1.0 / n)


def sum_axis(x: Tensor, axis: int) -> Tensor:
    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), x.shape).copy(),)

    return record(x.data.sum(axis=axis), (x,), backward)


def max_axis(x: Tensor, axis: int) -> Tensor:
    """Max over an axis; the gradient goes to the first maximal entry."""
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)
    y = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return record(y, (x,), backward)


def take(x: Tensor, indices: np.ndarray, axis: int = 0) -> Tensor:
    """Gather along an axis; indices may repeat."""
    indices = np.asarray(indices, dtype=np.int64)
    y = np.take(x.data, indices, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(np.moveaxis(gx, axis, 0), indices, np.moveaxis(g, axis, 0))
        return (gx,)

    return record(y, (x,), backward)


def select(x: Tensor, index: int, axis: int) -> Tensor:
    """x[..., index, ...] with the axis removed."""
    slicer = (slice(None),) * (axis % x.data.ndim) + (index,)

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[slicer] = g
        return (gx,)

    return record(x.data[slicer], (x,), backward)


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = list(xs)
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), backward)


def unfold_windows(x: Tensor, width: int) -> Tensor:
    """
    Sliding windows along the sequence axis.

    x is (..., m, d) with m >= width; the result is (..., m - width + 1, width * d),
    each row the concatenation of `width` consecutive token vectors.
    """
    m, d = x.shape[-2], x.shape[-1]
    if m < width:
        raise ShapeMismatchError(f"unfold_windows: sequence length {m} < window {width}")
    n = m - width + 1
    y = np.concatenate([x.data[..., k:k + n, :] for k in range(width)], axis=-1)

    def backward(g):
        gx = np.zeros_like(x.data)
        for k in range(width):
            gx[..., k:k + n, :] += g[..., k * d:(k + 1) * d]
        return (gx,)

    return record(y, (x,), backward)


# ============================================================================
# Similarity
# ============================================================================

def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """Row-wise cosine over the last axis; 0 where either norm is 0."""
    if u.shape != v.shape:
        raise ShapeMismatchError(f"cosine: {u.shape} vs {v.shape}")
    dot = (u.data * v.data).sum(axis=-1)
    nu = np.sqrt((u.data * u.data).sum(axis=-1))
    nv = np.sqrt((v.data * v.data).sum(axis=-1))
    denom = nu * nv
    valid = denom > 0
    safe = np.where(valid, denom, 1)
    y = np.where(valid, dot / safe, 0).astype(u.dtype)

    def backward(g):
        gv_ = np.where(valid, g / safe, 0)[..., None]
        nu2 = np.where(valid, nu * nu, 1)[..., None]
        nv2 = np.where(valid, nv * nv, 1)[..., None]
        yy = y[..., None]
        gu = gv_ * v.data - (np.where(valid, g, 0)[..., None] * yy) * u.data / nu2
        gv = gv_ * u.data - (np.where(valid, g, 0)[..., None] * yy) * v.data / nv2
        return gu.astype(u.dtype), gv.astype(v.dtype)

    return record(y, (u, v), backward)
