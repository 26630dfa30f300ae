"""
Differentiable ops over DArray.

Every op computes its forward value with numpy, records an adjoint closure on
the active tape and returns a new DArray. Broadcasting is limited to leading
batch dimensions; any other mismatch raises ShapeError.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf, expit

from ..errors import ArgumentError, ContractViolation, ShapeError
from .instrument import count_macs
from .tensor import Backward, DArray, Tape

_SQRT_2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _result(op: str, data: np.ndarray, inputs: Sequence[DArray], backward: Backward) -> DArray:
    requires_grad = any(x.requires_grad for x in inputs)
    out = DArray.wrap(data, requires_grad=requires_grad)
    tape = Tape.current()
    if requires_grad and tape is not None:
        tape.record(op, inputs, out, backward)
    return out


def _as_darray(x: Union[DArray, np.ndarray, float]) -> DArray:
    return x if isinstance(x, DArray) else DArray(x)


def _leading_broadcast(a: Tuple[int, ...], b: Tuple[int, ...], op: str) -> Tuple[int, ...]:
    if a == b:
        return a
    longer, shorter = (a, b) if len(a) >= len(b) else (b, a)
    if longer[len(longer) - len(shorter):] == shorter:
        return longer
    raise ShapeError(f"{op}: shapes {a} and {b} only broadcast over leading batch dims")


def _unbroadcast(g: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a: DArray, b: DArray) -> DArray:
    a, b = _as_darray(a), _as_darray(b)
    _leading_broadcast(a.shape, b.shape, 'add')

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _result('add', a.data + b.data, (a, b), backward)


def sub(a: DArray, b: DArray) -> DArray:
    a, b = _as_darray(a), _as_darray(b)
    _leading_broadcast(a.shape, b.shape, 'sub')

    def backward(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)
    return _result('sub', a.data - b.data, (a, b), backward)


def mul(a: DArray, b: DArray) -> DArray:
    a, b = _as_darray(a), _as_darray(b)
    _leading_broadcast(a.shape, b.shape, 'mul')

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
    return _result('mul', a.data * b.data, (a, b), backward)


def scale(x: DArray, s: float) -> DArray:
    def backward(g):
        return (g * s,)
    return _result('scale', x.data * s, (x,), backward)


def matmul(a: DArray, b: DArray) -> DArray:
    """Batched product over the last two axes; batch dims follow numpy broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot contract shapes {a.shape} and {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast")
    p, q, r = a.shape[-2], a.shape[-1], b.shape[-1]
    count_macs('matmul', int(np.prod(batch, dtype=np.int64)) * p * q * r)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _result('matmul', np.matmul(a.data, b.data), (a, b), backward)


def linear(x: DArray, weight: DArray, bias: Optional[DArray] = None) -> DArray:
    """Fully connected layer ``x @ weight + bias`` with weight stored (in, out)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    rows = x.size // x.shape[-1]
    count_macs('linear', rows * weight.shape[0] * weight.shape[1])
    x2 = x.data.reshape(rows, weight.shape[0])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data
    out_shape = x.shape[:-1] + (weight.shape[1],)

    def backward(g):
        g2 = g.reshape(rows, weight.shape[1])
        gx = (g2 @ weight.data.T).reshape(x.shape)
        gw = x2.T @ g2
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result('linear', out.reshape(out_shape), inputs, backward)


def sigmoid(x: DArray) -> DArray:
    y = expit(x.data)

    def backward(g):
        return (g * y * (1.0 - y),)
    return _result('sigmoid', y, (x,), backward)


def gelu(x: DArray) -> DArray:
    """Exact (erf) GELU."""
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT_2))

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)
    return _result('gelu', x.data * cdf, (x,), backward)


def masked_softmax(x: DArray, mask: np.ndarray, axis: int = -1) -> DArray:
    """
    Softmax over the unmasked entries of each slice along ``axis``.

    Masked entries come out exactly 0 and receive no gradient. Every slice
    needs at least one unmasked entry.
    """
    mask = np.asarray(mask.data if isinstance(mask, DArray) else mask, dtype=bool)
    if mask.shape != x.shape:
        raise ShapeError(f"masked_softmax: mask {mask.shape} does not match input {x.shape}")
    if not np.all(mask.any(axis=axis)):
        raise ContractViolation("masked_softmax: a slice has no unmasked entry")
    shifted = np.where(mask, x.data, -np.inf)
    shifted = shifted - shifted.max(axis=axis, keepdims=True)
    e = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)
    return _result('masked_softmax', y, (x,), backward)


def softmax(x: DArray, axis: int = -1) -> DArray:
    return masked_softmax(x, np.ones(x.shape, dtype=bool), axis=axis)


def layernorm(x: DArray, gamma: DArray, beta: DArray, eps: float = 1e-6) -> DArray:
    """Normalize over the last axis, then apply the affine gamma/beta."""
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"layernorm: gamma {gamma.shape}/beta {beta.shape} do not match width {c}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centred = x.data - mu
    inv_std = 1.0 / np.sqrt((centred * centred).mean(axis=-1, keepdims=True) + eps)
    xhat = centred * inv_std

    def backward(g):
        gxhat = g * gamma.data
        gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        flat_g = g.reshape(-1, c)
        return gx, (flat_g * xhat.reshape(-1, c)).sum(axis=0), flat_g.sum(axis=0)
    return _result('layernorm', xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def mean(x: DArray, axis: Optional[int] = None, keepdims: bool = False) -> DArray:
    count = x.size if axis is None else x.shape[axis]
    out = np.asarray(x.data.mean(axis=axis, keepdims=keepdims))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)
    return _result('mean', out, (x,), backward)


def amax(x: DArray, axis: int) -> DArray:
    """Maximum along ``axis``; the gradient goes to the first maximal entry."""
    idx = np.expand_dims(np.argmax(x.data, axis=axis), axis)
    out = np.take_along_axis(x.data, idx, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)
    return _result('amax', np.squeeze(out, axis=axis), (x,), backward)


def reshape(x: DArray, shape: Sequence[int]) -> DArray:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def backward(g):
        return (g.reshape(x.shape),)
    return _result('reshape', out, (x,), backward)


def transpose(x: DArray, axes: Optional[Sequence[int]] = None) -> DArray:
    axes = tuple(reversed(range(x.ndim))) if axes is None else tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)
    return _result('transpose', np.transpose(x.data, axes), (x,), backward)


def take(x: DArray, indices: np.ndarray, name: str = 'take') -> DArray:
    """Gather rows of ``x`` along axis 0; output shape is ``indices.shape + x.shape[1:]``."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= x.shape[0]):
        raise ArgumentError(f"{name}: index out of range for axis of length {x.shape[0]}")

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, indices.reshape(-1), g.reshape((-1,) + x.shape[1:]))
        return (gx,)
    return _result(name, x.data[indices], (x,), backward)


def concat(xs: Sequence[DArray], axis: int = 0) -> DArray:
    xs = list(xs)
    if len(xs) == 1:
        return xs[0]
    splits = np.cumsum([x.shape[axis] for x in xs])[:-1]
    try:
        out = np.concatenate([x.data for x in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[x.shape for x in xs]} along axis {axis}")

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))
    return _result('concat', out, xs, backward)


def log_softmax(x: DArray, axis: int = -1) -> DArray:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    y = shifted - lse

    def backward(g):
        return (g - np.exp(y) * g.sum(axis=axis, keepdims=True),)
    return _result('log_softmax', y, (x,), backward)


def cross_entropy(logits: DArray, labels: np.ndarray) -> DArray:
    """Mean softmax cross-entropy of (B, K) logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    logp = log_softmax(logits, axis=-1)
    picked = logp.data[np.arange(labels.size), labels]

    def backward(g):
        gx = np.zeros_like(logp.data)
        gx[np.arange(labels.size), labels] = -g / labels.size
        return (gx,)
    return _result('cross_entropy', np.asarray(-picked.mean()), (logp,), backward)


def topk_indices(values: np.ndarray, k: int, axis: int = -1) -> np.ndarray:
    """
    Indices of the ``k`` largest values along ``axis`` in descending rank.

    Ties go to the lower index.
    """
    values = np.asarray(values.data if isinstance(values, DArray) else values)
    n = values.shape[axis]
    if k < 0 or k > n:
        raise ArgumentError(f"topk_indices: k={k} outside [0, {n}]")
    order = np.argsort(-values, axis=axis, kind='stable')
    return np.take(order, np.arange(k), axis=axis)
