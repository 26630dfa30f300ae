"""
Channels-last 3-D convolution and max pooling with "same" padding.

Tensors are laid out (T, H, W, C). Kernels are odd in every axis and padded by
``k // 2``, so stride 1 preserves the grid; a stride ``s`` gives
``(E + 2*(k//2) - k) // s + 1`` positions along an axis of extent ``E``.
"""
from typing import Optional, Sequence, Tuple

import numpy as np

from ..errors import ArgumentError, ConfigError, ShapeError
from .instrument import count_macs
from .ops import _result
from .tensor import DArray

Triple = Tuple[int, int, int]


def _triple(v: Sequence[int], what: str) -> Triple:
    v = tuple(int(i) for i in v)
    if len(v) != 3 or any(i < 1 for i in v):
        raise ArgumentError(f"{what} must be three positive integers, got {v}")
    return v


def output_grid(grid: Sequence[int], kernel: Sequence[int], stride: Sequence[int]) -> Triple:
    """Grid produced by a same-padded window of ``kernel`` moved by ``stride``."""
    grid, kernel, stride = _triple(grid, 'grid'), _triple(kernel, 'kernel'), _triple(stride, 'stride')
    if any(k % 2 == 0 for k in kernel):
        raise ArgumentError(f"kernel extents must be odd for same padding, got {kernel}")
    if any(s > e for s, e in zip(stride, grid)):
        raise ConfigError(f"stride {stride} is larger than grid extent {grid}")
    return tuple((e + 2 * (k // 2) - k) // s + 1 for e, k, s in zip(grid, kernel, stride))


def _windows(out_grid: Triple, kernel: Triple, stride: Triple):
    """Yield (offset index, slice triple) for every kernel tap."""
    idx = 0
    for dt in range(kernel[0]):
        for dh in range(kernel[1]):
            for dw in range(kernel[2]):
                yield idx, (dt, dh, dw), tuple(
                    slice(d, d + s * (o - 1) + 1, s) for d, s, o in zip((dt, dh, dw), stride, out_grid))
                idx += 1


def grouped_conv3d(x: DArray, weight: DArray, groups: int = 1,
                   stride: Sequence[int] = (1, 1, 1), bias: Optional[DArray] = None) -> DArray:
    """
    Grouped convolution of a (T, H, W, C_in) tensor.

    Args:
        x: Input grid, channels last.
        weight: Kernel of shape (k_t, k_h, k_w, C_in / groups, C_out). Output
            channel ``o`` belongs to group ``o // (C_out / groups)``.
        groups: Channel groups; ``groups == C_in`` with one output per group is depthwise.
        stride: Step per axis.
        bias: Optional (C_out,) offset.

    Returns:
        (T', H', W', C_out) tensor.
    """
    if x.ndim != 4 or weight.ndim != 5:
        raise ShapeError(f"grouped_conv3d: expected (T,H,W,C) input and 5-D kernel, got {x.shape} and {weight.shape}")
    c_in, c_out = x.shape[3], weight.shape[4]
    if groups < 1 or c_in % groups or c_out % groups:
        raise ArgumentError(f"grouped_conv3d: channels {c_in}->{c_out} not divisible into {groups} groups")
    cin_g, cout_g = c_in // groups, c_out // groups
    if weight.shape[3] != cin_g:
        raise ShapeError(f"grouped_conv3d: kernel {weight.shape} expects {weight.shape[3]} inputs per group, "
                         f"input {x.shape} gives {cin_g}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"grouped_conv3d: bias {bias.shape} does not match {c_out} outputs")
    kernel = weight.shape[:3]
    stride = _triple(stride, 'stride')
    out_grid = output_grid(x.shape[:3], kernel, stride)
    pads = [k // 2 for k in kernel]
    count_macs('conv', int(np.prod(out_grid)) * int(np.prod(kernel)) * cin_g * c_out)

    xp = np.pad(x.data, [(p, p) for p in pads] + [(0, 0)])
    xg = xp.reshape(xp.shape[:3] + (groups, cin_g))
    wg = weight.data.reshape(kernel + (cin_g, groups, cout_g))
    out = np.zeros(out_grid + (groups, cout_g))
    for _, (dt, dh, dw), sl in _windows(out_grid, kernel, stride):
        out += np.einsum('thwgc,cgd->thwgd', xg[sl], wg[dt, dh, dw])
    out = out.reshape(out_grid + (c_out,))
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g5 = g.reshape(out_grid + (groups, cout_g))
        gxp = np.zeros_like(xg)
        gw = np.zeros_like(wg)
        for _, (dt, dh, dw), sl in _windows(out_grid, kernel, stride):
            gxp[sl] += np.einsum('thwgd,cgd->thwgc', g5, wg[dt, dh, dw])
            gw[dt, dh, dw] += np.einsum('thwgc,thwgd->cgd', xg[sl], g5)
        gx = gxp.reshape(xp.shape)[pads[0]:pads[0] + x.shape[0],
                                   pads[1]:pads[1] + x.shape[1],
                                   pads[2]:pads[2] + x.shape[2]]
        grads = (gx, gw.reshape(weight.shape))
        if bias is not None:
            grads += (g.reshape(-1, c_out).sum(axis=0),)
        return grads
    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _result('grouped_conv3d', out, inputs, backward)


def maxpool3d(x: DArray, kernel: Sequence[int], stride: Sequence[int]) -> DArray:
    """
    Same-padded max pooling over (T, H, W, C); padding never wins the max.

    With the same kernel and stride as a convolution the output grid matches
    that convolution's output grid.
    """
    if x.ndim != 4:
        raise ShapeError(f"maxpool3d: expected (T,H,W,C) input, got {x.shape}")
    kernel, stride = _triple(kernel, 'kernel'), _triple(stride, 'stride')
    out_grid = output_grid(x.shape[:3], kernel, stride)
    pads = [k // 2 for k in kernel]
    xp = np.pad(x.data, [(p, p) for p in pads] + [(0, 0)], constant_values=-np.inf)
    best = np.full(out_grid + (x.shape[3],), -np.inf)
    arg = np.zeros(best.shape, dtype=np.int64)
    for idx, _, sl in _windows(out_grid, kernel, stride):
        patch = xp[sl]
        better = patch > best
        best = np.where(better, patch, best)
        arg = np.where(better, idx, arg)

    def backward(g):
        gxp = np.zeros(xp.shape)
        for idx, _, sl in _windows(out_grid, kernel, stride):
            gxp[sl] += np.where(arg == idx, g, 0.0)
        return (gxp[pads[0]:pads[0] + x.shape[0],
                    pads[1]:pads[1] + x.shape[1],
                    pads[2]:pads[2] + x.shape[2]],)
    return _result('maxpool3d', best, (x,), backward)
