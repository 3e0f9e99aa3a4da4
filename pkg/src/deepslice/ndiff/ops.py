"""Differentiable primitives used by the RDN-family networks.

Every op takes and returns :class:`Tensor` objects and registers an exact
analytic backward. Batched inputs ``(N, C, *spatial)`` are the norm;
``conv2d``/``conv3d`` also accept a single unbatched ``(C, *spatial)`` sample.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from ..errors import NonDivisibleChannels, NonOddKernel, ShapeMismatch
from .tensor import Tensor, as_tensor, result


def _convnd(x: Tensor, w: Tensor, b: Tensor | None, stride: int, padding: int, nd: int) -> Tensor:
    if w.ndim != nd + 2:
        raise ShapeMismatch(f"weight must have {nd + 2} dims, got shape {w.shape}")
    unbatched = x.ndim == nd + 1
    if not unbatched and x.ndim != nd + 2:
        raise ShapeMismatch(f"input must have {nd + 1} or {nd + 2} dims, got shape {x.shape}")
    xd = x.data[None] if unbatched else x.data
    cout, cin = w.shape[:2]
    ksize = w.shape[2:]
    if any(k % 2 == 0 for k in ksize):
        raise NonOddKernel(f"kernel extents must be odd, got {ksize}")
    if xd.shape[1] != cin:
        raise ShapeMismatch(f"input has {xd.shape[1]} channels, weight expects {cin}")
    if b is not None and b.shape != (cout,):
        raise ShapeMismatch(f"bias shape {b.shape} != ({cout},)")
    if stride < 1 or padding < 0:
        raise ShapeMismatch("stride must be >= 1 and padding >= 0")
    n = xd.shape[0]
    spatial = xd.shape[2:]
    if any(s + 2 * padding < k for s, k in zip(spatial, ksize)):
        raise ShapeMismatch(f"input {spatial} too small for kernel {ksize} with padding {padding}")

    dtype = np.result_type(xd.dtype, w.data.dtype)
    xp = np.pad(xd, [(0, 0), (0, 0)] + [(padding, padding)] * nd) if padding else xd
    out_sp = tuple((s + 2 * padding - k) // stride + 1 for s, k in zip(spatial, ksize))
    npos = math.prod(out_sp)
    kvol = math.prod(ksize)
    offsets = list(np.ndindex(*ksize))

    def window(offs):
        return (slice(None), slice(None)) + tuple(
            slice(o, o + stride * (m - 1) + 1, stride) for o, m in zip(offs, out_sp)
        )

    # columns laid out (C, *K, N, *out): each kernel tap is one strided block copy
    xt = xp.transpose((1, 0) + tuple(range(2, 2 + nd)))
    cols = np.empty((cin,) + ksize + (n,) + out_sp, dtype=dtype)
    for offs in offsets:
        cols[(slice(None),) + offs] = xt[window(offs)]
    cols = cols.reshape(cin * kvol, n * npos)
    wmat = w.data.reshape(cout, cin * kvol).astype(dtype, copy=False)
    out = wmat @ cols
    if b is not None:
        out += b.data.astype(dtype, copy=False)[:, None]
    chan_first = (1, 0) + tuple(range(2, 2 + nd))
    out = np.ascontiguousarray(out.reshape((cout, n) + out_sp).transpose(chan_first))
    if unbatched:
        out = out[0]

    def backward(g: np.ndarray) -> None:
        gb = g[None] if unbatched else g
        gmat = np.ascontiguousarray(gb.transpose(chan_first)).reshape(cout, n * npos)
        if w.requires_grad:
            w.accumulate((gmat @ cols.T).reshape(w.shape))
        if b is not None and b.requires_grad:
            b.accumulate(gmat.sum(axis=1))
        if x.requires_grad:
            dcols = (wmat.T @ gmat).reshape((cin,) + ksize + (n,) + out_sp)
            dxt = np.zeros((cin, n) + xp.shape[2:], dtype=dtype)
            for offs in offsets:
                dxt[window(offs)] += dcols[(slice(None),) + offs]
            if padding:
                dxt = dxt[(slice(None), slice(None)) + (slice(padding, -padding),) * nd]
            dx = np.ascontiguousarray(dxt.transpose(chan_first))
            x.accumulate(dx[0] if unbatched else dx)

    parents = (x, w) if b is None else (x, w, b)
    return result(out, parents, backward)


def conv2d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation; ``H' = (H + 2p - kh) // stride + 1``."""
    return _convnd(as_tensor(x), as_tensor(weight), None if bias is None else as_tensor(bias), stride, padding, 2)


def conv3d(x, weight, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """3D analogue of :func:`conv2d`."""
    return _convnd(as_tensor(x), as_tensor(weight), None if bias is None else as_tensor(bias), stride, padding, 3)


def subpixel_upsample_axis(x, k: int, axis: int = -1, channel_axis: int = 1) -> Tensor:
    """Pixel shuffle along a single spatial axis.

    Output channel ``g`` at position ``a*k + r`` reads input channel
    ``g*k + r`` at position ``a``. The channel axis is the one just before
    the spatial axes, so ``axis`` must index a spatial axis.
    """
    x = as_tensor(x)
    ax = axis % x.ndim
    cax = channel_axis % x.ndim
    if ax <= cax:
        raise ShapeMismatch(f"axis {axis} is not a spatial axis of shape {x.shape}")
    ck = x.shape[cax]
    if k < 1 or ck % k:
        raise NonDivisibleChannels(f"{ck} channels not divisible by k={k}")
    c = ck // k
    lead = x.shape[:cax]
    spatial = x.shape[cax + 1 :]
    split = x.data.reshape(lead + (c, k) + spatial)
    # spatial axis `ax` of x sits at ax+1 in `split`; park the residue right after it
    moved = np.moveaxis(split, cax + 1, ax + 1)
    out_shape = list(x.shape)
    out_shape[cax] = c
    out_shape[ax] *= k
    out = np.ascontiguousarray(moved).reshape(out_shape)

    def backward(g: np.ndarray) -> None:
        gs = g.reshape(moved.shape)
        x.accumulate(np.ascontiguousarray(np.moveaxis(gs, ax + 1, cax + 1)).reshape(x.shape))

    return result(out, (x,), backward)


def subpixel_downsample_axis(x: np.ndarray, k: int, axis: int = -1, channel_axis: int = 1) -> np.ndarray:
    """Inverse gather of :func:`subpixel_upsample_axis` on plain arrays."""
    ax = axis % x.ndim
    cax = channel_axis % x.ndim
    shape = list(x.shape)
    if shape[ax] % k:
        raise NonDivisibleChannels(f"extent {shape[ax]} not divisible by k={k}")
    split_shape = shape[:ax] + [shape[ax] // k, k] + shape[ax + 1 :]
    split = x.reshape(split_shape)
    back = np.moveaxis(split, ax + 1, cax + 1)
    out_shape = list(back.shape)
    out_shape[cax : cax + 2] = [out_shape[cax] * out_shape[cax + 1]]
    return np.ascontiguousarray(back).reshape(out_shape)


def linear_map_axis(x, matrix: np.ndarray, axis: int) -> Tensor:
    """Apply a fixed matrix along one axis: ``out[..., i, ...] = sum_j M[i, j] x[..., j, ...]``.

    Used for the parameter-free skip paths (interpolation along the sparse
    axis, channel selection and averaging).
    """
    x = as_tensor(x)
    ax = axis % x.ndim
    m = np.asarray(matrix, dtype=x.dtype)
    if m.ndim != 2 or m.shape[1] != x.shape[ax]:
        raise ShapeMismatch(f"matrix {m.shape} incompatible with extent {x.shape[ax]} on axis {axis}")
    out = np.ascontiguousarray(np.moveaxis(np.tensordot(x.data, m, axes=([ax], [1])), -1, ax))

    def backward(g: np.ndarray) -> None:
        x.accumulate(np.moveaxis(np.tensordot(g, m, axes=([ax], [0])), -1, ax))

    return result(out, (x,), backward)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * mask)

    return result(out, (x,), backward)


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}")
    out = a.data + b.data

    def backward(g: np.ndarray) -> None:
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g)

    return result(out, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.dtype.type(c)
    out = x.data * c

    def backward(g: np.ndarray) -> None:
        x.accumulate(g * c)

    return result(out, (x,), backward)


def concat_channels(tensors: Sequence, axis: int = 1) -> Tensor:
    """Stack along the channel axis (axis 1 of batched tensors)."""
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeMismatch("concat_channels needs at least one tensor")
    ref = ts[0].shape
    ax = axis % len(ref)
    for t in ts[1:]:
        if t.ndim != len(ref) or t.shape[:ax] != ref[:ax] or t.shape[ax + 1 :] != ref[ax + 1 :]:
            raise ShapeMismatch(f"concat_channels: {t.shape} incompatible with {ref}")
    out = np.concatenate([t.data for t in ts], axis=ax)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def backward(g: np.ndarray) -> None:
        for t, lo, hi in zip(ts, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[ax] = slice(lo, hi)
                t.accumulate(g[tuple(idx)])

    return result(out, tuple(ts), backward)


def l1_loss(pred, target) -> Tensor:
    """Mean absolute difference; the subgradient of ``|0|`` is taken as 0."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"l1_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data.astype(pred.dtype, copy=False)
    n = diff.size
    out = np.asarray(np.abs(diff).mean(dtype=np.float64), dtype=pred.dtype)

    def backward(g: np.ndarray) -> None:
        s = np.sign(diff) * (g / n)
        if pred.requires_grad:
            pred.accumulate(s.astype(pred.dtype, copy=False))
        if target.requires_grad:
            target.accumulate((-s).astype(target.dtype, copy=False))

    return result(out, (pred, target), backward)
