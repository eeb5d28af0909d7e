"""Volumetric convolution, transposed convolution, and trilinear upsampling.

Convolutions are evaluated as a loop over the ``k**3`` kernel offsets; each
offset contributes one GEMM between a strided view of the input and a
``(channels_in, channels_out)`` weight slice. This keeps peak memory bounded
by a couple of activation-sized buffers (no full im2col materialisation)
while still routing all arithmetic through BLAS, which matters on the small
CPU machines this package targets.

Weight layouts:

* ``conv3d``: ``(out_channels, in_channels, k, k, k)``
* ``conv_transpose3d``: ``(in_channels, out_channels, k, k, k)``

With these layouts the two operations are exact adjoints of each other for
the *same* weight array (stride ``s``, zero padding), i.e.
``<conv3d(x, w), y> == <x, conv_transpose3d(y, w)>``.
"""

from __future__ import annotations

from itertools import product

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, as_tensor, concat, make_result

__all__ = ["conv3d", "conv_transpose3d", "trilinear_upsample"]


def _triple(v, name: str) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise DimensionError(f"{name} must be an int or a triple, got {v!r}")
    return t


def _offset_views(stride, grid_extent, k):
    """Slices selecting, per kernel offset, the strided sample grid."""
    views = {}
    for i, j, l in product(range(k[0]), range(k[1]), range(k[2])):
        views[(i, j, l)] = (
            slice(i, i + stride[0] * (grid_extent[0] - 1) + 1, stride[0]),
            slice(j, j + stride[1] * (grid_extent[1] - 1) + 1, stride[1]),
            slice(l, l + stride[2] * (grid_extent[2] - 1) + 1, stride[2]),
        )
    return views


def _gather(x: np.ndarray, w: np.ndarray, stride, padding) -> np.ndarray:
    """Strided cross-correlation core. ``w`` rows index the source channels axis 1."""
    k = w.shape[2:]
    if padding != (0, 0, 0):
        x = np.pad(x, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
    for a in range(3):
        if x.shape[2 + a] < k[a]:
            raise DimensionError(
                f"input extent {x.shape[2:]} smaller than kernel {k} after padding"
            )
    out_extent = tuple((x.shape[2 + a] - k[a]) // stride[a] + 1 for a in range(3))
    acc = np.zeros((x.shape[0],) + out_extent + (w.shape[0],), dtype=x.dtype)
    for off, sl in _offset_views(stride, out_extent, k).items():
        view = x[:, :, sl[0], sl[1], sl[2]]
        acc += np.tensordot(view, w[:, :, off[0], off[1], off[2]], axes=([1], [1]))
    return np.ascontiguousarray(np.moveaxis(acc, -1, 1))


def _scatter(src: np.ndarray, w: np.ndarray, stride, out_extent=None) -> np.ndarray:
    """Adjoint of :func:`_gather`. ``w`` axis 0 indexes the source channels."""
    k = w.shape[2:]
    in_extent = src.shape[2:]
    if out_extent is None:
        out_extent = tuple((in_extent[a] - 1) * stride[a] + k[a] for a in range(3))
    acc = np.zeros((src.shape[0],) + tuple(out_extent) + (w.shape[1],), dtype=src.dtype)
    for off, sl in _offset_views(stride, in_extent, k).items():
        contrib = np.tensordot(src, w[:, :, off[0], off[1], off[2]], axes=([1], [0]))
        acc[:, sl[0], sl[1], sl[2], :] += contrib
    return np.ascontiguousarray(np.moveaxis(acc, -1, 1))


def _weight_grad(src: np.ndarray, grid: np.ndarray, stride, k) -> np.ndarray:
    """Per-offset correlation of ``src`` with strided views of ``grid``.

    Returns an array indexed ``(src_channels, grid_channels, k, k, k)``.
    """
    grid_extent = src.shape[2:]
    gw = np.empty((src.shape[1], grid.shape[1]) + tuple(k), dtype=src.dtype)
    for off, sl in _offset_views(stride, grid_extent, k).items():
        view = grid[:, :, sl[0], sl[1], sl[2]]
        gw[:, :, off[0], off[1], off[2]] = np.tensordot(
            src, view, axes=([0, 2, 3, 4], [0, 2, 3, 4])
        )
    return gw


def _check_conv_args(x, w, op: str) -> None:
    if x.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"{op} expects 5-d input and weight, got {x.shape} and {w.shape}")


def conv3d(x, weight, bias=None, stride=1, padding=0) -> Tensor:
    """3-d cross-correlation with zero padding.

    ``x``: ``(batch, in_channels, H, W, D)``; ``weight``:
    ``(out_channels, in_channels, k, k, k)``; optional ``bias``:
    ``(out_channels,)``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x.data, weight.data, "conv3d")
    if x.data.shape[1] != weight.data.shape[1]:
        raise DimensionError(
            f"conv3d channel mismatch: input has {x.data.shape[1]}, weight expects {weight.data.shape[1]}"
        )
    stride = _triple(stride, "stride")
    padding = _triple(padding, "padding")
    k = weight.data.shape[2:]

    out_data = _gather(x.data, weight.data, stride, padding)
    b = as_tensor(bias) if bias is not None else None
    if b is not None:
        out_data = out_data + b.data.reshape(1, -1, 1, 1, 1)

    def apply(g):
        if x.requires_grad:
            padded_extent = tuple(x.data.shape[2 + a] + 2 * padding[a] for a in range(3))
            gx_pad = _scatter(g, weight.data, stride, padded_extent)
            crop = tuple(slice(p, p + e) for p, e in zip(padding, x.data.shape[2:]))
            x.accumulate_grad(gx_pad[(slice(None), slice(None)) + crop])
        if weight.requires_grad:
            xp = x.data
            if padding != (0, 0, 0):
                xp = np.pad(xp, ((0, 0), (0, 0)) + tuple((p, p) for p in padding))
            weight.accumulate_grad(_weight_grad(g, xp, stride, k))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, weight) if b is None else (x, weight, b)
    return make_result(out_data, parents, apply, "conv3d")


def conv_transpose3d(x, weight, stride=2, bias=None) -> Tensor:
    """Strided transposed convolution (adjoint of :func:`conv3d`).

    ``x``: ``(batch, in_channels, H, W, D)``; ``weight``:
    ``(in_channels, out_channels, k, k, k)``. Output extent per axis is
    ``(extent - 1) * stride + k``.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    _check_conv_args(x.data, weight.data, "conv_transpose3d")
    if x.data.shape[1] != weight.data.shape[0]:
        raise DimensionError(
            f"conv_transpose3d channel mismatch: input has {x.data.shape[1]}, "
            f"weight expects {weight.data.shape[0]}"
        )
    stride = _triple(stride, "stride")
    k = weight.data.shape[2:]

    out_data = _scatter(x.data, weight.data, stride)
    b = as_tensor(bias) if bias is not None else None
    if b is not None:
        out_data = out_data + b.data.reshape(1, -1, 1, 1, 1)

    def apply(g):
        if x.requires_grad:
            x.accumulate_grad(_gather(g, weight.data, stride, (0, 0, 0)))
        if weight.requires_grad:
            weight.accumulate_grad(_weight_grad(x.data, g, stride, k))
        if b is not None and b.requires_grad:
            b.accumulate_grad(g.sum(axis=(0, 2, 3, 4)))

    parents = (x, weight) if b is None else (x, weight, b)
    return make_result(out_data, parents, apply, "conv_transpose3d")


def trilinear_upsample(x, scale: int = 2) -> Tensor:
    """Trilinear upsampling of ``(batch, channels, H, W, D)`` by an integer factor.

    Uses the half-voxel-centre convention: output sample ``o`` reads source
    coordinate ``(o + 0.5) / scale - 0.5`` with edge clamping. Interpolation
    is evaluated in lerp form ``a + w * (b - a)``, so constant fields are
    reproduced exactly.
    """
    x = as_tensor(x)
    if x.ndim != 5:
        raise DimensionError(f"trilinear_upsample expects a 5-d tensor, got {x.shape}")
    scale = int(scale)
    if scale < 1:
        raise DimensionError(f"scale must be >= 1, got {scale}")
    if scale == 1:
        return x
    out = x
    for axis in (2, 3, 4):
        out = _upsample_axis(out, axis, scale)
    return out


def _upsample_axis(x: Tensor, axis: int, scale: int) -> Tensor:
    n = x.shape[axis]

    def ax_slice(s):
        key = [slice(None)] * x.ndim
        key[axis] = s
        return tuple(key)

    edge = concat([x[ax_slice(slice(0, 1))], x, x[ax_slice(slice(n - 1, n))]], axis=axis)
    parts = []
    for r in range(scale):
        c = (r + 0.5) / scale - 0.5
        if c >= 0.0:
            lo, w = 1, c
        else:
            lo, w = 0, 1.0 + c
        left = edge[ax_slice(slice(lo, lo + n))]
        right = edge[ax_slice(slice(lo + 1, lo + 1 + n))]
        part = left + w * (right - left)
        shape = list(part.shape)
        shape.insert(axis + 1, 1)
        parts.append(part.reshape(tuple(shape)))
    stacked = concat(parts, axis=axis + 1)
    merged = list(x.shape)
    merged[axis] = n * scale
    return stacked.reshape(tuple(merged))
