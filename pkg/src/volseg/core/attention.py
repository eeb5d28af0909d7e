"""Multi-head attention and volumetric window bookkeeping.

Attention masks are additive float arrays whose blocked entries hold the
large negative finite constant :data:`~volseg.core.tensor.MASK_FILL`; after
the softmax those positions carry effectively zero weight without ever
introducing non-finite values.
"""

from __future__ import annotations

import math
from itertools import product

import numpy as np

from ..errors import DimensionError
from .tensor import (
    MASK_FILL,
    Tensor,
    as_tensor,
    matmul,
    pad,
    permute,
    reshape,
    softmax,
)

__all__ = [
    "attention",
    "window_partition",
    "window_reverse",
    "shifted_window_mask",
    "relative_position_index",
]


def attention(q, k, v, num_heads: int, mask=None, bias=None) -> Tensor:
    """Scaled dot-product attention over ``(batch, tokens, dim)`` inputs.

    ``mask`` (additive, broadcastable to ``(batch, heads, tokens, tokens)``)
    and ``bias`` (e.g. relative position bias ``(heads, tokens, tokens)``)
    are added to the attention logits before the softmax.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.ndim != 3 or k.ndim != 3 or v.ndim != 3:
        raise DimensionError("attention expects (batch, tokens, dim) inputs")
    b, t, d = q.shape
    if d % num_heads:
        raise DimensionError(f"model dim {d} not divisible by {num_heads} heads")
    if k.shape != q.shape or v.shape != q.shape:
        raise DimensionError("attention inputs must share one shape")
    dh = d // num_heads

    def split(x):
        return permute(reshape(x, (b, t, num_heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(k), split(v)
    scores = matmul(qh, permute(kh, (0, 1, 3, 2))) * (1.0 / math.sqrt(dh))
    if bias is not None:
        scores = scores + bias
    if mask is not None:
        scores = scores + as_tensor(mask, dtype=scores.dtype)
    weights = softmax(scores, axis=-1)
    out = matmul(weights, vh)
    return reshape(permute(out, (0, 2, 1, 3)), (b, t, d))


def _pad_amounts(extents, window: int):
    return tuple((window - e % window) % window for e in extents)


def window_partition(x, window: int):
    """Split ``(batch, channels, H, W, D)`` into non-overlapping cubic windows.

    Extents are zero-padded up to multiples of ``window`` internally. Returns
    ``(windows, padded_extents)`` where ``windows`` has shape
    ``(batch * num_windows, window**3, channels)``.
    """
    x = as_tensor(x)
    if x.ndim != 5:
        raise DimensionError(f"window_partition expects a 5-d tensor, got {x.shape}")
    n, c = x.shape[0], x.shape[1]
    extents = x.shape[2:]
    pads = _pad_amounts(extents, window)
    if any(pads):
        x = pad(x, ((0, 0), (0, 0)) + tuple((0, p) for p in pads))
    pe = tuple(e + p for e, p in zip(extents, pads))
    blocks = tuple(e // window for e in pe)

    x = permute(x, (0, 2, 3, 4, 1))
    x = reshape(x, (n, blocks[0], window, blocks[1], window, blocks[2], window, c))
    x = permute(x, (0, 1, 3, 5, 2, 4, 6, 7))
    windows = reshape(x, (n * blocks[0] * blocks[1] * blocks[2], window**3, c))
    return windows, pe


def window_reverse(windows, window: int, padded_extents, out_shape) -> Tensor:
    """Inverse of :func:`window_partition`; crops internal padding away.

    ``out_shape`` is the original ``(batch, channels, H, W, D)`` shape.
    """
    windows = as_tensor(windows)
    n, c = out_shape[0], out_shape[1]
    blocks = tuple(e // window for e in padded_extents)
    x = reshape(windows, (n,) + blocks + (window, window, window, c))
    x = permute(x, (0, 1, 4, 2, 5, 3, 6, 7))
    x = reshape(x, (n,) + padded_extents + (c,))
    x = permute(x, (0, 4, 1, 2, 3))
    if padded_extents != tuple(out_shape[2:]):
        x = x[:, :, : out_shape[2], : out_shape[3], : out_shape[4]]
    return x


def shifted_window_mask(padded_extents, window: int, shift: int) -> np.ndarray:
    """Additive attention mask for cyclically shifted windows.

    Voxels are labelled by the region they came from before the shift; token
    pairs from different regions must not attend to each other. Returns a
    float32 array ``(num_windows, tokens, tokens)`` of ``0`` / ``MASK_FILL``.
    """
    if shift <= 0:
        raise DimensionError("shifted_window_mask needs a positive shift")
    region = np.zeros((1, 1) + tuple(padded_extents), dtype=np.float32)
    segments = (slice(0, -window), slice(-window, -shift), slice(-shift, None))
    label = 0
    for sh, sw, sd in product(segments, segments, segments):
        region[:, :, sh, sw, sd] = label
        label += 1
    ids, _ = window_partition(Tensor(region), window)
    ids = ids.data.reshape(ids.shape[0], -1)
    diff = ids[:, None, :] - ids[:, :, None]
    return np.where(diff != 0, np.float32(MASK_FILL), np.float32(0.0))


def relative_position_index(window: int) -> np.ndarray:
    """Flattened pair index into a ``(2w - 1)**3`` relative position table."""
    coords = np.stack(
        np.meshgrid(np.arange(window), np.arange(window), np.arange(window), indexing="ij")
    ).reshape(3, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (window - 1)
    span = 2 * window - 1
    return (rel[0] * span * span + rel[1] * span + rel[2]).astype(np.int64)
