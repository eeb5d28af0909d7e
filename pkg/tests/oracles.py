"""Independent reference implementations used as test oracles.

Everything here is written with plain numpy loops or closed-form math and
deliberately avoids the package's own kernels, so agreement between the two
is evidence rather than tautology.
"""

from __future__ import annotations

from itertools import product

import numpy as np


def conv3d_loops(x, w, b=None, stride=1, padding=0):
    """Direct 6-loop cross-correlation."""
    s = (stride,) * 3 if isinstance(stride, int) else tuple(stride)
    p = (padding,) * 3 if isinstance(padding, int) else tuple(padding)
    x = np.pad(x, ((0, 0), (0, 0)) + tuple((pp, pp) for pp in p))
    n, ci, h, wd, d = x.shape
    co, _, k0, k1, k2 = w.shape
    oh = (h - k0) // s[0] + 1
    ow = (wd - k1) // s[1] + 1
    od = (d - k2) // s[2] + 1
    out = np.zeros((n, co, oh, ow, od), dtype=x.dtype)
    for ni, coi, i, j, l in product(range(n), range(co), range(oh), range(ow), range(od)):
        patch = x[ni, :, i * s[0] : i * s[0] + k0, j * s[1] : j * s[1] + k1, l * s[2] : l * s[2] + k2]
        out[ni, coi, i, j, l] = np.sum(patch * w[coi])
    if b is not None:
        out += b.reshape(1, -1, 1, 1, 1)
    return out


def conv_transpose3d_loops(x, w, stride=2, b=None):
    """Direct scatter transposed convolution; ``w`` is ``(ci, co, k, k, k)``."""
    s = (stride,) * 3 if isinstance(stride, int) else tuple(stride)
    n, ci, h, wd, d = x.shape
    _, co, k0, k1, k2 = w.shape
    oh = (h - 1) * s[0] + k0
    ow = (wd - 1) * s[1] + k1
    od = (d - 1) * s[2] + k2
    out = np.zeros((n, co, oh, ow, od), dtype=x.dtype)
    for ni, cii, i, j, l in product(range(n), range(ci), range(h), range(wd), range(d)):
        out[ni, :, i * s[0] : i * s[0] + k0, j * s[1] : j * s[1] + k1, l * s[2] : l * s[2] + k2] += (
            x[ni, cii, i, j, l] * w[cii]
        )
    if b is not None:
        out += b.reshape(1, -1, 1, 1, 1)
    return out


def group_norm_ref(x, groups, w, b, eps=1e-5):
    n, c = x.shape[:2]
    xg = x.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    xh = ((xg - mu) / np.sqrt(var + eps)).reshape(x.shape)
    cs = (1, c) + (1,) * (x.ndim - 2)
    return xh * w.reshape(cs) + b.reshape(cs)


def layer_norm_ref(x, w, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * w + b


def softmax_ref(x, axis=-1):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def attention_loops(q, k, v, heads, mask=None, bias=None):
    """Per-head attention evaluated head by head with explicit matmuls."""
    bsz, t, d = q.shape
    dh = d // heads
    out = np.zeros_like(q)
    for bi in range(bsz):
        for h in range(heads):
            sl = slice(h * dh, (h + 1) * dh)
            qs, ks, vs = q[bi, :, sl], k[bi, :, sl], v[bi, :, sl]
            scores = qs @ ks.T / np.sqrt(dh)
            if bias is not None:
                scores = scores + bias[h]
            if mask is not None:
                mrow = mask[bi] if mask.ndim == 3 else mask
                scores = scores + (mrow[h] if mrow.ndim == 3 else mrow)
            out[bi, :, sl] = softmax_ref(scores, axis=-1) @ vs
    return out


def dice_counts(pred, gt, cls):
    """Exact integer Dice ingredients for one class."""
    a = pred == cls
    b = gt == cls
    inter = int(np.logical_and(a, b).sum())
    return inter, int(a.sum()), int(b.sum())


def dice_ref(pred, gt, cls):
    inter, na, nb = dice_counts(pred, gt, cls)
    if na + nb == 0:
        return 1.0
    return 2.0 * inter / (na + nb)


def ellipsoid_volume(radii):
    return 4.0 / 3.0 * np.pi * radii[0] * radii[1] * radii[2]


def resample_axis_ref(x, axis, n_out, scale):
    """Per-axis linear interpolation with half-voxel centres and edge clamping.

    ``scale`` is target_spacing / source_spacing, i.e. the step in source
    index space between consecutive output samples.
    """
    n_in = x.shape[axis]
    src = (np.arange(n_out) + 0.5) * scale - 0.5
    i0 = np.floor(src).astype(int)
    w = src - i0
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    w = np.where(src <= 0, 0.0, np.where(src >= n_in - 1, 0.0, w))
    lo = np.where(src >= n_in - 1, n_in - 1, lo)
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    shape = [1] * x.ndim
    shape[axis] = n_out
    wr = w.reshape(shape)
    return a + wr * (b - a)


def soft_dice_ce_ref(logits, labels, classes=6, smooth=1e-5):
    """Reference loss: mean of soft-Dice loss and voxel cross-entropy."""
    p = softmax_ref(logits, axis=1)
    onehot = np.stack([(labels == c).astype(logits.dtype) for c in range(classes)], axis=1)
    dims = (0,) + tuple(range(2, logits.ndim))
    inter = (p * onehot).sum(axis=dims)
    denom = p.sum(axis=dims) + onehot.sum(axis=dims)
    dice = (2.0 * inter + smooth) / (denom + smooth)
    dice_loss = 1.0 - dice.mean()
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    ce = -(onehot * logp).sum(axis=1).mean()
    return 0.5 * dice_loss + 0.5 * ce


def adamw_ref_step(p, g, m, v, t, lr, b1, b2, eps, wd):
    """One reference optimiser step; returns updated copies."""
    m = b1 * m + (1 - b1) * g
    v = b2 * v + (1 - b2) * g * g
    mh = m / (1 - b1**t)
    vh = v / (1 - b2**t)
    p = p - lr * (mh / (np.sqrt(vh) + eps) + wd * p)
    return p, m, v
