"""SwinUNETR: a shifted-window transformer encoder with a U-shaped decoder.

The encoder partitions the volume (stride-2 embedding), then runs four
stages; each stage applies window attention alternating with cyclically
shifted window attention and ends in a patch-merging step that halves the
resolution and doubles the width. Every tapped scale passes through a
residual convolution block; the decoder mirrors the encoder with
deconvolution + concatenation + residual blocks up to full resolution.
"""

from __future__ import annotations

import numpy as np

from ..core import tensor as F
from ..core.attention import (
    attention,
    relative_position_index,
    shifted_window_mask,
    window_partition,
    window_reverse,
)
from ..core.layers import Conv3d, ConvTranspose3d, LayerNorm, Linear
from ..core.module import Module, ModuleList, Parameter, trunc_normal
from ..errors import DimensionError
from .blocks import Mlp, ResBlock, from_tokens, record, to_tokens

__all__ = ["SwinUNETR", "swinunetr_shape_table"]

# Upper bound on floats held by one attention-score block; window batches
# beyond this are processed in slices to bound peak memory at full scale.
_ATTN_BLOCK_FLOATS = 1 << 24


class WindowAttention(Module):
    """Multi-head self-attention inside cubic windows with relative bias."""

    def __init__(self, dim, heads, window, rng):
        super().__init__()
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        span = 2 * window - 1
        self.rel_bias = Parameter(trunc_normal(rng, (span**3, heads)))
        self._rel_index = relative_position_index(window).reshape(-1)
        self.heads = heads
        self.window = window

    def forward(self, windows, mask=None):
        b, t, d = windows.shape
        bias = F.index_select(self.rel_bias, self._rel_index)
        bias = F.permute(F.reshape(bias, (t, t, self.heads)), (2, 0, 1))

        h = self.qkv(windows)
        q, k, v = h[:, :, :d], h[:, :, d : 2 * d], h[:, :, 2 * d :]
        step = max(1, _ATTN_BLOCK_FLOATS // (self.heads * t * t))
        if step >= b:
            out = attention(q, k, v, self.heads, mask=mask, bias=bias)
        else:
            parts = []
            for s in range(0, b, step):
                sub = slice(s, min(s + step, b))
                m = mask[sub] if mask is not None else None
                parts.append(attention(q[sub], k[sub], v[sub], self.heads, mask=m, bias=bias))
            out = F.concat(parts, axis=0)
        return self.proj(out)

    __call__ = forward


class SwinBlock(Module):
    """Window attention (optionally shifted) and an MLP, both pre-norm residual."""

    def __init__(self, dim, heads, window, shift, rng, mlp_ratio=4):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.attn = WindowAttention(dim, heads, window, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_ratio * dim, rng)
        self.window = window
        self.shift = shift
        self._mask_cache = {}

    def _mask(self, padded_extents, batch):
        if padded_extents not in self._mask_cache:
            self._mask_cache.clear()
            self._mask_cache[padded_extents] = shifted_window_mask(
                padded_extents, self.window, self.shift
            )
        mask = self._mask_cache[padded_extents]
        if batch > 1:
            mask = np.tile(mask, (batch, 1, 1))
        return mask[:, None]  # broadcast over heads

    def forward(self, x):
        n = x.shape[0]
        tokens, spatial = to_tokens(x)
        h = from_tokens(self.norm1(tokens), spatial)
        # Shifting is pointless when a single window covers the padded volume.
        shift = self.shift if any(e > self.window for e in spatial) else 0
        if shift:
            h = F.roll(h, (-shift,) * 3, (2, 3, 4))
        windows, padded = window_partition(h, self.window)
        mask = self._mask(padded, n) if shift else None
        out = self.attn(windows, mask=mask)
        h = window_reverse(out, self.window, padded, tuple(x.shape))
        if shift:
            h = F.roll(h, (shift,) * 3, (2, 3, 4))
        x = x + h
        tokens, spatial = to_tokens(x)
        tokens = tokens + self.mlp(self.norm2(tokens))
        return from_tokens(tokens, spatial)

    __call__ = forward


class PatchMerging(Module):
    """Concatenate 2x2x2 neighbourhoods (8C) and reduce linearly to 2C."""

    def __init__(self, dim, rng):
        super().__init__()
        self.norm = LayerNorm(8 * dim)
        self.reduce = Linear(8 * dim, 2 * dim, rng, bias=False)

    def forward(self, x):
        extents = x.shape[2:]
        if any(e % 2 for e in extents):
            x = F.pad(x, ((0, 0), (0, 0)) + tuple((0, e % 2) for e in extents))
        corners = [x[:, :, i::2, j::2, k::2] for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        tokens, spatial = to_tokens(F.concat(corners, axis=1))
        return from_tokens(self.reduce(self.norm(tokens)), spatial)

    __call__ = forward


class SwinStage(Module):
    """``depth`` alternating (plain, shifted) blocks followed by merging."""

    def __init__(self, dim, heads, window, depth, rng):
        super().__init__()
        self.blocks = ModuleList(
            SwinBlock(dim, heads, window, 0 if i % 2 == 0 else window // 2, rng)
            for i in range(depth)
        )
        self.merge = PatchMerging(dim, rng)

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return self.merge(x)

    __call__ = forward


class SwinUNETR(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        f = cfg.stage_dims[0]
        self.enc0 = ResBlock(cfg.in_channels, f, rng)
        self.embed = Conv3d(cfg.in_channels, f, 2, rng, stride=2)
        self.stages = ModuleList(
            SwinStage(dim, heads, cfg.window, cfg.depth, rng)
            for dim, heads in zip(cfg.stage_dims, cfg.stage_heads)
        )
        # Widths of the tapped encoder scales, shallow to deep: the embedding
        # output plus each stage's post-merge output.
        widths = [f] + [2 * d for d in cfg.stage_dims]
        self.taps = ModuleList(ResBlock(w, w, rng) for w in widths)
        ups, decs = [], []
        for hi, lo in zip(widths[::-1], widths[-2::-1]):
            ups.append(ConvTranspose3d(hi, lo, 2, rng, stride=2))
            decs.append(ResBlock(2 * lo, lo, rng))
        ups.append(ConvTranspose3d(f, f, 2, rng, stride=2))  # img/2 -> full res
        decs.append(ResBlock(2 * f, f, rng))
        self.ups = ModuleList(ups)
        self.dec = ModuleList(decs)
        self.head = Conv3d(f, cfg.out_classes, 1, rng)

    def forward(self, x, trace=None):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"swinunetr expects (N, {cfg.in_channels}, E, E, E) input, got {tuple(x.shape)}"
            )
        if any(e % 32 for e in x.shape[2:]):
            raise DimensionError(
                f"swinunetr input extents must be divisible by 32, got {tuple(x.shape[2:])}"
            )

        full_res = record(trace, "enc0", self.enc0(x))
        h = record(trace, "embed", self.embed(x))
        scales = [h]
        for i, stage in enumerate(self.stages, start=1):
            h = stage(h)
            record(trace, "bottleneck" if i == len(self.stages) else f"stage{i}", h)
            scales.append(h)
        skips = [tap(s) for tap, s in zip(self.taps, scales)]

        h = skips.pop()
        names = ("dec16", "dec8", "dec4", "dec2", "dec_full")
        for up, dec, name in zip(self.ups, self.dec, names):
            skip = skips.pop() if skips else full_res
            h = dec(F.concat([up(h), skip], axis=1))
            record(trace, name, h)
        return record(trace, "logits", self.head(h))

    __call__ = forward


def swinunetr_shape_table(cfg, extent: int, batch: int = 1):
    """Expected ``(stage, shape)`` pairs for a cubic input of ``extent``."""
    f = cfg.stage_dims[0]
    k = cfg.out_classes

    def cube(ch, div):
        return (batch, ch) + (extent // div,) * 3

    return [
        ("enc0", cube(f, 1)),
        ("embed", cube(f, 2)),
        ("stage1", cube(2 * f, 4)),
        ("stage2", cube(4 * f, 8)),
        ("stage3", cube(8 * f, 16)),
        ("bottleneck", cube(16 * f, 32)),
        ("dec16", cube(8 * f, 16)),
        ("dec8", cube(4 * f, 8)),
        ("dec4", cube(2 * f, 4)),
        ("dec2", cube(f, 2)),
        ("dec_full", cube(f, 1)),
        ("logits", cube(k, 1)),
    ]
