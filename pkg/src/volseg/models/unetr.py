"""UNETR: a ViT encoder with skip taps feeding a convolutional decoder.

The encoder splits the volume into non-overlapping cubic patches, projects
them to tokens, adds learned positional embeddings, and runs a stack of
pre-norm transformer layers. Feature maps tapped at four depths are reshaped
back onto the 3D grid and upsampled through deconvolution chains; the decoder
concatenates each rung with the matching chain and finishes with a 1x1x1
projection to class logits. Feature widths follow ``feature_size * 2**k`` at
resolution ``img/2**k``.
"""

from __future__ import annotations

import numpy as np

from ..core import tensor as F
from ..core.attention import attention
from ..core.layers import Conv3d, ConvTranspose3d, LayerNorm, Linear
from ..core.module import Module, ModuleList, Parameter, trunc_normal
from ..errors import DimensionError
from .blocks import ConvBnRelu, Mlp, UpConvBnRelu, record

__all__ = ["UNETR", "unetr_shape_table"]


class TransformerLayer(Module):
    """Pre-norm transformer block: attention then MLP, each with a residual."""

    def __init__(self, dim, heads, mlp_dim, rng):
        super().__init__()
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(dim, 3 * dim, rng)
        self.proj = Linear(dim, dim, rng)
        self.norm2 = LayerNorm(dim)
        self.mlp = Mlp(dim, mlp_dim, rng)
        self.heads = heads
        self.dim = dim

    def forward(self, x):
        h = self.qkv(self.norm1(x))
        d = self.dim
        q, k, v = h[:, :, :d], h[:, :, d : 2 * d], h[:, :, 2 * d :]
        x = x + self.proj(attention(q, k, v, self.heads))
        return x + self.mlp(self.norm2(x))

    __call__ = forward


class UNETR(Module):
    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        p, d, f = cfg.patch_size, cfg.hidden_dim, cfg.feature_size
        grid = cfg.img_size // p
        self.grid = grid
        tokens = grid**3

        self.patch_proj = Linear(cfg.in_channels * p**3, d, rng)
        self.pos_embed = Parameter(trunc_normal(rng, (1, tokens, d)))
        self.layers = ModuleList(
            TransformerLayer(d, cfg.num_heads, cfg.mlp_dim, rng) for _ in range(cfg.num_layers)
        )
        self.norm = LayerNorm(d)

        self.enc1 = ModuleList(
            [ConvBnRelu(cfg.in_channels, f, rng), ConvBnRelu(f, f, rng)]
        )
        # Deconvolution chains lift each tap from img/16 toward full resolution;
        # the width at resolution img/2**k is f * 2**k throughout.
        self.enc2 = ModuleList(
            [UpConvBnRelu(d, 8 * f, rng), UpConvBnRelu(8 * f, 4 * f, rng), UpConvBnRelu(4 * f, 2 * f, rng)]
        )
        self.enc3 = ModuleList([UpConvBnRelu(d, 8 * f, rng), UpConvBnRelu(8 * f, 4 * f, rng)])
        self.enc4 = ModuleList([UpConvBnRelu(d, 8 * f, rng)])
        self.up_bottom = ConvTranspose3d(d, 8 * f, 2, rng, stride=2)

        def stage(width):
            return ModuleList(
                [
                    ConvBnRelu(2 * width, width, rng),
                    ConvBnRelu(width, width, rng),
                    ConvTranspose3d(width, width // 2, 2, rng, stride=2),
                ]
            )

        self.dec8 = stage(8 * f)
        self.dec4 = stage(4 * f)
        self.dec2 = stage(2 * f)
        self.dec_final = ModuleList([ConvBnRelu(2 * f, f, rng), ConvBnRelu(f, f, rng)])
        self.head = Conv3d(f, cfg.out_classes, 1, rng)

    def _patchify(self, x):
        """``(N, C, E, E, E)`` -> token sequence ``(N, (E/p)^3, C*p^3)``."""
        n, c = x.shape[0], x.shape[1]
        g, p = self.grid, self.cfg.patch_size
        x = F.reshape(x, (n, c, g, p, g, p, g, p))
        x = F.permute(x, (0, 2, 4, 6, 1, 3, 5, 7))
        return F.reshape(x, (n, g**3, c * p**3))

    def _to_grid(self, tokens):
        n, _, d = tokens.shape
        g = self.grid
        x = F.reshape(tokens, (n, g, g, g, d))
        return F.permute(x, (0, 4, 1, 2, 3))

    def forward(self, x, trace=None):
        cfg = self.cfg
        if x.ndim != 5 or x.shape[1] != cfg.in_channels:
            raise DimensionError(
                f"unetr expects (N, {cfg.in_channels}, E, E, E) input, got {tuple(x.shape)}"
            )
        if tuple(x.shape[2:]) != (cfg.img_size,) * 3:
            raise DimensionError(
                f"unetr was built for {cfg.img_size}^3 inputs (positional embeddings are "
                f"size-bound), got extents {tuple(x.shape[2:])}"
            )

        t = self.patch_proj(self._patchify(x)) + self.pos_embed
        record(trace, "tokens", t)
        taps = {}
        for i, layer in enumerate(self.layers, start=1):
            t = layer(t)
            if i in cfg.taps:
                taps[i] = self.norm(t) if i == cfg.num_layers else t
        z = [record(trace, f"z{i}", self._to_grid(taps[i])) for i in sorted(taps)]

        e1 = x
        for block in self.enc1:
            e1 = block(e1)
        record(trace, "enc1", e1)
        chains = {"enc2": (self.enc2, z[0]), "enc3": (self.enc3, z[1]), "enc4": (self.enc4, z[2])}
        feats = {}
        for name, (chain, h) in chains.items():
            for block in chain:
                h = block(h)
            feats[name] = record(trace, name, h)

        h = record(trace, "up12", self.up_bottom(z[3]))
        for stage, skip, name in (
            (self.dec8, feats["enc4"], "up9"),
            (self.dec4, feats["enc3"], "up6"),
            (self.dec2, feats["enc2"], "up3"),
        ):
            h = F.concat([h, skip], axis=1)
            for block in stage:
                h = block(h)
            record(trace, name, h)
        h = F.concat([h, e1], axis=1)
        for block in self.dec_final:
            h = block(h)
        return record(trace, "logits", self.head(h))

    __call__ = forward


def unetr_shape_table(cfg, extent: int, batch: int = 1):
    """Expected ``(stage, shape)`` pairs for a cubic input of ``extent``."""
    f, d, k = cfg.feature_size, cfg.hidden_dim, cfg.out_classes
    g = extent // cfg.patch_size
    z = (batch, d, g, g, g)
    rows = [("tokens", (batch, g**3, d))]
    rows += [(f"z{i}", z) for i in sorted(cfg.taps)]
    rows += [
        ("enc1", (batch, f, extent, extent, extent)),
        ("enc2", (batch, 2 * f) + (extent // 2,) * 3),
        ("enc3", (batch, 4 * f) + (extent // 4,) * 3),
        ("enc4", (batch, 8 * f) + (extent // 8,) * 3),
        ("up12", (batch, 8 * f) + (extent // 8,) * 3),
        ("up9", (batch, 4 * f) + (extent // 4,) * 3),
        ("up6", (batch, 2 * f) + (extent // 2,) * 3),
        ("up3", (batch, f) + (extent,) * 3),
        ("logits", (batch, k) + (extent,) * 3),
    ]
    return rows
