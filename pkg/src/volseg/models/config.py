"""Model configuration, presets, and validation.

Every architecture is described by one :class:`ModelConfig`; fields that do
not apply to a variant are simply ignored by it. ``full_config`` returns the
benchmark-scale hyperparameters; ``desk_config`` quarters the channel widths
and shrinks the input so every topology stays exercisable on a laptop CPU.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

from ..errors import ConfigurationError

__all__ = ["ModelConfig", "VARIANTS", "full_config", "desk_config", "validate_config"]

VARIANTS = ("unetr", "swinunetr", "unetrpp", "segresnet")


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    in_channels: int = 1
    out_classes: int = 6
    img_size: int = 96

    # UNETR
    patch_size: int = 16
    hidden_dim: int = 768
    mlp_dim: int = 3072
    num_heads: int = 12
    num_layers: int = 12
    taps: tuple = (3, 6, 9, 12)
    feature_size: int = 16

    # SwinUNETR
    window: int = 7
    stage_dims: tuple = (48, 96, 192, 384)
    stage_heads: tuple = (3, 6, 12, 24)
    depth: int = 2

    # UNETR++
    channels: tuple = (32, 64, 128, 256)
    epa_heads: int = 4
    epa_blocks: int = 3
    proj_tokens: int = 64

    # SegResNet
    init_filters: int = 16
    dropout: float = 0.2
    enc_blocks: tuple = (1, 2, 2, 4)
    dec_blocks: tuple = (1, 1, 1)
    groups: int = 8

    def replace(self, **overrides) -> "ModelConfig":
        return replace(self, **overrides)

    @classmethod
    def field_names(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


_DESK_OVERRIDES = {
    "unetr": dict(hidden_dim=192, mlp_dim=768, feature_size=4),
    "swinunetr": dict(stage_dims=(12, 24, 48, 96), window=4),
    "unetrpp": dict(channels=(8, 16, 32, 64)),
    "segresnet": dict(init_filters=4, groups=4),
}


def full_config(variant: str, **overrides) -> ModelConfig:
    """Benchmark-scale preset for ``variant``."""
    cfg = ModelConfig(variant=variant, **overrides)
    validate_config(cfg)
    return cfg


def desk_config(variant: str, **overrides) -> ModelConfig:
    """Quarter-width, 32-cube preset that preserves each topology."""
    params = dict(_DESK_OVERRIDES.get(variant, {}), img_size=32)
    params.update(overrides)
    cfg = ModelConfig(variant=variant, **params)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ModelConfig) -> None:
    """Raise :class:`ConfigurationError` naming the first violated constraint."""
    if cfg.variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant '{cfg.variant}'; expected one of {VARIANTS}")
    if cfg.in_channels < 1:
        raise ConfigurationError(f"in_channels must be >= 1, got {cfg.in_channels}")
    if cfg.out_classes != 6:
        raise ConfigurationError(
            f"out_classes must be 6 (background + five organs), got {cfg.out_classes}"
        )
    if cfg.img_size < 32 or cfg.img_size % 32:
        raise ConfigurationError(
            f"img_size must be a positive multiple of 32 (got {cfg.img_size}): every "
            "variant downsamples by up to a factor of 32"
        )

    if cfg.variant == "unetr":
        if cfg.patch_size != 16:
            raise ConfigurationError(
                f"unetr patch_size must be 16 (got {cfg.patch_size}); the decoder ladder "
                "performs four doublings"
            )
        if cfg.hidden_dim % cfg.num_heads:
            raise ConfigurationError(
                f"unetr hidden_dim {cfg.hidden_dim} is not divisible by "
                f"num_heads {cfg.num_heads}"
            )
        if not cfg.taps or max(cfg.taps) > cfg.num_layers or min(cfg.taps) < 1:
            raise ConfigurationError(
                f"unetr taps {cfg.taps} must lie in 1..num_layers ({cfg.num_layers})"
            )
        if len(cfg.taps) != 4:
            raise ConfigurationError(
                f"unetr needs exactly four tap layers for the decoder ladder, got {cfg.taps}"
            )
    elif cfg.variant == "swinunetr":
        if len(cfg.stage_dims) != 4 or len(cfg.stage_heads) != 4:
            raise ConfigurationError(
                f"swinunetr needs four stage dims/heads, got {cfg.stage_dims}/{cfg.stage_heads}"
            )
        for dim, heads in zip(cfg.stage_dims, cfg.stage_heads):
            if dim % heads:
                raise ConfigurationError(
                    f"swinunetr stage dim {dim} is not divisible by {heads} heads"
                )
        for lo, hi in zip(cfg.stage_dims, cfg.stage_dims[1:]):
            if hi != 2 * lo:
                raise ConfigurationError(
                    f"swinunetr stage dims must double per stage (merging concatenates "
                    f"eight neighbours and halves), got {cfg.stage_dims}"
                )
        if cfg.window < 2:
            raise ConfigurationError(f"swinunetr window must be >= 2, got {cfg.window}")
        if cfg.depth < 1:
            raise ConfigurationError(f"swinunetr depth must be >= 1, got {cfg.depth}")
    elif cfg.variant == "unetrpp":
        if len(cfg.channels) != 4:
            raise ConfigurationError(f"unetrpp needs four stage channels, got {cfg.channels}")
        for ch in cfg.channels:
            if ch % cfg.epa_heads:
                raise ConfigurationError(
                    f"unetrpp stage width {ch} is not divisible by {cfg.epa_heads} heads"
                )
        for lo, hi in zip(cfg.channels, cfg.channels[1:]):
            if hi != 2 * lo:
                raise ConfigurationError(
                    f"unetrpp stage channels must double per stage, got {cfg.channels}"
                )
        if cfg.channels[0] % 2:
            raise ConfigurationError(
                f"unetrpp first stage width must be even (the full-resolution feature "
                f"width is half of it), got {cfg.channels[0]}"
            )
        if cfg.epa_blocks < 1:
            raise ConfigurationError(f"unetrpp epa_blocks must be >= 1, got {cfg.epa_blocks}")
        if cfg.proj_tokens < 1:
            raise ConfigurationError(f"unetrpp proj_tokens must be >= 1, got {cfg.proj_tokens}")
    elif cfg.variant == "segresnet":
        if cfg.init_filters % cfg.groups:
            raise ConfigurationError(
                f"segresnet init_filters {cfg.init_filters} is not divisible by "
                f"groups {cfg.groups}"
            )
        if len(cfg.enc_blocks) != 4 or len(cfg.dec_blocks) != 3:
            raise ConfigurationError(
                f"segresnet needs 4 encoder and 3 decoder block counts, got "
                f"{cfg.enc_blocks}/{cfg.dec_blocks}"
            )
        if min(cfg.enc_blocks) < 1 or min(cfg.dec_blocks) < 1:
            raise ConfigurationError("segresnet block counts must be >= 1")
        if not 0.0 <= cfg.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {cfg.dropout}")
