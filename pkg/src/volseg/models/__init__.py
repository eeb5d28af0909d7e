"""The four segmentation architectures and their configuration."""

from __future__ import annotations

import numpy as np

from .config import VARIANTS, ModelConfig, desk_config, full_config, validate_config
from .segresnet import SegResNet, segresnet_shape_table
from .swin_unetr import SwinUNETR, swinunetr_shape_table
from .unetr import UNETR, unetr_shape_table
from .unetr_pp import UNETRpp, unetrpp_shape_table

__all__ = [
    "ModelConfig",
    "VARIANTS",
    "full_config",
    "desk_config",
    "validate_config",
    "build",
    "shape_table",
    "check_shapes",
    "model_grad_check",
    "UNETR",
    "SwinUNETR",
    "UNETRpp",
    "SegResNet",
]

_CLASSES = {
    "unetr": UNETR,
    "swinunetr": SwinUNETR,
    "unetrpp": UNETRpp,
    "segresnet": SegResNet,
}

_TABLES = {
    "unetr": unetr_shape_table,
    "swinunetr": swinunetr_shape_table,
    "unetrpp": unetrpp_shape_table,
    "segresnet": segresnet_shape_table,
}


def build(cfg: ModelConfig, seed: int):
    """Construct and initialise the model described by ``cfg``.

    The same ``(cfg, seed)`` pair always yields bit-identical parameters.
    """
    validate_config(cfg)
    rng = np.random.default_rng(seed)
    return _CLASSES[cfg.variant](cfg, rng)


def shape_table(cfg: ModelConfig, extent: int | None = None, batch: int = 1):
    """Expected per-stage output shapes for a cubic input of ``extent``."""
    validate_config(cfg)
    return _TABLES[cfg.variant](cfg, cfg.img_size if extent is None else extent, batch)


def check_shapes(cfg: ModelConfig, seed: int = 0, extent: int | None = None, batch: int = 1):
    """Run one instrumented forward and compare every stage to the table.

    Returns ``(rows, all_ok)`` where each row is
    ``(stage, expected_shape, actual_shape, ok)`` in stage order.
    """
    from ..core.tensor import Tensor, no_grad

    expected = shape_table(cfg, extent, batch)
    e = cfg.img_size if extent is None else extent
    model = build(cfg, seed).eval()
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((batch, cfg.in_channels, e, e, e)).astype(np.float32))
    trace: list = []
    with no_grad():
        model(x, trace=trace)
    actual = dict(trace)
    rows = []
    all_ok = True
    for stage, want in expected:
        got = actual.get(stage)
        ok = got == tuple(want)
        all_ok = all_ok and ok
        rows.append((stage, tuple(want), got, ok))
    extra = [s for s, _ in trace if s not in dict(expected)]
    for stage in extra:
        all_ok = False
        rows.append((stage, None, actual[stage], False))
    return rows, all_ok


def model_grad_check(
    cfg: ModelConfig, seed: int = 0, tol: float = 1e-3, max_coords: int = 64
):
    """Finite-difference check of the full model+loss composition.

    The model is cast to float64 and frozen in eval mode; the check
    differentiates the combined soft-dice + cross-entropy loss with respect
    to the input volume.
    """
    from ..core.gradcheck import grad_check
    from ..core.tensor import Tensor
    from ..metrics import segmentation_loss

    model = build(cfg, seed).eval().to_dtype(np.float64)
    rng = np.random.default_rng(seed)
    e = cfg.img_size
    x = Tensor(rng.standard_normal((1, cfg.in_channels, e, e, e)), requires_grad=True)
    labels = rng.integers(0, cfg.out_classes, size=(1, e, e, e)).astype(np.int64)

    def f(t):
        return segmentation_loss(model(t), labels)

    return grad_check(f, x, tol=tol, max_coords=max_coords, rng=np.random.default_rng(seed + 1))
