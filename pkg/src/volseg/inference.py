"""Whole-volume inference by overlapping-window tiling and slice export."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .core.tensor import Tensor, no_grad
from .data.volume import LabelVolume, Volume
from .errors import DimensionError, UsageError

__all__ = ["window_starts", "sliding_window_infer", "PALETTE", "export_slices"]


def window_starts(extent: int, roi: int, stride: int):
    """Window offsets covering ``[0, extent)``: stride steps, final one clamped."""
    if extent <= roi:
        return [0]
    starts = list(range(0, extent - roi + 1, stride))
    if starts[-1] != extent - roi:
        starts.append(extent - roi)
    return starts


def sliding_window_infer(model, volume: Volume, roi=(96, 96, 96), overlap: float = 0.5):
    """Tile the volume with ``roi`` windows, average logits, and take argmax.

    Per-voxel logits are averaged with uniform weights over every covering
    window; visitation order is fixed, so the result is deterministic.
    """
    if any(m.training for m in model.modules()):
        raise UsageError("sliding_window_infer requires an eval-mode model; call model.eval()")
    if not 0.0 <= overlap < 1.0:
        raise UsageError(f"overlap must lie in [0, 1), got {overlap}")
    roi = tuple(int(r) for r in roi)
    data = volume.data
    if data.ndim != 3:
        raise DimensionError(f"expected a 3-d volume, got shape {tuple(data.shape)}")

    pads = tuple(max(0, r - e) for r, e in zip(roi, data.shape))
    padded = np.pad(data, tuple((0, p) for p in pads)) if any(pads) else data
    extents = padded.shape
    strides = tuple(max(1, int(round(r * (1.0 - overlap)))) for r in roi)
    axes_starts = [window_starts(e, r, s) for e, r, s in zip(extents, roi, strides)]

    classes = None
    logit_sum = None
    hits = np.zeros(extents, dtype=np.float32)
    with no_grad():
        for s0 in axes_starts[0]:
            for s1 in axes_starts[1]:
                for s2 in axes_starts[2]:
                    sl = (slice(s0, s0 + roi[0]), slice(s1, s1 + roi[1]), slice(s2, s2 + roi[2]))
                    x = Tensor(padded[sl][None, None].astype(np.float32))
                    out = model(x).data[0]
                    if logit_sum is None:
                        classes = out.shape[0]
                        logit_sum = np.zeros((classes,) + extents, dtype=np.float32)
                    logit_sum[(slice(None),) + sl] += out
                    hits[sl] += 1.0
    avg = logit_sum / hits
    labels = np.argmax(avg, axis=0).astype(np.uint8)
    crop = tuple(slice(0, e) for e in data.shape)
    return LabelVolume(labels[crop], volume.spacing, volume.orientation)


# Fixed overlay palette, indexed by class id (background omitted).
PALETTE = {
    1: (217, 83, 79),  # liver
    2: (92, 184, 92),  # left kidney
    3: (66, 139, 202),  # right kidney
    4: (240, 173, 78),  # spleen
    5: (153, 84, 187),  # bowel
}


def _overlay_slice(image2d: np.ndarray, label2d: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    gray = np.clip(np.round(image2d * 255.0), 0, 255).astype(np.float32)
    rgb = np.repeat(gray[:, :, None], 3, axis=2)
    for cls, color in PALETTE.items():
        mask = label2d == cls
        if mask.any():
            blend = (1.0 - alpha) * rgb[mask] + alpha * np.asarray(color, dtype=np.float32)
            rgb[mask] = blend
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def _write_ppm(path: Path, rgb: np.ndarray) -> None:
    h, w = rgb.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(rgb.tobytes())


def export_slices(volume: Volume, pred, gt, z_indices, out_dir, prefix: str = "slice"):
    """Write axial overlay images (prediction and ground truth) as binary PPM.

    ``volume`` is expected in normalised ``[0, 1]`` intensity. Returns the
    list of written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    image = volume.data
    layers = [("pred", pred)]
    if gt is not None:
        layers.append(("gt", gt))
    for name, lab in layers:
        arr = lab.data if isinstance(lab, LabelVolume) else np.asarray(lab)
        if arr.shape != image.shape:
            raise DimensionError(
                f"{name} labels {tuple(arr.shape)} do not match volume {tuple(image.shape)}"
            )
    depth = image.shape[2]
    paths = []
    for z in z_indices:
        z = int(z)
        if not 0 <= z < depth:
            raise UsageError(f"slice index {z} out of range for depth {depth}")
        for name, lab in layers:
            arr = lab.data if isinstance(lab, LabelVolume) else np.asarray(lab)
            rgb = _overlay_slice(image[:, :, z], arr[:, :, z])
            path = out_dir / f"{prefix}_z{z:03d}_{name}.ppm"
            _write_ppm(path, rgb)
            paths.append(path)
    return paths
