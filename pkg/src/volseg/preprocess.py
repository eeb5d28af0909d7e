"""Geometric and intensity preprocessing for volumes and label maps.

The canonical pipeline: reorient to the target anatomical frame (exact axis
permutation and flips, no resampling), resample to the target isotropic
spacing (trilinear for images, nearest neighbour for labels), and window the
intensities to ``[0, 1]``.

Resampling conventions: voxel centres sit at ``(index + 0.5) * spacing``;
output extents are ``round_half_up(extent * spacing / target)``; samples
beyond the source grid clamp to the edge voxel. Interpolation uses the lerp
form ``a + w * (b - a)``, which reproduces constant fields exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.volume import LabelVolume, Volume, orientation_axes
from .errors import DimensionError, UsageError

__all__ = [
    "PreprocessConfig",
    "reorient",
    "resample_volume",
    "resample_label",
    "normalize",
    "preprocess_case",
]


@dataclass(frozen=True)
class PreprocessConfig:
    orientation: str = "RAS"
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    window: tuple[float, float] = (-150.0, 250.0)

    def __post_init__(self):
        if self.window[0] >= self.window[1]:
            raise UsageError(f"window must be (low, high) with low < high, got {self.window}")


def _reorient_arrays(data: np.ndarray, spacing, src: str, dst: str):
    src_axes = orientation_axes(src)
    dst_axes = orientation_axes(dst)
    world_to_src = {world: (i, sign) for i, (world, sign) in enumerate(src_axes)}
    perm, flips, new_spacing = [], [], []
    for world, dst_sign in dst_axes:
        i, src_sign = world_to_src[world]
        perm.append(i)
        flips.append(src_sign != dst_sign)
        new_spacing.append(spacing[i])
    out = data.transpose(perm)
    flip_axes = tuple(a for a, f in enumerate(flips) if f)
    if flip_axes:
        out = np.flip(out, axis=flip_axes)
    return np.ascontiguousarray(out), tuple(new_spacing)


def reorient(volume, target: str):
    """Permute and flip voxel axes into the target anatomical frame."""
    data, spacing = _reorient_arrays(volume.data, volume.spacing, volume.orientation, target)
    if isinstance(volume, LabelVolume):
        return LabelVolume(data, spacing, target, volume.num_classes)
    return Volume(data, spacing, target)


def target_extent(extent: int, spacing: float, target: float) -> int:
    """Output grid size covering the same physical span, rounded half up."""
    return max(1, int(np.floor(extent * spacing / target + 0.5)))


def _source_coords(n_out: int, scale: float) -> np.ndarray:
    return (np.arange(n_out) + 0.5) * scale - 0.5


def _resample_axis_linear(data: np.ndarray, axis: int, n_out: int, scale: float) -> np.ndarray:
    n_in = data.shape[axis]
    src = _source_coords(n_out, scale)
    i0 = np.floor(src).astype(np.int64)
    w = (src - i0).astype(data.dtype)
    lo = np.clip(i0, 0, n_in - 1)
    hi = np.clip(i0 + 1, 0, n_in - 1)
    w = np.where(src <= 0, data.dtype.type(0), w)
    past_end = src >= n_in - 1
    lo = np.where(past_end, n_in - 1, lo)
    w = np.where(past_end, data.dtype.type(0), w)
    a = np.take(data, lo, axis=axis)
    b = np.take(data, hi, axis=axis)
    shape = [1] * data.ndim
    shape[axis] = n_out
    wr = w.reshape(shape)
    return a + wr * (b - a)


def _resample_axis_nearest(data: np.ndarray, axis: int, n_out: int, scale: float) -> np.ndarray:
    n_in = data.shape[axis]
    src = _source_coords(n_out, scale)
    idx = np.clip(np.floor(src + 0.5).astype(np.int64), 0, n_in - 1)
    return np.take(data, idx, axis=axis)


def resample_volume(volume: Volume, target_spacing) -> Volume:
    """Trilinear resampling to the requested spacing."""
    target_spacing = tuple(float(s) for s in target_spacing)
    data = volume.data
    for axis in range(3):
        n_out = target_extent(volume.extent[axis], volume.spacing[axis], target_spacing[axis])
        scale = target_spacing[axis] / volume.spacing[axis]
        data = _resample_axis_linear(data, axis, n_out, scale)
    return Volume(data, target_spacing, volume.orientation)


def resample_label(label: LabelVolume, target_spacing) -> LabelVolume:
    """Nearest-neighbour resampling; never invents new class values."""
    target_spacing = tuple(float(s) for s in target_spacing)
    data = label.data
    for axis in range(3):
        n_out = target_extent(label.extent[axis], label.spacing[axis], target_spacing[axis])
        scale = target_spacing[axis] / label.spacing[axis]
        data = _resample_axis_nearest(data, axis, n_out, scale)
    return LabelVolume(data, target_spacing, label.orientation, label.num_classes)


def normalize(volume: Volume, window=(-150.0, 250.0)) -> Volume:
    """Clamp to the intensity window and map it affinely onto ``[0, 1]``."""
    lo, hi = float(window[0]), float(window[1])
    if lo >= hi:
        raise UsageError(f"window must be (low, high) with low < high, got {window}")
    data = np.clip(volume.data, lo, hi)
    data = (data - np.float32(lo)) / np.float32(hi - lo)
    return Volume(data, volume.spacing, volume.orientation)


def preprocess_case(
    image: Volume, label: LabelVolume, config: PreprocessConfig = PreprocessConfig()
) -> tuple[Volume, LabelVolume]:
    """Run the full pipeline on an aligned image/label pair."""
    if image.extent != label.extent:
        raise DimensionError(
            f"image extent {image.extent} does not match label extent {label.extent}"
        )
    if image.orientation != label.orientation:
        raise DimensionError(
            f"image orientation {image.orientation} does not match label {label.orientation}"
        )
    image = reorient(image, config.orientation)
    label = reorient(label, config.orientation)
    image = resample_volume(image, config.spacing)
    label = resample_label(label, config.spacing)
    if image.extent != label.extent:
        raise DimensionError("image and label diverged during resampling")
    image = normalize(image, config.window)
    return image, label
