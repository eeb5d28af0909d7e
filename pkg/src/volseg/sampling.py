"""Class-balanced patch sampling and training-time augmentation.

A sampler draws a target class from the configured ratios (restricted to
classes actually present in the label map), picks a uniformly random voxel
of that class as the patch centre, and crops a fixed-size window clamped to
the volume bounds. Volumes smaller than the patch are zero-padded at the
high end. Over many draws the fraction of patches centred on class ``c``
converges to ``ratio[c] / sum(ratios over present classes)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data.volume import NUM_CLASSES, LabelVolume, Volume
from .errors import DimensionError, UsageError

__all__ = ["SamplerConfig", "AugmentConfig", "PatchSampler", "augment", "Patch"]


@dataclass(frozen=True)
class SamplerConfig:
    patch: tuple[int, int, int] = (96, 96, 96)
    ratios: tuple[float, ...] = (1.0, 1.0, 2.0, 2.0, 2.0, 1.0)

    def __post_init__(self):
        if len(self.patch) != 3 or any(p < 1 for p in self.patch):
            raise UsageError(f"patch must be three positive ints, got {self.patch}")
        if len(self.ratios) != NUM_CLASSES:
            raise UsageError(f"need {NUM_CLASSES} class ratios, got {len(self.ratios)}")
        if any(r < 0 for r in self.ratios) or sum(self.ratios) <= 0:
            raise UsageError(f"ratios must be non-negative with positive sum, got {self.ratios}")


@dataclass(frozen=True)
class AugmentConfig:
    flip_prob: float = 0.5
    rot_prob: float = 0.5
    scale_range: tuple[float, float] = (0.9, 1.1)
    shift_range: tuple[float, float] = (-0.1, 0.1)


@dataclass(frozen=True)
class Patch:
    image: np.ndarray
    label: np.ndarray
    center: tuple[int, int, int]
    center_class: int


class PatchSampler:
    """Draws class-balanced patches from one preprocessed case."""

    def __init__(self, image: Volume, label: LabelVolume, config: SamplerConfig = SamplerConfig()):
        if image.extent != label.extent:
            raise DimensionError(
                f"image extent {image.extent} does not match label extent {label.extent}"
            )
        self.config = config
        self._image = image.data
        self._label = label.data
        self._extent = image.extent
        flat = label.data.reshape(-1)
        present = np.bincount(flat, minlength=NUM_CLASSES) > 0
        self._class_voxels = {
            c: np.flatnonzero(flat == c) for c in range(NUM_CLASSES) if present[c]
        }
        weights = np.array(
            [config.ratios[c] if c in self._class_voxels else 0.0 for c in range(NUM_CLASSES)]
        )
        if weights.sum() <= 0:
            raise UsageError("no samplable class present in the label volume")
        self._class_probs = weights / weights.sum()

    @property
    def class_probabilities(self) -> np.ndarray:
        """Effective per-class centre probabilities after dropping absent classes."""
        return self._class_probs.copy()

    def sample(self, rng: np.random.Generator) -> Patch:
        cls = int(rng.choice(NUM_CLASSES, p=self._class_probs))
        voxels = self._class_voxels[cls]
        center = np.unravel_index(int(voxels[rng.integers(len(voxels))]), self._extent)

        patch = self.config.patch
        starts, pad_hi = [], []
        for a in range(3):
            if self._extent[a] >= patch[a]:
                start = min(max(center[a] - patch[a] // 2, 0), self._extent[a] - patch[a])
                starts.append(start)
                pad_hi.append(0)
            else:
                starts.append(0)
                pad_hi.append(patch[a] - self._extent[a])
        sl = tuple(slice(s, s + p - ph) for s, p, ph in zip(starts, patch, pad_hi))
        img = self._image[sl]
        lab = self._label[sl]
        if any(pad_hi):
            pads = tuple((0, ph) for ph in pad_hi)
            img = np.pad(img, pads)
            lab = np.pad(lab, pads)
        return Patch(
            image=np.ascontiguousarray(img),
            label=np.ascontiguousarray(lab),
            center=tuple(int(c) for c in center),
            center_class=cls,
        )


_ROT_PLANES = ((0, 1), (0, 2), (1, 2))


def augment(
    image: np.ndarray,
    label: np.ndarray,
    rng: np.random.Generator,
    config: AugmentConfig = AugmentConfig(),
) -> tuple[np.ndarray, np.ndarray]:
    """Random flips, axis-pair rotations, and intensity scale/shift.

    Geometric transforms hit image and label identically; the intensity
    transform touches only the image, so voxel correspondence is preserved.
    """
    if image.shape != label.shape:
        raise DimensionError(f"image shape {image.shape} does not match label {label.shape}")
    for axis in range(3):
        if rng.random() < config.flip_prob:
            image = np.flip(image, axis)
            label = np.flip(label, axis)
    if rng.random() < config.rot_prob:
        plane = _ROT_PLANES[rng.integers(len(_ROT_PLANES))]
        k = int(rng.integers(1, 4))
        if image.shape[plane[0]] == image.shape[plane[1]]:
            image = np.rot90(image, k, plane)
            label = np.rot90(label, k, plane)
    scale = rng.uniform(*config.scale_range)
    shift = rng.uniform(*config.shift_range)
    image = image * np.float32(scale) + np.float32(shift)
    return np.ascontiguousarray(image), np.ascontiguousarray(label)
