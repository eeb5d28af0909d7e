"""Volume containers and the organ label table.

Class ids: 0 background, 1 liver, 2 left kidney, 3 right kidney, 4 spleen,
5 bowel. Reports list organs as spleen, right kidney, left kidney, liver,
bowel (:data:`REPORT_ORDER`).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, UsageError

NUM_CLASSES = 6

CLASS_NAMES = {
    0: "background",
    1: "liver",
    2: "left_kidney",
    3: "right_kidney",
    4: "spleen",
    5: "bowel",
}

CLASS_IDS = {name: cid for cid, name in CLASS_NAMES.items()}

REPORT_ORDER = ("spleen", "right_kidney", "left_kidney", "liver", "bowel")

# letter -> (world axis, direction toward which the voxel axis increases)
_AXIS_CODES = {
    "R": (0, 1),
    "L": (0, -1),
    "A": (1, 1),
    "P": (1, -1),
    "S": (2, 1),
    "I": (2, -1),
}


def validate_orientation(code: str) -> str:
    """Check a three-letter orientation code covers three distinct world axes."""
    if not isinstance(code, str) or len(code) != 3:
        raise UsageError(f"orientation must be a 3-letter code, got {code!r}")
    code = code.upper()
    axes = []
    for ch in code:
        if ch not in _AXIS_CODES:
            raise UsageError(f"unknown orientation letter {ch!r} in {code!r}")
        axes.append(_AXIS_CODES[ch][0])
    if sorted(axes) != [0, 1, 2]:
        raise UsageError(f"orientation {code!r} does not cover three distinct axes")
    return code


def orientation_axes(code: str) -> list[tuple[int, int]]:
    """``(world_axis, sign)`` per voxel axis for a validated code."""
    return [_AXIS_CODES[ch] for ch in validate_orientation(code)]


@dataclass
class Volume:
    """A scalar 3-d image with voxel spacing (mm) and anatomical orientation."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    orientation: str = "RAS"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"volume data must be 3-d, got shape {self.data.shape}")
        if self.data.dtype != np.float32:
            self.data = self.data.astype(np.float32)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise UsageError(f"spacing must be three positive numbers, got {self.spacing}")
        self.orientation = validate_orientation(self.orientation)

    @property
    def extent(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class LabelVolume:
    """Integer class labels sharing the geometry conventions of :class:`Volume`."""

    data: np.ndarray
    spacing: tuple[float, float, float]
    orientation: str = "RAS"
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise DimensionError(f"label data must be 3-d, got shape {self.data.shape}")
        if self.data.dtype.kind == "f":
            rounded = np.rint(self.data)
            if not np.array_equal(rounded, self.data):
                raise UsageError("label volume holds non-integer values")
            self.data = rounded
        if self.data.min() < 0 or self.data.max() >= self.num_classes:
            raise UsageError(
                f"labels must lie in [0, {self.num_classes - 1}], "
                f"found range [{self.data.min()}, {self.data.max()}]"
            )
        self.data = self.data.astype(np.uint8)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise UsageError(f"spacing must be three positive numbers, got {self.spacing}")
        self.orientation = validate_orientation(self.orientation)

    @property
    def extent(self) -> tuple[int, int, int]:
        return self.data.shape

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.data.reshape(-1), minlength=self.num_classes)
