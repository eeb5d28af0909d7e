"""Synthetic abdominal phantoms: ellipsoidal organs in a noisy background.

A phantom is a set of pairwise disjoint axis-aligned ellipsoids, one per
foreground class, each with a distinct mean intensity. Voxel centres sit at
``(index + 0.5) * spacing`` so discrete organ volumes converge to the
closed-form ellipsoid volume as resolution grows. With ``noise_sigma`` zero
the image is piecewise constant and thresholding it recovers the label map
exactly; with noise the intensities get independent Gaussian perturbations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from ..errors import ConfigurationError
from .volume import CLASS_IDS, LabelVolume, Volume

__all__ = ["OrganSpec", "PhantomSpec", "default_spec", "generate_phantom"]


@dataclass(frozen=True)
class OrganSpec:
    """One ellipsoidal organ: class id, centre and radii in millimetres."""

    class_id: int
    name: str
    center: tuple[float, float, float]
    radii: tuple[float, float, float]
    intensity: float

    def volume_mm3(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radii[0] * self.radii[1] * self.radii[2]


@dataclass(frozen=True)
class PhantomSpec:
    """Geometry and intensity model for one synthetic case."""

    extent: tuple[int, int, int] = (96, 96, 96)
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    organs: tuple[OrganSpec, ...] = ()
    background_intensity: float = -80.0
    noise_sigma: float = 10.0


_DEFAULT_ORGANS = (
    OrganSpec(CLASS_IDS["liver"], "liver", (30.0, 34.0, 50.0), (21.0, 18.0, 20.0), 90.0),
    OrganSpec(CLASS_IDS["left_kidney"], "left_kidney", (68.0, 68.0, 30.0), (10.0, 11.0, 12.0), 40.0),
    OrganSpec(CLASS_IDS["right_kidney"], "right_kidney", (28.0, 68.0, 30.0), (10.0, 11.0, 12.0), 55.0),
    OrganSpec(CLASS_IDS["spleen"], "spleen", (70.0, 30.0, 48.0), (11.0, 12.0, 13.0), 20.0),
    OrganSpec(CLASS_IDS["bowel"], "bowel", (48.0, 68.0, 72.0), (24.0, 14.0, 11.0), -30.0),
)


def default_spec(
    extent=(96, 96, 96), spacing=(1.0, 1.0, 1.0), noise_sigma=10.0
) -> PhantomSpec:
    """The five-organ reference phantom, rescaled to the requested geometry.

    Organ positions and radii are defined on a 96 mm box and scale linearly
    with the physical extent, so smaller test volumes keep the same layout.
    """
    extent = tuple(int(e) for e in extent)
    spacing = tuple(float(s) for s in spacing)
    phys = tuple(e * s for e, s in zip(extent, spacing))
    scale = tuple(p / 96.0 for p in phys)
    organs = tuple(
        replace(
            o,
            center=tuple(c * s for c, s in zip(o.center, scale)),
            radii=tuple(r * s for r, s in zip(o.radii, scale)),
        )
        for o in _DEFAULT_ORGANS
    )
    return PhantomSpec(extent=extent, spacing=spacing, organs=organs, noise_sigma=noise_sigma)


def _ellipsoid_mask(extent, spacing, center, radii) -> np.ndarray:
    grids = [
        ((np.arange(extent[a]) + 0.5) * spacing[a] - center[a]) / radii[a] for a in range(3)
    ]
    gx, gy, gz = np.meshgrid(*grids, indexing="ij")
    return gx * gx + gy * gy + gz * gz <= 1.0


def jitter_spec(spec: PhantomSpec, rng: np.random.Generator, pos_mm=4.0, radius_frac=0.1) -> PhantomSpec:
    """Randomly perturb organ centres and radii (for multi-case datasets)."""
    organs = tuple(
        replace(
            o,
            center=tuple(c + rng.uniform(-pos_mm, pos_mm) for c in o.center),
            radii=tuple(r * rng.uniform(1.0 - radius_frac, 1.0 + radius_frac) for r in o.radii),
        )
        for o in spec.organs
    )
    return replace(spec, organs=organs)


def generate_phantom(spec: PhantomSpec, seed: int = 0) -> tuple[Volume, LabelVolume]:
    """Render a spec into an image/label pair.

    Raises :class:`~volseg.errors.ConfigurationError` if any two organs
    overlap or an organ pokes outside the field of view.
    """
    extent, spacing = spec.extent, spec.spacing
    phys = tuple(e * s for e, s in zip(extent, spacing))
    labels = np.zeros(extent, dtype=np.uint8)
    image = np.full(extent, spec.background_intensity, dtype=np.float32)

    for organ in spec.organs:
        for a in range(3):
            if organ.center[a] - organ.radii[a] < 0 or organ.center[a] + organ.radii[a] > phys[a]:
                raise ConfigurationError(
                    f"organ '{organ.name}' exceeds the field of view along axis {a}"
                )
        mask = _ellipsoid_mask(extent, spacing, organ.center, organ.radii)
        if np.any(labels[mask]):
            raise ConfigurationError(f"organ '{organ.name}' overlaps a previously placed organ")
        labels[mask] = organ.class_id
        image[mask] = organ.intensity

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(seed)
        image = image + rng.normal(0.0, spec.noise_sigma, extent).astype(np.float32)

    return (
        Volume(image, spacing, "RAS"),
        LabelVolume(labels, spacing, "RAS"),
    )
