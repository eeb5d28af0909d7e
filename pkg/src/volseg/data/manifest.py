"""Dataset manifests: JSON case listings with split assignments.

Paths inside a manifest are stored relative to the manifest file so a
dataset directory can be moved wholesale. Loading verifies every referenced
file exists.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from ..errors import ConfigurationError, UsageError
from . import nifti
from .phantom import default_spec, generate_phantom, jitter_spec
from .volume import CLASS_NAMES, NUM_CLASSES

__all__ = [
    "CaseEntry",
    "DatasetManifest",
    "split_manifest",
    "save_manifest",
    "load_manifest",
    "class_distribution",
    "generate_dataset",
]

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class CaseEntry:
    case_id: str
    image: str
    label: str
    split: str


@dataclass
class DatasetManifest:
    seed: int
    entries: list[CaseEntry]
    root: str = "."

    def split(self, name: str) -> list[CaseEntry]:
        if name not in SPLITS:
            raise UsageError(f"unknown split {name!r}; expected one of {SPLITS}")
        return [e for e in self.entries if e.split == name]

    def resolve(self, relpath: str) -> str:
        return os.path.normpath(os.path.join(self.root, relpath))

    def case_ids(self) -> list[str]:
        return [e.case_id for e in self.entries]


def split_manifest(cases, fractions, seed: int) -> DatasetManifest:
    """Shuffle cases and assign train/val/test splits by fraction.

    ``cases`` is a sequence of ``(case_id, image_path, label_path)``. The
    first two splits get ``round(fraction * n)`` cases, the test split takes
    the remainder; the same seed always yields the same assignment.
    """
    cases = list(cases)
    if not cases:
        raise UsageError("split_manifest needs at least one case")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ConfigurationError(f"fractions must be three non-negatives, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-6:
        raise ConfigurationError(f"fractions must sum to 1, got {sum(fractions)}")
    ids = [c[0] for c in cases]
    if len(set(ids)) != len(ids):
        raise UsageError("case ids must be unique")

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(cases))
    n = len(cases)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n_train + n_val > n:
        n_val = n - n_train
    bounds = [(0, n_train, "train"), (n_train, n_train + n_val, "val"), (n_train + n_val, n, "test")]
    entries = []
    for lo, hi, split in bounds:
        for idx in order[lo:hi]:
            cid, image, label = cases[idx]
            entries.append(CaseEntry(str(cid), str(image), str(label), split))
    return DatasetManifest(seed=seed, entries=entries)


def save_manifest(path, manifest: DatasetManifest) -> None:
    doc = {
        "seed": manifest.seed,
        "cases": [
            {"case_id": e.case_id, "image": e.image, "label": e.label, "split": e.split}
            for e in manifest.entries
        ],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> DatasetManifest:
    """Read a manifest and verify every referenced file exists."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigurationError(f"manifest '{path}' is not valid JSON: {err}") from err
    for key in ("seed", "cases"):
        if key not in doc:
            raise ConfigurationError(f"manifest '{path}' is missing the '{key}' field")
    root = os.path.dirname(os.path.abspath(path))
    entries = []
    for i, case in enumerate(doc["cases"]):
        missing = {"case_id", "image", "label", "split"} - set(case)
        if missing:
            raise ConfigurationError(f"manifest case {i} is missing fields {sorted(missing)}")
        if case["split"] not in SPLITS:
            raise ConfigurationError(
                f"manifest case '{case['case_id']}' has unknown split '{case['split']}'"
            )
        entries.append(CaseEntry(case["case_id"], case["image"], case["label"], case["split"]))
    manifest = DatasetManifest(seed=int(doc["seed"]), entries=entries, root=root)
    for e in manifest.entries:
        for p in (e.image, e.label):
            full = manifest.resolve(p)
            if not os.path.isfile(full):
                raise UsageError(f"manifest references missing file '{full}' (case '{e.case_id}')")
    return manifest


def class_distribution(manifest: DatasetManifest, splits=SPLITS) -> list[dict]:
    """Per-split, per-class voxel counts and the number of cases containing it."""
    rows = []
    for split in splits:
        voxels = np.zeros(NUM_CLASSES, dtype=np.int64)
        cases = np.zeros(NUM_CLASSES, dtype=np.int64)
        for e in manifest.split(split):
            counts = nifti.read_label(manifest.resolve(e.label)).class_counts()
            voxels += counts
            cases += counts > 0
        for cid in range(NUM_CLASSES):
            rows.append(
                {
                    "split": split,
                    "class_id": cid,
                    "class_name": CLASS_NAMES[cid],
                    "voxels": int(voxels[cid]),
                    "cases": int(cases[cid]),
                }
            )
    return rows


def generate_dataset(
    out_dir,
    n_cases: int,
    extent=(96, 96, 96),
    spacing=(1.0, 1.0, 1.0),
    noise_sigma: float = 10.0,
    seed: int = 0,
    fractions=(0.7, 0.2, 0.1),
    jitter: bool = True,
) -> DatasetManifest:
    """Render ``n_cases`` phantoms to NIfTI pairs plus a manifest on disk."""
    if n_cases < 1:
        raise UsageError("need at least one case")
    os.makedirs(out_dir, exist_ok=True)
    base = default_spec(extent, spacing, noise_sigma)
    cases = []
    seq = np.random.SeedSequence(seed)
    children = seq.spawn(n_cases)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        spec = base
        if jitter:
            for _ in range(20):
                try:
                    candidate = jitter_spec(base, rng)
                    generate_phantom(replace(candidate, noise_sigma=0.0), seed=0)
                    spec = candidate
                    break
                except ConfigurationError:
                    continue
        image, label = generate_phantom(spec, seed=int(rng.integers(2**31)))
        cid = f"case_{i:03d}"
        image_path = f"{cid}_img.nii.gz"
        label_path = f"{cid}_lbl.nii.gz"
        nifti.write_volume(os.path.join(out_dir, image_path), image)
        nifti.write_label(os.path.join(out_dir, label_path), label)
        cases.append((cid, image_path, label_path))
    manifest = split_manifest(cases, fractions, seed)
    manifest.root = str(out_dir)
    save_manifest(os.path.join(out_dir, "manifest.json"), manifest)
    return manifest
