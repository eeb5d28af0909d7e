"""Volume containers, NIfTI-1 I/O, phantom generation, dataset manifests."""

from .manifest import (
    CaseEntry,
    DatasetManifest,
    class_distribution,
    generate_dataset,
    load_manifest,
    save_manifest,
    split_manifest,
)
from .nifti import read_label, read_volume, write_label, write_volume
from .phantom import OrganSpec, PhantomSpec, default_spec, generate_phantom
from .volume import (
    CLASS_IDS,
    CLASS_NAMES,
    NUM_CLASSES,
    REPORT_ORDER,
    LabelVolume,
    Volume,
    validate_orientation,
)

__all__ = [
    "Volume",
    "LabelVolume",
    "CLASS_NAMES",
    "CLASS_IDS",
    "NUM_CLASSES",
    "REPORT_ORDER",
    "validate_orientation",
    "read_volume",
    "read_label",
    "write_volume",
    "write_label",
    "OrganSpec",
    "PhantomSpec",
    "default_spec",
    "generate_phantom",
    "CaseEntry",
    "DatasetManifest",
    "split_manifest",
    "save_manifest",
    "load_manifest",
    "class_distribution",
    "generate_dataset",
]
