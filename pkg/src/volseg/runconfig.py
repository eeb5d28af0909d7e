"""Run configuration: one JSON document driving the whole pipeline.

The document has six sections — ``data``, ``preprocess``, ``sampler``,
``augment``, ``model``, ``train`` — every field of which has a default, so
``{}`` is a valid config. Unknown sections or keys are rejected with the
list of valid names. Individual values can be overridden on the command
line with dotted keys, e.g. ``train.batch_size=2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import ConfigurationError, UsageError
from .models.config import ModelConfig, VARIANTS, desk_config, full_config
from .preprocess import PreprocessConfig
from .sampling import AugmentConfig, SamplerConfig
from .train import TrainConfig

__all__ = ["RunConfig", "load_run_config", "parse_override", "apply_overrides"]

SECTIONS = ("data", "preprocess", "sampler", "augment", "model", "train")

_DATA_KEYS = {
    "manifest": None,
    "dir": "dataset",
    "n_cases": 8,
    "extent": (96, 96, 96),
    "spacing": (1.0, 1.0, 1.0),
    "noise_sigma": 10.0,
    "seed": 0,
    "fractions": (0.5, 0.25, 0.25),
    "jitter": True,
}
_PREPROCESS_KEYS = ("orientation", "spacing", "window")
_SAMPLER_KEYS = ("patch", "ratios")
_AUGMENT_KEYS = ("enabled", "flip_prob", "rot_prob", "scale_range", "shift_range")
_MODEL_KEYS = ("preset",) + ModelConfig.field_names()
_TRAIN_KEYS = (
    "batch_size",
    "max_iterations",
    "val_interval",
    "lr",
    "weight_decay",
    "seed",
    "roi",
    "overlap",
    "target_dsc",
)

_SECTION_KEYS = {
    "data": tuple(_DATA_KEYS),
    "preprocess": _PREPROCESS_KEYS,
    "sampler": _SAMPLER_KEYS,
    "augment": _AUGMENT_KEYS,
    "model": _MODEL_KEYS,
    "train": _TRAIN_KEYS,
}


def _as_tuple(value):
    if isinstance(value, list):
        return tuple(_as_tuple(v) for v in value)
    return value


def _check_keys(section: str, given: dict) -> None:
    valid = _SECTION_KEYS[section]
    unknown = sorted(set(given) - set(valid))
    if unknown:
        raise ConfigurationError(
            f"unknown key(s) {unknown} in section '{section}'; valid keys: {sorted(valid)}"
        )


@dataclass
class RunConfig:
    """Validated, fully-resolved settings plus the merged raw document."""

    data: dict
    preprocess: PreprocessConfig
    sampler: SamplerConfig
    augment_enabled: bool
    augment: AugmentConfig
    model: ModelConfig
    train: TrainConfig
    document: dict = field(default_factory=dict)


def parse_override(text: str):
    """Split ``section.key=value``; the value parses as JSON, else as a string."""
    if "=" not in text:
        raise UsageError(f"override '{text}' must look like section.key=value")
    key, _, raw = text.partition("=")
    parts = key.split(".")
    if len(parts) != 2 or not all(parts):
        raise UsageError(f"override key '{key}' must be a dotted pair like train.batch_size")
    section, name = parts
    if section not in SECTIONS:
        raise ConfigurationError(
            f"unknown section '{section}' in override '{text}'; valid sections: {list(SECTIONS)}"
        )
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return section, name, value


def apply_overrides(document: dict, overrides) -> dict:
    for text in overrides:
        section, name, value = parse_override(text)
        document.setdefault(section, {})[name] = value
    return document


def _build(document: dict) -> RunConfig:
    unknown = sorted(set(document) - set(SECTIONS))
    if unknown:
        raise ConfigurationError(
            f"unknown config section(s) {unknown}; valid sections: {list(SECTIONS)}"
        )
    for section in SECTIONS:
        part = document.get(section, {})
        if not isinstance(part, dict):
            raise ConfigurationError(f"section '{section}' must be a JSON object")
        _check_keys(section, part)

    data = dict(_DATA_KEYS)
    data.update({k: _as_tuple(v) for k, v in document.get("data", {}).items()})

    pre_part = {k: _as_tuple(v) for k, v in document.get("preprocess", {}).items()}
    preprocess = PreprocessConfig(**pre_part)

    samp_part = {k: _as_tuple(v) for k, v in document.get("sampler", {}).items()}
    sampler = SamplerConfig(**samp_part)

    aug_part = {k: _as_tuple(v) for k, v in document.get("augment", {}).items()}
    augment_enabled = bool(aug_part.pop("enabled", True))
    augment = AugmentConfig(**aug_part)

    model_part = {k: _as_tuple(v) for k, v in document.get("model", {}).items()}
    preset = model_part.pop("preset", "full")
    if preset not in ("full", "desk"):
        raise ConfigurationError(f"model.preset must be 'full' or 'desk', got '{preset}'")
    variant = model_part.pop("variant", "segresnet")
    if variant not in VARIANTS:
        raise ConfigurationError(f"model.variant must be one of {list(VARIANTS)}, got '{variant}'")
    factory = full_config if preset == "full" else desk_config
    model = factory(variant, **model_part)

    train_part = {k: _as_tuple(v) for k, v in document.get("train", {}).items()}
    train_part.setdefault("roi", sampler.patch)
    train = TrainConfig(
        **train_part, sampler=sampler, augment=augment_enabled, augment_cfg=augment
    )

    return RunConfig(
        data=data,
        preprocess=preprocess,
        sampler=sampler,
        augment_enabled=augment_enabled,
        augment=augment,
        model=model,
        train=train,
        document=document,
    )


def load_run_config(path=None, overrides=()) -> RunConfig:
    """Read the JSON config (``{}`` when ``path`` is None), apply overrides."""
    if path is None:
        document = {}
    else:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                document = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigurationError(f"config '{path}' is not valid JSON: {err}") from err
        if not isinstance(document, dict):
            raise ConfigurationError(f"config '{path}' must be a JSON object at the top level")
    document = apply_overrides(document, overrides)
    return _build(document)
