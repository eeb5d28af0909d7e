"""Training loop, evaluation, and the multi-model benchmark runner.

An iteration is one optimizer step on one batch; ``RunReport.iterations``
always equals the number of optimizer steps executed. With a fixed seed the
whole train→evaluate path is deterministic (wall-clock time aside).
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .core.optim import AdamW
from .core.tensor import Tensor, backward
from .data import nifti
from .data.manifest import DatasetManifest
from .data.volume import REPORT_ORDER, LabelVolume, Volume
from .errors import UsageError
from .inference import sliding_window_infer
from .metrics import dice_report, segmentation_loss
from .preprocess import PreprocessConfig, preprocess_case
from .sampling import AugmentConfig, PatchSampler, SamplerConfig, augment

__all__ = [
    "TrainConfig",
    "RunReport",
    "TrainResult",
    "BenchResult",
    "DISPLAY_NAMES",
    "desk_train_config",
    "config_hash",
    "load_cases",
    "train",
    "evaluate",
    "bench",
]

DISPLAY_NAMES = {
    "unetr": "UNETR",
    "swinunetr": "SwinUNETR",
    "unetrpp": "UNETR++",
    "segresnet": "SegResNet",
}

BENCH_CSV_HEADER = "model,spleen,right_kidney,left_kidney,liver,bowel,average,iterations"
BENCH_MD_HEADER = "| Model | Spleen | Right Kidney | Left Kidney | Liver | Bowel | Average | Iterations |"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 6
    max_iterations: int = 10_000
    val_interval: int = 250
    lr: float = 1e-4
    weight_decay: float = 1e-5
    seed: int = 0
    roi: tuple[int, int, int] = (96, 96, 96)
    overlap: float = 0.5
    target_dsc: float | None = None
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: bool = True
    augment_cfg: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.batch_size < 1:
            raise UsageError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_iterations < 1:
            raise UsageError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.val_interval < 1:
            raise UsageError(f"val_interval must be >= 1, got {self.val_interval}")
        if self.lr <= 0:
            raise UsageError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.overlap < 1.0:
            raise UsageError(f"overlap must lie in [0, 1), got {self.overlap}")
        if self.target_dsc is not None and not 0.0 < self.target_dsc <= 1.0:
            raise UsageError(f"target_dsc must lie in (0, 1], got {self.target_dsc}")


def desk_train_config(**overrides) -> TrainConfig:
    """Small-footprint preset: 32³ patches, batch 2, faster learning rate."""
    base = dict(
        batch_size=2,
        max_iterations=200,
        val_interval=25,
        lr=1e-3,
        roi=(32, 32, 32),
        sampler=SamplerConfig(patch=(32, 32, 32)),
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass(frozen=True)
class RunReport:
    """Per-organ and mean DSC of one model on one named split."""

    model: str
    split: str
    per_organ: dict[str, float]
    mean: float
    mean_present: float
    iterations: int
    wall_seconds: float
    config_hash: str

    def csv_row(self) -> str:
        organs = ",".join(f"{self.per_organ[o]:.4f}" for o in REPORT_ORDER)
        return f"{self.model},{organs},{self.mean:.4f},{self.iterations}"

    def markdown_row(self) -> str:
        name = DISPLAY_NAMES.get(self.model, self.model)
        organs = " | ".join(f"{self.per_organ[o]:.4f}" for o in REPORT_ORDER)
        return f"| {name} | {organs} | {self.mean:.4f} | {self.iterations} |"


@dataclass
class TrainResult:
    report: RunReport
    loss_history: list[float]
    val_history: list[tuple[int, float]]
    iterations_to_target: int | None
    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]


def config_hash(train_cfg: TrainConfig, model_cfg=None) -> str:
    """First 12 hex digits of a canonical-JSON SHA-256 of the run settings."""
    doc = {
        "train": asdict(train_cfg),
        "model": asdict(model_cfg) if model_cfg is not None else None,
    }
    blob = json.dumps(doc, sort_keys=True, default=str).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:12]


def load_cases(
    manifest: DatasetManifest, split: str, preprocess: PreprocessConfig = PreprocessConfig()
) -> list[tuple[str, Volume, LabelVolume]]:
    """Read and preprocess every case of a split; empty list if none."""
    cases = []
    for entry in manifest.split(split):
        image = nifti.read_volume(manifest.resolve(entry.image))
        label = nifti.read_label(manifest.resolve(entry.label))
        cases.append((entry.case_id, *preprocess_case(image, label, preprocess)))
    return cases


def _split_scores(model, cases, roi, overlap):
    """Case-averaged per-organ DSC, plain mean, and present-organ mean."""
    reports = [
        dice_report(sliding_window_infer(model, image, roi, overlap), label)
        for _, image, label in cases
    ]
    per_organ = {
        organ: float(np.mean([r.organs[organ] for r in reports])) for organ in REPORT_ORDER
    }
    mean = float(np.mean([r.mean for r in reports]))
    present = [r.mean_present for r in reports if np.isfinite(r.mean_present)]
    mean_present = float(np.mean(present)) if present else float("nan")
    return per_organ, mean, mean_present


def _selection_metric(mean: float, mean_present: float) -> float:
    """Validation score: present-organ mean unless nothing is annotated.

    Excluding organs absent from both prediction and ground truth keeps the
    score honest on small patches, where absent organs would otherwise
    contribute free perfect overlaps. On full cases with every organ present
    the two means coincide.
    """
    return mean_present if np.isfinite(mean_present) else mean


def train(
    model,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    model_cfg=None,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> TrainResult:
    """Run ``cfg.max_iterations`` optimizer steps (fewer only if ``target_dsc``
    is reached), retaining the best-validation checkpoint.

    Validation runs every ``cfg.val_interval`` steps on the ``val`` split,
    falling back to the training split when no validation cases exist and a
    target is set. The returned model state (and ``TrainResult.params``/
    ``buffers``) is the best checkpoint seen.
    """
    start = time.perf_counter()
    train_cases = load_cases(manifest, "train", preprocess)
    if not train_cases:
        raise UsageError("training split is empty")
    val_cases = load_cases(manifest, "val", preprocess)

    samplers = [PatchSampler(image, label, cfg.sampler) for _, image, label in train_cases]
    rng = np.random.default_rng(cfg.seed)
    opt = AdamW(
        dict(model.named_parameters()), lr=cfg.lr, weight_decay=cfg.weight_decay
    )
    name = model_cfg.variant if model_cfg is not None else type(model).__name__.lower()
    chash = config_hash(cfg, model_cfg)

    loss_history: list[float] = []
    val_history: list[tuple[int, float]] = []
    best: tuple[float, dict, dict] | None = None
    iterations_to_target: int | None = None
    eval_cases = val_cases if val_cases else train_cases
    interim_eval = bool(val_cases) or cfg.target_dsc is not None

    steps = 0
    for it in range(1, cfg.max_iterations + 1):
        model.train()
        images, labels = [], []
        for _ in range(cfg.batch_size):
            sampler = samplers[int(rng.integers(len(samplers)))]
            patch = sampler.sample(rng)
            image, label = patch.image, patch.label
            if cfg.augment:
                image, label = augment(image, label, rng, cfg.augment_cfg)
            images.append(image)
            labels.append(label)
        x = Tensor(np.stack(images)[:, None].astype(np.float32))
        y = np.stack(labels).astype(np.int64)

        loss = segmentation_loss(model(x), y)
        model.zero_grad()
        backward(loss)
        opt.step()
        steps = it
        loss_history.append(float(loss.data))

        if interim_eval and (it % cfg.val_interval == 0 or it == cfg.max_iterations):
            model.eval()
            _, mean, mean_present = _split_scores(model, eval_cases, cfg.roi, cfg.overlap)
            metric = _selection_metric(mean, mean_present)
            val_history.append((it, metric))
            if best is None or metric > best[0]:
                params, buffers = model.state_arrays()
                best = (
                    metric,
                    {k: v.copy() for k, v in params.items()},
                    {k: v.copy() for k, v in buffers.items()},
                )
            if cfg.target_dsc is not None and metric >= cfg.target_dsc:
                iterations_to_target = it
                break

    if best is not None:
        model.load_state_arrays(best[1], best[2])
    model.eval()
    split = "val" if val_cases else "train"
    per_organ, mean, mean_present = _split_scores(model, eval_cases, cfg.roi, cfg.overlap)
    report = RunReport(
        model=name,
        split=split,
        per_organ=per_organ,
        mean=mean,
        mean_present=mean_present,
        iterations=steps,
        wall_seconds=time.perf_counter() - start,
        config_hash=chash,
    )
    params, buffers = model.state_arrays()
    return TrainResult(
        report=report,
        loss_history=loss_history,
        val_history=val_history,
        iterations_to_target=iterations_to_target,
        params={k: v.copy() for k, v in params.items()},
        buffers={k: v.copy() for k, v in buffers.items()},
    )


def evaluate(
    model,
    manifest: DatasetManifest,
    split: str,
    roi=(96, 96, 96),
    overlap: float = 0.5,
    preprocess: PreprocessConfig = PreprocessConfig(),
    model_name: str = "model",
    iterations: int = 0,
    hash_value: str = "",
) -> RunReport:
    """Sliding-window inference per case, DiceReports averaged over the split."""
    start = time.perf_counter()
    cases = load_cases(manifest, split, preprocess)
    if not cases:
        raise UsageError(f"split '{split}' is empty")
    model.eval()
    per_organ, mean, mean_present = _split_scores(model, cases, roi, overlap)
    return RunReport(
        model=model_name,
        split=split,
        per_organ=per_organ,
        mean=mean,
        mean_present=mean_present,
        iterations=iterations,
        wall_seconds=time.perf_counter() - start,
        config_hash=hash_value,
    )


@dataclass
class BenchResult:
    reports: list[RunReport]
    results: list[TrainResult]

    def to_csv(self) -> str:
        lines = [BENCH_CSV_HEADER] + [r.csv_row() for r in self.reports]
        return "\n".join(lines) + "\n"

    def to_markdown(self) -> str:
        sep = "|" + " --- |" * 8
        lines = [BENCH_MD_HEADER, sep] + [r.markdown_row() for r in self.reports]
        return "\n".join(lines) + "\n"


def bench(
    model_cfgs,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    preprocess: PreprocessConfig = PreprocessConfig(),
) -> BenchResult:
    """Train and evaluate each model under the identical configuration.

    Every run builds its model and draws its patch sequence from the same
    seed, so per-model results do not depend on listing order.
    """
    from .models import build

    model_cfgs = list(model_cfgs)
    if not model_cfgs:
        raise UsageError("bench needs at least one model config")
    reports, results = [], []
    for mcfg in model_cfgs:
        model = build(mcfg, seed=cfg.seed)
        result = train(model, manifest, cfg, model_cfg=mcfg, preprocess=preprocess)
        reports.append(result.report)
        results.append(result)
    return BenchResult(reports=reports, results=results)
