"""Command line entry point exposing the full pipeline.

Every subcommand reads one JSON config (all fields defaulted; override any
value with ``--set section.key=value``), writes its artifacts under ``--out``,
and always leaves a ``run_manifest.json`` there recording the effective
config, seed, and artifact paths, so a run can be reproduced from the
manifest alone.

Exit codes: 0 ok, 1 usage/configuration, 2 data/format/numerics, 3 failed
verification check.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .core.checks import PRIMITIVE_NAMES, primitive_case, run_primitive_suite
from .core.gradcheck import grad_check
from .core.serialize import load_checkpoint, save_checkpoint
from .data import nifti
from .data.manifest import generate_dataset, load_manifest, save_manifest
from .data.volume import REPORT_ORDER
from .errors import CheckFailureError, UsageError, VolsegError
from .inference import export_slices, sliding_window_infer
from .metrics import dice_report
from .models import VARIANTS, build, check_shapes, desk_config, full_config, model_grad_check
from .preprocess import preprocess_case
from .runconfig import RunConfig, load_run_config
from .sampling import PatchSampler
from .train import bench, evaluate, train

__all__ = ["main", "build_parser"]


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems through the package error type."""

    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", default=None, help="JSON config file (defaults empty)")
    sub.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config value (repeatable)",
    )
    sub.add_argument("--seed", type=int, default=None, help="override data and train seeds")
    sub.add_argument("--out", default=None, help="output directory (default volseg_out/<command>)")


def build_parser() -> _Parser:
    parser = _Parser(prog="volseg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"volseg {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = subs.add_parser("phantom", help="generate a synthetic dataset")
    p.add_argument("--cases", type=int, default=None, help="number of cases (default from config)")
    _add_common(p)

    p = subs.add_parser("preprocess", help="reorient/resample/normalize a dataset")
    p.add_argument("--manifest", default=None, help="dataset manifest (default from config)")
    _add_common(p)

    p = subs.add_parser("sample-stats", help="empirical patch-sampler class frequencies")
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="train")
    p.add_argument("--draws", type=int, default=1000)
    _add_common(p)

    p = subs.add_parser("shapecheck", help="verify per-stage output shapes")
    p.add_argument("--model", default=None, choices=VARIANTS + ("all",), help="variant (default from config)")
    p.add_argument("--size", type=int, default=None, help="cubic input extent (default model img_size)")
    _add_common(p)

    p = subs.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--op", default=None, choices=PRIMITIVE_NAMES, help="check one primitive")
    p.add_argument("--model", default=None, choices=VARIANTS, help="check one desk-scale model+loss")
    p.add_argument("--coords", type=int, default=64, help="coordinates sampled per check")
    _add_common(p)

    p = subs.add_parser("train", help="train one model")
    p.add_argument("--manifest", default=None)
    _add_common(p)

    p = subs.add_parser("eval", help="evaluate a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="val")
    _add_common(p)

    p = subs.add_parser("bench", help="train+evaluate several models identically")
    p.add_argument("--manifest", default=None)
    p.add_argument(
        "--variants",
        default=",".join(VARIANTS),
        help="comma-separated variants (default: all four)",
    )
    _add_common(p)

    p = subs.add_parser("export-slices", help="write overlay images for one case")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=None)
    p.add_argument("--split", default="test")
    p.add_argument("--case", default=None, help="case id (default: first case of the split)")
    p.add_argument("--z", default=None, help="comma-separated slice indices (default: quartiles)")
    _add_common(p)

    return parser


def _write_json(path: str, obj) -> str:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return path


def _require_manifest(args, rc: RunConfig):
    path = getattr(args, "manifest", None) or rc.data.get("manifest")
    if not path:
        raise UsageError("a dataset manifest is required: pass --manifest or set data.manifest")
    return load_manifest(path)


def _dataset(args, rc: RunConfig, out_dir: str, artifacts: list):
    """Load the configured manifest, or synthesise a dataset under out/."""
    path = getattr(args, "manifest", None) or rc.data.get("manifest")
    if path:
        return load_manifest(path)
    dataset_dir = os.path.join(out_dir, rc.data["dir"])
    manifest = generate_dataset(
        dataset_dir,
        n_cases=int(rc.data["n_cases"]),
        extent=rc.data["extent"],
        spacing=rc.data["spacing"],
        noise_sigma=float(rc.data["noise_sigma"]),
        seed=int(rc.data["seed"]),
        fractions=rc.data["fractions"],
        jitter=bool(rc.data["jitter"]),
    )
    artifacts.append(os.path.join(dataset_dir, "manifest.json"))
    return manifest


def _save_run_checkpoint(path: str, result, model_cfg) -> None:
    meta = {
        "variant": model_cfg.variant,
        "config_hash": result.report.config_hash,
        "iterations": result.report.iterations,
    }
    save_checkpoint(path, result.params, result.buffers, meta)


def _load_run_checkpoint(path: str, rc: RunConfig, seed: int):
    params, buffers, meta = load_checkpoint(path)
    variant = meta.get("variant")
    if variant and variant != rc.model.variant:
        raise UsageError(
            f"checkpoint was trained as '{variant}' but the config selects '{rc.model.variant}'"
        )
    model = build(rc.model, seed=seed)
    model.load_state_arrays(params, buffers)
    return model.eval()


def _print_report(report) -> None:
    for organ in REPORT_ORDER:
        print(f"  {organ:>13s}  {report.per_organ[organ]:.4f}")
    print(f"  {'average':>13s}  {report.mean:.4f}")
    print(
        f"  split={report.split} iterations={report.iterations} "
        f"wall={report.wall_seconds:.1f}s config={report.config_hash}"
    )


def _cmd_phantom(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    n_cases = args.cases if args.cases is not None else int(rc.data["n_cases"])
    manifest = generate_dataset(
        out_dir,
        n_cases=n_cases,
        extent=rc.data["extent"],
        spacing=rc.data["spacing"],
        noise_sigma=float(rc.data["noise_sigma"]),
        seed=int(rc.data["seed"]),
        fractions=rc.data["fractions"],
        jitter=bool(rc.data["jitter"]),
    )
    artifacts.append(os.path.join(out_dir, "manifest.json"))
    for entry in manifest.entries:
        artifacts.append(manifest.resolve(entry.image))
        artifacts.append(manifest.resolve(entry.label))
    counts = {s: len(manifest.split(s)) for s in ("train", "val", "test")}
    print(f"wrote {n_cases} cases to {out_dir} (splits: {counts})")


def _cmd_preprocess(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    manifest = _require_manifest(args, rc)
    entries = []
    for entry in manifest.entries:
        image = nifti.read_volume(manifest.resolve(entry.image))
        label = nifti.read_label(manifest.resolve(entry.label))
        pre_img, pre_lab = preprocess_case(image, label, rc.preprocess)
        img_name = f"{entry.case_id}_img.nii.gz"
        lab_name = f"{entry.case_id}_lbl.nii.gz"
        nifti.write_volume(os.path.join(out_dir, img_name), pre_img)
        nifti.write_label(os.path.join(out_dir, lab_name), pre_lab)
        artifacts.append(os.path.join(out_dir, img_name))
        artifacts.append(os.path.join(out_dir, lab_name))
        entries.append(entry.__class__(entry.case_id, img_name, lab_name, entry.split))
        print(f"{entry.case_id}: {image.extent} @ {image.spacing} -> {pre_img.extent} @ {pre_img.spacing}")
    out_manifest = manifest.__class__(seed=manifest.seed, entries=entries, root=out_dir)
    save_manifest(os.path.join(out_dir, "manifest.json"), out_manifest)
    artifacts.append(os.path.join(out_dir, "manifest.json"))


def _cmd_sample_stats(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    if args.draws < 1:
        raise UsageError(f"--draws must be >= 1, got {args.draws}")
    manifest = _require_manifest(args, rc)
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"split '{args.split}' is empty")
    samplers = []
    for entry in entries:
        image = nifti.read_volume(manifest.resolve(entry.image))
        label = nifti.read_label(manifest.resolve(entry.label))
        pre_img, pre_lab = preprocess_case(image, label, rc.preprocess)
        samplers.append(PatchSampler(pre_img, pre_lab, rc.sampler))
    rng = np.random.default_rng(rc.train.seed)
    hits = np.zeros(len(rc.sampler.ratios), dtype=np.int64)
    for _ in range(args.draws):
        sampler = samplers[int(rng.integers(len(samplers)))]
        hits[sampler.sample(rng).center_class] += 1
    expected = np.mean([s.class_probabilities for s in samplers], axis=0)
    empirical = hits / args.draws
    rows = []
    print(f"{'class':>6s} {'expected':>9s} {'empirical':>10s} {'abs diff':>9s}")
    for cid, (e, m) in enumerate(zip(expected, empirical)):
        print(f"{cid:>6d} {e:>9.4f} {m:>10.4f} {abs(e - m):>9.4f}")
        rows.append({"class_id": cid, "expected": float(e), "empirical": float(m)})
    artifacts.append(
        _write_json(os.path.join(out_dir, "sample_stats.json"), {"draws": args.draws, "rows": rows})
    )


def _model_cfg_for(rc: RunConfig, variant: str):
    part = dict(rc.document.get("model", {}))
    part.pop("variant", None)
    preset = part.pop("preset", "full")
    factory = full_config if preset == "full" else desk_config
    return factory(variant, **{k: _tupled(v) for k, v in part.items()})


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _cmd_shapecheck(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    choice = args.model or rc.model.variant
    variants = VARIANTS if choice == "all" else (choice,)
    seed = rc.train.seed
    doc = []
    failed = []
    for variant in variants:
        cfg = _model_cfg_for(rc, variant)
        if args.size is not None:
            cfg = cfg.replace(img_size=args.size)
        rows, ok = check_shapes(cfg, seed=seed)
        print(f"{variant} (input {cfg.img_size}^3):")
        for stage, want, got, row_ok in rows:
            status = "PASS" if row_ok else "FAIL"
            print(f"  {stage:>12s}  expected {str(want):>22s}  actual {str(got):>22s}  {status}")
        doc.append({"variant": variant, "ok": ok, "rows": [list(r) for r in rows]})
        if not ok:
            failed.append(variant)
    artifacts.append(_write_json(os.path.join(out_dir, "shapecheck.json"), doc))
    if failed:
        raise CheckFailureError(f"shape mismatch in: {', '.join(failed)}")


def _cmd_gradcheck(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    seed = rc.train.seed
    doc = []
    failed = []
    if args.op is not None and args.model is not None:
        raise UsageError("pass either --op or --model, not both")
    if args.op is not None:
        f, x = primitive_case(args.op, seed)
        report = grad_check(f, x, max_coords=args.coords, rng=np.random.default_rng(seed + 1))
        print(f"{args.op}: {report}")
        doc.append({"name": args.op, "max_rel_error": report.max_rel_error, "ok": report.passed})
        if not report.passed:
            failed.append(args.op)
    elif args.model is not None:
        cfg = desk_config(args.model)
        report = model_grad_check(cfg, seed=seed, max_coords=args.coords)
        print(f"{args.model} (desk, input grad): {report}")
        doc.append({"name": args.model, "max_rel_error": report.max_rel_error, "ok": report.passed})
        if not report.passed:
            failed.append(args.model)
    else:
        for name, report in run_primitive_suite(seed, max_coords=args.coords).items():
            print(f"{name}: {report}")
            doc.append({"name": name, "max_rel_error": report.max_rel_error, "ok": report.passed})
            if not report.passed:
                failed.append(name)
    artifacts.append(_write_json(os.path.join(out_dir, "gradcheck.json"), doc))
    if failed:
        raise CheckFailureError(f"gradient check failed: {', '.join(failed)}")


def _cmd_train(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    manifest = _dataset(args, rc, out_dir, artifacts)
    model = build(rc.model, seed=rc.train.seed)
    result = train(model, manifest, rc.train, model_cfg=rc.model, preprocess=rc.preprocess)
    ckpt = os.path.join(out_dir, f"{rc.model.variant}.vsck")
    _save_run_checkpoint(ckpt, result, rc.model)
    artifacts.append(ckpt)
    report_doc = {
        "model": result.report.model,
        "split": result.report.split,
        "per_organ": result.report.per_organ,
        "mean": result.report.mean,
        "mean_present": result.report.mean_present,
        "iterations": result.report.iterations,
        "iterations_to_target": result.iterations_to_target,
        "wall_seconds": result.report.wall_seconds,
        "config_hash": result.report.config_hash,
        "val_history": result.val_history,
    }
    artifacts.append(_write_json(os.path.join(out_dir, "report.json"), report_doc))
    loss_path = os.path.join(out_dir, "loss.csv")
    with open(loss_path, "w", encoding="utf-8") as fh:
        fh.write("iteration,loss\n")
        for i, value in enumerate(result.loss_history, start=1):
            fh.write(f"{i},{value:.6f}\n")
    artifacts.append(loss_path)
    print(f"trained {rc.model.variant}:")
    _print_report(result.report)


def _cmd_eval(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    manifest = _require_manifest(args, rc)
    model = _load_run_checkpoint(args.checkpoint, rc, seed=rc.train.seed)
    report = evaluate(
        model,
        manifest,
        args.split,
        roi=rc.train.roi,
        overlap=rc.train.overlap,
        preprocess=rc.preprocess,
        model_name=rc.model.variant,
    )
    doc = {
        "model": report.model,
        "split": report.split,
        "per_organ": report.per_organ,
        "mean": report.mean,
        "mean_present": report.mean_present,
        "wall_seconds": report.wall_seconds,
    }
    artifacts.append(_write_json(os.path.join(out_dir, "report.json"), doc))
    print(f"evaluated {rc.model.variant} on '{args.split}':")
    _print_report(report)


def _cmd_bench(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    unknown = [v for v in variants if v not in VARIANTS]
    if unknown:
        raise UsageError(f"unknown variant(s) {unknown}; valid: {list(VARIANTS)}")
    if not variants:
        raise UsageError("--variants must name at least one model")
    manifest = _dataset(args, rc, out_dir, artifacts)
    cfgs = [_model_cfg_for(rc, v) for v in variants]
    result = bench(cfgs, manifest, rc.train, preprocess=rc.preprocess)
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_csv())
    md_path = os.path.join(out_dir, "report.md")
    with open(md_path, "w", encoding="utf-8") as fh:
        fh.write(result.to_markdown())
    artifacts.extend([csv_path, md_path])
    for mcfg, res in zip(cfgs, result.results):
        ckpt = os.path.join(out_dir, f"{mcfg.variant}.vsck")
        _save_run_checkpoint(ckpt, res, mcfg)
        artifacts.append(ckpt)
    print(result.to_markdown(), end="")


def _cmd_export_slices(args, rc: RunConfig, out_dir: str, artifacts: list) -> None:
    manifest = _require_manifest(args, rc)
    entries = manifest.split(args.split)
    if not entries:
        raise UsageError(f"split '{args.split}' is empty")
    if args.case is None:
        entry = entries[0]
    else:
        matches = [e for e in entries if e.case_id == args.case]
        if not matches:
            raise UsageError(
                f"case '{args.case}' not in split '{args.split}'; "
                f"available: {[e.case_id for e in entries]}"
            )
        entry = matches[0]
    image = nifti.read_volume(manifest.resolve(entry.image))
    label = nifti.read_label(manifest.resolve(entry.label))
    pre_img, pre_lab = preprocess_case(image, label, rc.preprocess)
    model = _load_run_checkpoint(args.checkpoint, rc, seed=rc.train.seed)
    pred = sliding_window_infer(model, pre_img, roi=rc.train.roi, overlap=rc.train.overlap)
    depth = pre_img.extent[2]
    if args.z is not None:
        try:
            z_indices = [int(z) for z in args.z.split(",") if z.strip()]
        except ValueError as err:
            raise UsageError(f"--z must be comma-separated integers, got '{args.z}'") from err
    else:
        z_indices = sorted({depth // 4, depth // 2, (3 * depth) // 4})
    paths = export_slices(pre_img, pred, pre_lab, z_indices, out_dir, prefix=entry.case_id)
    artifacts.extend(str(p) for p in paths)
    report = dice_report(pred, pre_lab)
    print(f"case {entry.case_id}: mean DSC {report.mean:.4f}; wrote {len(paths)} images to {out_dir}")


_HANDLERS = {
    "phantom": _cmd_phantom,
    "preprocess": _cmd_preprocess,
    "sample-stats": _cmd_sample_stats,
    "shapecheck": _cmd_shapecheck,
    "gradcheck": _cmd_gradcheck,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "export-slices": _cmd_export_slices,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    if args.command is None:
        print("error: a command is required\n" + parser.format_usage().rstrip(), file=sys.stderr)
        return 1

    out_dir = args.out or os.path.join("volseg_out", args.command)
    os.makedirs(out_dir, exist_ok=True)
    artifacts: list = []
    status, message, exit_code = "ok", None, 0
    document = None
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides += [f"data.seed={args.seed}", f"train.seed={args.seed}"]
        rc = load_run_config(args.config, overrides)
        document = rc.document
        _HANDLERS[args.command](args, rc, out_dir, artifacts)
    except VolsegError as err:
        print(f"error: {err}", file=sys.stderr)
        status, message, exit_code = "error", str(err), err.exit_code
    finally:
        manifest_doc = {
            "command": args.command,
            "argv": list(argv) if argv is not None else sys.argv[1:],
            "config": document,
            "config_path": args.config,
            "overrides": list(args.overrides),
            "seed": args.seed,
            "out": out_dir,
            "artifacts": sorted(set(artifacts)),
            "status": status,
            "error": message,
            "version": __version__,
        }
        _write_json(os.path.join(out_dir, "run_manifest.json"), manifest_doc)
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
