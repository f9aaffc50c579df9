"""``ivusseg`` command line: phantom, train, predict, evaluate, measure, agreement.

Environment overrides:
  IVUSSEG_OUT_ROOT  prefix for relative ``--out`` paths
  IVUSSEG_JOBS      default for ``--jobs``
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import TARGETS, __version__
from .data import (DatasetManifest, ManifestEntry, PhantomSpec, load_manifest, load_pair,
                   manifest_hash, phantom_generate, read_mask, save_manifest, write_png)
from .errors import IvusSegError, ValidationError
from .geometry import DEFAULT_ANGLES, measure_all
from .metrics import evaluate_dataset, slice_metrics, summarize
from .model import ModelConfig, build_model, load_checkpoint
from .postproc import postprocess
from .report import (read_clinical_csv, write_agreement, write_clinical_csv, write_fold_metrics,
                     write_slice_metrics, write_summary)
from .stats import agreement_report
from .train import FoldPlan, TrainConfig, predict, split_folds, train_model

log = logging.getLogger("ivusseg")


def _out_path(p: str) -> Path:
    path = Path(p)
    root = os.environ.get("IVUSSEG_OUT_ROOT")
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _default_jobs() -> int:
    try:
        return max(1, int(os.environ.get("IVUSSEG_JOBS", "1")))
    except ValueError:
        return 1


def _pmap(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, items))


def write_run_record(path: Path, argv, args, config: dict | None = None,
                     manifest: str | Path | None = None) -> None:
    record = {
        "command": ["ivusseg"] + list(argv),
        "subcommand": args.command,
        "arguments": {k: v for k, v in vars(args).items() if k != "func"},
        "config": config or {},
        "seeds": {k: v for k, v in vars(args).items() if "seed" in k and v is not None},
        "version": __version__,
        "started_at": datetime.now(timezone.utc).isoformat(),
        "manifest_sha256": manifest_hash(manifest) if manifest else None,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(record, indent=2, default=str) + "\n")


# --------------------------------------------------------------------------- phantom


def cmd_phantom(args, argv) -> None:
    out = _out_path(args.out)
    spec = PhantomSpec(count=args.count, image_size=args.size, seed=args.seed,
                       lumen_radius_range=tuple(args.lumen_radius),
                       ma_radius_range=tuple(args.ma_radius),
                       ellipse_ratio_range=tuple(args.ratio), noise_level=args.noise,
                       pixel_spacing=args.ps, slices_per_patient=args.slices_per_patient)
    spec.validate()
    write_run_record(out / "run.json", argv, args, {"phantom": spec.__dict__})
    phantom_generate(spec, out)
    print(f"wrote {spec.count} phantom slices to {out}")


# --------------------------------------------------------------------------- train


def _train_config(args) -> TrainConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    overrides = {"epochs": args.epochs, "learning_rate": args.lr, "batch_size": args.batch_size,
                 "folds": args.folds, "split_mode": args.split_mode,
                 "test_fraction": args.test_fraction, "seed": args.seed}
    base.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig.from_dict(base)


def _model_config(args, input_size) -> ModelConfig:
    base = json.loads(Path(args.model_config).read_text()) if args.model_config else {}
    overrides = {"depth": args.depth, "base_channels": args.base_channels,
                 "fusion_mode": args.fusion, "init_seed": args.init_seed,
                 "targets": args.targets}
    base.update({k: v for k, v in overrides.items() if v is not None})
    base["input_size"] = tuple(input_size)
    return ModelConfig.from_dict(base)


def _test_metrics(model, manifest: DatasetManifest, entries, threshold=None):
    if not entries:
        return []
    sub = DatasetManifest(list(entries), manifest.pixel_spacing, manifest.root)
    images, truths = [], []
    for e in sub.entries:
        sl, lumen, ma = load_pair(e, sub.root)
        images.append(sl.pixels)
        truths.append(np.stack([lumen, ma]))
    targets = model.config.targets
    idx = [TARGETS.index(t) for t in targets]
    probs = predict(model, np.stack(images).astype(np.float32))
    truth = np.stack(truths)[:, idx]
    _, summary = evaluate_dataset(probs, truth, manifest.pixel_spacing,
                                  [e.slice_id for e in sub.entries], targets, threshold)
    return summary


def cmd_train(args, argv) -> None:
    out = _out_path(args.out)
    manifest = load_manifest(args.manifest)
    config = _train_config(args)
    first, _, _ = load_pair(manifest.entries[0], manifest.root)
    mconfig = _model_config(args, (first.height, first.width))
    write_run_record(out / "run.json", argv, args,
                     {"train": config.to_dict(), "model": mconfig.to_dict()}, args.manifest)
    plan = split_folds(manifest, config)
    (out / "plan.json").write_text(json.dumps(plan.to_dict(), indent=1) + "\n")
    folds = range(config.folds) if args.all_folds else [args.fold]
    per_fold, best = [], None
    for k in folds:
        if not 0 <= k < config.folds:
            raise ValidationError(f"fold index {k} outside 0..{config.folds - 1}")
        model = build_model(mconfig)
        fold_dir = out / f"fold_{k}"
        model, history = train_model(model, plan, k, config, manifest, fold_dir)
        summary = _test_metrics(model, manifest, plan.test_set)
        if summary:
            write_fold_metrics(fold_dir / "test_metrics.csv", [(k, summary)])
            per_fold.append((k, summary))
        val = min((r.val_loss for r in history.records), default=float("inf"))
        if best is None or val < best[1]:
            best = (k, val)
        log.info("fold %d done: best val loss %.5f", k, val)
    if per_fold:
        write_fold_metrics(out / "fold_metrics.csv", per_fold)
    if args.all_folds and best is not None:
        shutil.copyfile(out / f"fold_{best[0]}" / "checkpoint.pt", out / "best.pt")
        (out / "best.json").write_text(json.dumps({"fold": best[0], "val_loss": best[1]}) + "\n")
    print(f"trained fold(s) {list(folds)}; outputs in {out}")


# --------------------------------------------------------------------------- predict


def _post_one(item):
    prob, threshold = item
    return [postprocess(prob[t], threshold) for t in range(prob.shape[0])]


def cmd_predict(args, argv) -> None:
    out = _out_path(args.out)
    manifest = load_manifest(args.manifest)
    model = load_checkpoint(args.checkpoint)
    entries = manifest.entries
    if args.plan:
        plan = FoldPlan.from_dict(json.loads(Path(args.plan).read_text()), manifest)
        entries = plan.test_set if args.part == "test" else [e for f in plan.folds for e in f]
    write_run_record(out / "run.json", argv, args, {"model": model.config.to_dict()}, args.manifest)
    if not entries:
        raise ValidationError("no slices selected for prediction")
    slices = [load_pair(e, manifest.root, model.config.depth)[0] for e in entries]
    probs = predict(model, slices)
    masks = _pmap(_post_one, [(p, args.threshold) for p in probs], args.jobs)
    targets = model.config.targets
    new_entries = []
    (out / "prob").mkdir(parents=True, exist_ok=True)
    for e, prob, m in zip(entries, probs, masks):
        np.save(out / "prob" / f"{e.slice_id}.npy", prob)
        paths = {}
        for t, mask in zip(targets, m):
            rel = f"masks_{t}/{e.slice_id}.png"
            write_png(out / rel, mask)
            paths[t] = rel
        image = os.path.relpath(manifest.resolve(e.image_path).resolve(), out.resolve())
        if set(paths) == set(TARGETS):
            new_entries.append(ManifestEntry(image, paths["lumen"], paths["ma"],
                                             e.patient_id, e.slice_id))
    if new_entries:
        save_manifest(DatasetManifest(new_entries, manifest.pixel_spacing, out),
                      out / "manifest.json")
    print(f"predicted {len(entries)} slices into {out}")


# --------------------------------------------------------------------------- evaluate


def _aligned(pred: DatasetManifest, truth: DatasetManifest):
    truth_by = {e.key: e for e in truth.entries}
    missing = [e.key for e in pred.entries if e.key not in truth_by]
    if missing:
        raise ValidationError(f"predictions without ground truth: {missing[:3]}")
    return [(p, truth_by[p.key]) for p in pred.entries]


def _eval_one(item):
    pred_path, truth_path, ps, sid, target, threshold = item
    pred = read_mask(pred_path)
    truth = read_mask(truth_path)
    mask = postprocess(pred.astype(np.float64), threshold)
    return slice_metrics(mask, truth, ps, sid, target)


def cmd_evaluate(args, argv) -> None:
    out = _out_path(args.out)
    pred = load_manifest(args.pred)
    truth = load_manifest(args.truth)
    write_run_record(out / "run.json", argv, args, manifest=args.truth)
    items = []
    for p, t in _aligned(pred, truth):
        for target, pf, tf in (("lumen", p.lumen_mask_path, t.lumen_mask_path),
                               ("ma", p.ma_mask_path, t.ma_mask_path)):
            items.append((pred.resolve(pf), truth.resolve(tf), truth.pixel_spacing,
                          p.slice_id, target, args.threshold))
    metrics = _pmap(_eval_one, items, args.jobs)
    write_slice_metrics(out / "slice_metrics.csv", metrics)
    write_summary(out / "summary.csv", summarize(metrics))
    print(f"evaluated {len(items) // 2} slices into {out}")


# --------------------------------------------------------------------------- measure


def _measure_one(item):
    entry, root, ps, angles, clamp = item
    _, lumen, ma = load_pair(entry, root)
    try:
        rep = measure_all(lumen, ma, ps, angles, clamp=clamp)
    except IvusSegError as exc:
        raise type(exc)(f"{entry.slice_id}: {exc}") from None
    return entry.patient_id, entry.slice_id, ps, rep


def cmd_measure(args, argv) -> None:
    out = _out_path(args.out)
    manifest = load_manifest(args.manifest)
    write_run_record(out.with_name(out.name + ".run.json"), argv, args, manifest=args.manifest)
    items = [(e, manifest.root, manifest.pixel_spacing, args.angles, args.clamp)
             for e in manifest.entries]
    rows = _pmap(_measure_one, items, args.jobs)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_clinical_csv(out, rows)
    print(f"measured {len(rows)} slices into {out}")


# --------------------------------------------------------------------------- agreement


def cmd_agreement(args, argv) -> None:
    out = _out_path(args.out)
    pred = read_clinical_csv(args.pred)
    truth = read_clinical_csv(args.truth)
    write_run_record(out / "run.json", argv, args)
    truth_by = {(p, s): r for p, s, _, r in truth}
    pred_by = {(p, s): r for p, s, _, r in pred}
    if set(truth_by) != set(pred_by) or len(pred_by) != len(pred):
        raise ValidationError("prediction and truth reports do not cover the same slices")
    keys = [(p, s) for p, s, _, _ in truth]
    report = agreement_report([pred_by[k] for k in keys], [truth_by[k] for k in keys])
    write_agreement(out, report, plots=args.plots)
    print(f"agreement table for {len(keys)} slices written to {out}")


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ivusseg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ivusseg {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate synthetic vessel phantoms")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--noise", type=float, default=PhantomSpec.noise_level)
    p.add_argument("--ps", type=float, default=PhantomSpec.pixel_spacing, help="mm per pixel")
    p.add_argument("--slices-per-patient", type=int, default=PhantomSpec.slices_per_patient)
    p.add_argument("--lumen-radius", type=float, nargs=2, default=PhantomSpec.lumen_radius_range)
    p.add_argument("--ma-radius", type=float, nargs=2, default=PhantomSpec.ma_radius_range)
    p.add_argument("--ratio", type=float, nargs=2, default=PhantomSpec.ellipse_ratio_range)
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("train", help="split folds and train")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="training config JSON (TrainConfig fields)")
    p.add_argument("--model-config", help="model config JSON (ModelConfig fields)")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--fold", type=int)
    g.add_argument("--all-folds", action="store_true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--folds", type=int)
    p.add_argument("--split-mode", choices=("slice", "patient"))
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--init-seed", type=int)
    p.add_argument("--depth", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--fusion", choices=("concat", "sum"))
    p.add_argument("--targets", nargs="+", choices=TARGETS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="probability maps and post-processed masks")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", help="plan.json from train; restricts to one part")
    p.add_argument("--part", choices=("test", "train"), default="test")
    p.add_argument("--threshold", type=float, help="fixed threshold instead of Otsu")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="Jaccard / Hausdorff of predicted vs truth masks")
    p.add_argument("--pred", required=True, help="prediction manifest")
    p.add_argument("--truth", required=True, help="ground-truth manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("measure", help="clinical parameters from masks")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--angles", type=int, default=DEFAULT_ANGLES)
    p.add_argument("--clamp", action="store_true", help="intersect lumen with MA before measuring")
    p.add_argument("--jobs", type=int, default=_default_jobs())
    p.set_defaults(func=cmd_measure)

    p = sub.add_parser("agreement", help="agreement statistics between two report CSVs")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--plots", action="store_true", help="also render PNG figures")
    p.set_defaults(func=cmd_agreement)
    return parser


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args, argv)
    except (IvusSegError, OSError, json.JSONDecodeError) as exc:
        msg = " ".join(str(exc).split())
        print(f"ivusseg {args.command}: error: {msg}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
