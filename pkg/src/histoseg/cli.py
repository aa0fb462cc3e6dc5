"""Command-line pipeline: normalize -> patchify -> train -> predict -> evaluate.

Commands communicate through files under the configured output directory:

    stain_profile.json      target stain profile
    normalized/<stem>.png   stain-normalized slides
    patches/<stem>/         patch archives (local/global/mask PNGs + grid.json)
    model.ckpt              trained checkpoint
    history.csv             per-epoch training metrics
    predictions/            stitched probability and mask PNGs
    eval_report.json        per-image and mean Dice

Every command is deterministic: rerunning with unchanged inputs rewrites
byte-identical outputs. Set HISTOSEG_LOG to error/warn/info/debug for
logging verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

from . import evaluation, model as model_mod, patching, stain, training
from .config import PipelineConfig, load_config, load_manifest
from .core import load_png, mask_from_image, mask_to_image, save_png
from .errors import ConfigError, HistosegError

log = logging.getLogger("histoseg")

_LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}


def _setup_logging():
    name = os.environ.get("HISTOSEG_LOG", "warn").lower()
    level = _LOG_LEVELS.get(name)
    if level is None:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if name not in _LOG_LEVELS and name:
        log.warning("unknown HISTOSEG_LOG value %r, using warn", name)


def _stems(records) -> dict[str, Path]:
    stems = {}
    for rec in records:
        stem = Path(rec.image_path).stem
        if stem in stems:
            raise ConfigError(f"duplicate image stem {stem!r} in manifest")
        stems[stem] = rec
    return stems


def _map_jobs(fn, items, jobs: int):
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _load_profile(config: PipelineConfig) -> stain.StainProfile:
    profile_path = Path(config.output_dir) / "stain_profile.json"
    if profile_path.exists():
        return stain.load_profile(profile_path)
    target = load_png(config.target_image_path)
    return stain.fit_target_profile(target, config.stain)


def _checkpoint_path(config: PipelineConfig, override) -> Path:
    return Path(override) if override else Path(config.output_dir) / "model.ckpt"


def _load_checkpoint(config: PipelineConfig, override) -> model_mod.Model:
    path = _checkpoint_path(config, override)
    net = model_mod.load_model(path)
    if net.config.patch_size != config.patch_size:
        raise ConfigError(
            f"checkpoint patch_size {net.config.patch_size} != config patch_size "
            f"{config.patch_size}"
        )
    return net


def cmd_normalize(config: PipelineConfig, manifest_path, jobs: int = 1) -> int:
    records = load_manifest(manifest_path)
    if not records:
        log.warning("manifest %s is empty, nothing to normalize", manifest_path)
        return 0
    _stems(records)
    out_dir = Path(config.output_dir)
    norm_dir = out_dir / "normalized"
    norm_dir.mkdir(parents=True, exist_ok=True)

    target = load_png(config.target_image_path)
    profile = stain.fit_target_profile(target, config.stain)
    stain.save_profile(profile, out_dir / "stain_profile.json")

    def one(rec):
        try:
            image = load_png(rec.image_path)
            normalized = stain.normalize_to_target(image, profile, config.stain)
            save_png(normalized, norm_dir / f"{Path(rec.image_path).stem}.png")
            return None
        except (HistosegError, FileNotFoundError, OSError) as exc:
            return f"{rec.image_path}: {exc}"

    failures = [msg for msg in _map_jobs(one, records, jobs) if msg]
    for msg in failures:
        log.error("normalize failed for %s", msg)
        print(f"error\tnormalize\t{msg}", file=sys.stderr)
    log.info("normalized %d/%d image(s)", len(records) - len(failures), len(records))
    return 1 if failures else 0


def cmd_patchify(config: PipelineConfig, manifest_path, jobs: int = 1) -> int:
    records = load_manifest(manifest_path)
    out_dir = Path(config.output_dir)
    norm_dir = out_dir / "normalized"
    patches_dir = out_dir / "patches"

    def one(rec):
        stem = Path(rec.image_path).stem
        normalized_path = norm_dir / f"{stem}.png"
        if not normalized_path.exists():
            raise ConfigError(
                f"normalized image missing: {normalized_path} (run 'histoseg normalize' first)"
            )
        image = load_png(normalized_path)
        mask = mask_from_image(load_png(rec.mask_path))
        if mask.shape != image.shape[:2]:
            raise ConfigError(
                f"{rec.mask_path}: mask shape {mask.shape} != image shape {image.shape[:2]}"
            )
        grid = patching.plan_patch_grid(
            image.shape[0], image.shape[1], config.patch_size, config.margin
        )
        pairs = patching.extract_patch_pairs(image, grid)
        masks = [
            patching.extract_local_patch(mask, origin, config.patch_size)
            for origin in grid.origins
        ]
        patching.write_patch_archive(patches_dir / stem, grid, pairs, masks)
        return len(pairs)

    counts = _map_jobs(one, records, jobs)
    log.info("wrote %d patch pair(s) for %d image(s)", sum(counts), len(records))
    return 0


def cmd_train(config: PipelineConfig, manifest_path, seed_override=None) -> int:
    records = [r for r in load_manifest(manifest_path) if r.split == "train"]
    if not records:
        raise ConfigError("manifest has no train-split records")
    out_dir = Path(config.output_dir)
    patches_dir = out_dir / "patches"

    dataset = []
    for rec in records:
        stem = Path(rec.image_path).stem
        archive = patches_dir / stem
        if not (archive / "grid.json").exists():
            raise ConfigError(
                f"patch archive missing: {archive} (run 'histoseg patchify' first)"
            )
        grid, pairs, masks = patching.read_patch_archive(archive)
        if grid.patch_size != config.patch_size or grid.margin != config.margin:
            raise ConfigError(
                f"{archive}: archive geometry ({grid.patch_size}, {grid.margin}) does not "
                f"match config ({config.patch_size}, {config.margin})"
            )
        if masks is None:
            raise ConfigError(f"{archive}: archive has no mask patches")
        dataset.extend(zip(pairs, masks))

    model_config = config.model
    train_config = config.train
    if seed_override is not None:
        model_config = dataclasses.replace(model_config, seed=int(seed_override))
        train_config = dataclasses.replace(train_config, seed=int(seed_override))

    net = model_mod.build_model(model_config)
    net, history = training.train(net, dataset, train_config)
    model_mod.save_model(net, out_dir / "model.ckpt")
    training.save_history(history, out_dir / "history.csv")
    if len(history):
        print(
            f"epoch {len(history) - 1}: mean_loss {history.mean_loss[-1]:.6f} "
            f"mean_dice {history.mean_dice[-1]:.4f}"
        )
    else:
        print("no epochs trained (epochs=0); checkpoint holds the initialized model")
    return 0


def cmd_predict(config: PipelineConfig, image_path, checkpoint=None) -> int:
    net = _load_checkpoint(config, checkpoint)
    profile = _load_profile(config)
    image = load_png(image_path)
    prob_map = evaluation.predict_slide(
        net, image, profile, config.stain, config.patch_size, config.margin
    )
    out_dir = Path(config.output_dir) / "predictions"
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(image_path).stem
    prob_path = out_dir / f"{stem}_prob.png"
    mask_path = out_dir / f"{stem}_mask.png"
    save_png(prob_map * 255.0, prob_path)
    mask = evaluation.binarize(prob_map, config.train.threshold)
    save_png(mask_to_image(mask), mask_path)
    print(f"wrote {prob_path} and {mask_path}")
    return 0


def cmd_evaluate(
    config: PipelineConfig,
    manifest_path,
    checkpoint=None,
    jobs: int = 1,
    use_gt_as_prediction: bool = False,
) -> int:
    records = [r for r in load_manifest(manifest_path) if r.split == "test"]
    if not records:
        raise ConfigError("manifest has no test-split records")
    net = None if use_gt_as_prediction else _load_checkpoint(config, checkpoint)
    profile = _load_profile(config)
    report = evaluation.evaluate_dataset(
        net,
        [(r.image_path, r.mask_path) for r in records],
        profile,
        config.stain,
        config.patch_size,
        config.margin,
        config.train.threshold,
        use_gt_as_prediction=use_gt_as_prediction,
        jobs=jobs,
    )
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluation.save_report(report, out_dir / "eval_report.json")
    print(f"mean_dice {report.mean_dice:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histoseg",
        description="Dual-view nuclei segmentation pipeline for H&E histopathology slides.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text, manifest=False, checkpoint=False, jobs=False, seed=False):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline config file")
        if manifest:
            p.add_argument("--manifest", required=True, help="dataset manifest CSV")
        if checkpoint:
            p.add_argument(
                "--checkpoint", default=None, help="model checkpoint (default: <output_dir>/model.ckpt)"
            )
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="parallel worker count")
        if seed:
            p.add_argument(
                "--seed", type=int, default=None, help="override model and training seeds"
            )
        return p

    add("normalize", "fit the target stain profile and normalize manifest images",
        manifest=True, jobs=True)
    add("patchify", "cut normalized slides into local/global patch archives",
        manifest=True, jobs=True)
    add("train", "train the dual-view model on train-split patch archives",
        manifest=True, seed=True)
    predict = add("predict", "segment one slide with a trained checkpoint", checkpoint=True)
    predict.add_argument("--image", required=True, help="input slide PNG")
    evaluate = add("evaluate", "score test-split slides and write a Dice report",
                   manifest=True, checkpoint=True, jobs=True)
    evaluate.add_argument(
        "--use-gt-as-prediction",
        action="store_true",
        help="diagnostic: score ground truth against itself, bypassing the model",
    )
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if args.command == "normalize":
            return cmd_normalize(config, args.manifest, jobs=args.jobs)
        if args.command == "patchify":
            return cmd_patchify(config, args.manifest, jobs=args.jobs)
        if args.command == "train":
            return cmd_train(config, args.manifest, seed_override=args.seed)
        if args.command == "predict":
            return cmd_predict(config, args.image, checkpoint=args.checkpoint)
        if args.command == "evaluate":
            return cmd_evaluate(
                config,
                args.manifest,
                checkpoint=args.checkpoint,
                jobs=args.jobs,
                use_gt_as_prediction=args.use_gt_as_prediction,
            )
        parser.error(f"unknown command {args.command!r}")
    except (HistosegError, FileNotFoundError, OSError, ValueError) as exc:
        log.error("%s failed: %s", args.command, exc)
        print(f"error\t{args.command}\t{exc}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
