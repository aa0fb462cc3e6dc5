"""Pixel-level evaluation: thresholding, Dice coefficient, per-dataset reports."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import load_png, mask_from_image
from .errors import PipelineStageError, ShapeMismatchError
from .model import Model, predict_patch
from .patching import extract_patch_pairs, plan_patch_grid, stitch_predictions
from .stain import StainParams, StainProfile, normalize_to_target


def binarize(probs: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Threshold a probability map; a pixel is set iff prob > threshold (strict)."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly between 0 and 1")
    arr = np.asarray(probs, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[2] != 1:
            raise ShapeMismatchError("probability map must be single-channel")
        arr = arr[:, :, 0]
    if arr.ndim != 2:
        raise ShapeMismatchError(f"expected an (H, W) map, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValueError("probability values must lie in [0, 1]")
    return arr > threshold


def dice_coefficient(gt: np.ndarray, seg: np.ndarray) -> float:
    """Dice = 2|G & S| / (|G| + |S|); defined as 1.0 when both masks are empty."""
    gt = np.asarray(gt, dtype=bool)
    seg = np.asarray(seg, dtype=bool)
    if gt.shape != seg.shape:
        raise ShapeMismatchError(f"mask shapes differ: {gt.shape} vs {seg.shape}")
    total = int(gt.sum()) + int(seg.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(gt, seg).sum()) / total


@dataclass
class ImageRecord:
    image_id: str
    dice: float
    tp: int
    fp: int
    fn: int
    tn: int


@dataclass
class EvalReport:
    images: list[ImageRecord]
    mean_dice: float


def predict_slide(
    model: Model,
    image: np.ndarray,
    profile: StainProfile,
    stain_params: StainParams,
    patch_size: int,
    margin: int,
) -> np.ndarray:
    """Whole-slide probability map: normalize, tile, predict, stitch."""

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except Exception as exc:
            raise PipelineStageError(name, exc) from exc

    normalized = stage("normalize", normalize_to_target, image, profile, stain_params)
    grid = stage(
        "plan_grid", plan_patch_grid, image.shape[0], image.shape[1], patch_size, margin
    )
    pairs = stage("extract_patches", extract_patch_pairs, normalized, grid)
    maps = [stage("predict", predict_patch, model, pair) for pair in pairs]
    return stage("stitch", stitch_predictions, grid, maps)


def evaluate_image(
    model: Model,
    image: np.ndarray,
    gt_mask: np.ndarray,
    profile: StainProfile,
    stain_params: StainParams,
    patch_size: int,
    margin: int,
    threshold: float = 0.5,
    image_id: str = "",
    prediction_map: np.ndarray | None = None,
):
    """Score one image; returns (ImageRecord, stitched probability map).

    prediction_map, when given, bypasses the model (diagnostic path used by
    the gt-as-prediction check).
    """
    gt = np.asarray(gt_mask, dtype=bool)
    if gt.shape != image.shape[:2]:
        raise ShapeMismatchError(
            f"mask shape {gt.shape} != image shape {image.shape[:2]}"
        )
    if prediction_map is None:
        prob_map = predict_slide(model, image, profile, stain_params, patch_size, margin)
    else:
        prob_map = np.asarray(prediction_map, dtype=np.float64)
        if prob_map.ndim == 2:
            prob_map = prob_map[:, :, None]
    try:
        seg = binarize(prob_map, threshold)
    except Exception as exc:
        raise PipelineStageError("binarize", exc) from exc
    tp = int(np.logical_and(seg, gt).sum())
    fp = int(np.logical_and(seg, ~gt).sum())
    fn = int(np.logical_and(~seg, gt).sum())
    tn = int(np.logical_and(~seg, ~gt).sum())
    record = ImageRecord(
        image_id=image_id,
        dice=dice_coefficient(gt, seg),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )
    return record, prob_map


def evaluate_dataset(
    model: Model,
    records,
    profile: StainProfile,
    stain_params: StainParams,
    patch_size: int,
    margin: int,
    threshold: float = 0.5,
    use_gt_as_prediction: bool = False,
    jobs: int = 1,
    collect_maps: bool = False,
):
    """Score (image_path, mask_path) records in order; returns an EvalReport
    (and the stitched maps when collect_maps is set)."""
    records = list(records)
    if not records:
        raise ValueError("empty evaluation manifest")

    def score_one(item):
        image_path, mask_path = item
        image = load_png(image_path)
        gt = mask_from_image(load_png(mask_path))
        prediction = gt.astype(np.float64) if use_gt_as_prediction else None
        return evaluate_image(
            model,
            image,
            gt,
            profile,
            stain_params,
            patch_size,
            margin,
            threshold,
            image_id=str(image_path),
            prediction_map=prediction,
        )

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            scored = list(pool.map(score_one, records))
    else:
        scored = [score_one(item) for item in records]

    image_records = [rec for rec, _ in scored]
    mean_dice = sum(r.dice for r in image_records) / len(image_records)
    report = EvalReport(images=image_records, mean_dice=mean_dice)
    if collect_maps:
        return report, [m for _, m in scored]
    return report


def report_to_json(report: EvalReport) -> str:
    doc = {
        "images": [
            {
                "id": r.image_id,
                "dice": r.dice,
                "tp": r.tp,
                "fp": r.fp,
                "fn": r.fn,
                "tn": r.tn,
            }
            for r in report.images
        ],
        "mean_dice": report.mean_dice,
    }
    return json.dumps(doc, indent=2) + "\n"


def save_report(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report_to_json(report))
