import time

import numpy as np
import pytest

import histoseg as hs
from histoseg import synthetic as syn
from histoseg.evaluation import binarize


@pytest.fixture(scope="session")
def blob_fixture():
    """Synthetic two-slide blob dataset: 8 pairs, 64x64 local, 16-pixel margin.

    Mirrors the production flow: fit a stain profile on the first slide,
    normalize both, then patchify.
    """
    rng = hs.SeededRng(1234)
    slides, masks = [], []
    for i in range(2):
        image, mask = syn.make_synthetic_slide(128, 128, rng.derive(i))
        slides.append(image)
        masks.append(mask)
    profile = hs.fit_target_profile(slides[0])
    normalized = [hs.normalize_to_target(s, profile) for s in slides]
    dataset = []
    for image, mask in zip(normalized, masks):
        grid = hs.plan_patch_grid(128, 128, 64, 16)
        for pair in hs.extract_patch_pairs(image, grid):
            dataset.append((pair, hs.extract_local_patch(mask, pair.origin, 64)))
    return {
        "slides": slides,
        "masks": masks,
        "profile": profile,
        "dataset": dataset,
        "patch_size": 64,
        "margin": 16,
    }


@pytest.fixture(scope="session")
def overfit_run(blob_fixture):
    """Train to convergence on the blob dataset; shared by training,
    evaluation, and acceptance tests."""
    model = hs.build_model(
        hs.ModelConfig(patch_size=64, levels=2, base_channels=4, seed=77)
    )
    config = hs.TrainConfig(epochs=200, seed=99)
    start = time.monotonic()
    model, history = hs.train(model, blob_fixture["dataset"], config)
    seconds = time.monotonic() - start
    return {"model": model, "history": history, "seconds": seconds, "config": config}


@pytest.fixture(scope="session")
def border_run():
    """Dual-view vs local-only (context ring zeroed) comparison on slides
    whose border objects are locally ambiguous."""
    rng = hs.SeededRng(4321)
    (img_true, mask_true), (img_ghost, mask_ghost) = syn.make_border_pair_slides(
        rng, size=128, patch_size=32, radius=5.0
    )
    grid = hs.plan_patch_grid(128, 128, 32, 8)
    dataset = []
    for image, mask in ((img_true, mask_true), (img_ghost, mask_ghost)):
        for pair in hs.extract_patch_pairs(image, grid):
            dataset.append((pair, hs.extract_local_patch(mask, pair.origin, 32)))
    ablated = [(syn.zero_context(pair), mask) for pair, mask in dataset]
    band = syn.border_band_mask(32, 8)

    def run(samples):
        model = hs.build_model(
            hs.ModelConfig(patch_size=32, levels=2, base_channels=8, seed=5)
        )
        model, _ = hs.train(model, samples, hs.TrainConfig(epochs=100, seed=6))
        segmentations = [
            binarize(hs.predict_patch(model, pair), 0.5) for pair, _ in samples
        ]
        truths = [mask for _, mask in samples]
        return syn.pooled_dice(truths, segmentations, band)

    start = time.monotonic()
    dual_band_dice = run(dataset)
    ablation_band_dice = run(ablated)
    return {
        "dual": dual_band_dice,
        "ablation": ablation_band_dice,
        "seconds": time.monotonic() - start,
    }
