"""Procedural test data: two-stain color images and H&E-like slides with
disk-shaped nuclei. Used by the demo scripts and the verification suite;
no real slides are required anywhere in this package.
"""

from __future__ import annotations

import numpy as np

from .core import SeededRng
from .stain import StainParams, od_to_rgb


def _unit_columns(matrix: np.ndarray) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    return m / np.linalg.norm(m, axis=0, keepdims=True)


# Classic hematoxylin / eosin OD directions, unit-normalized.
HE_BASIS = _unit_columns(
    np.array(
        [
            [0.5626, 0.2159],
            [0.7201, 0.8012],
            [0.4062, 0.5581],
        ]
    )
)

# A second plausible basis (hematoxylin-like plus a bluer counterstain),
# for cross-basis invariance checks.
ALT_BASIS = _unit_columns(
    np.array(
        [
            [0.650, 0.268],
            [0.704, 0.570],
            [0.286, 0.776],
        ]
    )
)


def make_two_stain_image(
    height: int,
    width: int,
    rng: SeededRng,
    basis: np.ndarray = HE_BASIS,
    max_concentration: float = 1.2,
    pure_fraction: float = 0.0,
    params: StainParams = StainParams(),
):
    """RGB image mixed from a known basis and random nonnegative concentrations.

    pure_fraction reserves that fraction of pixels per stain for pure,
    strongly stained pixels, which pins the percentile angles of the
    estimation procedure to the true stain directions.

    Returns (image, concentrations) with concentrations shaped (2, H*W).
    """
    n = height * width
    conc = rng.uniform(0.0, max_concentration, (2, n))
    k = int(n * pure_fraction)
    if k:
        conc[1, :k] = 0.0
        conc[0, :k] = rng.uniform(0.4 * max_concentration, max_concentration, k)
        conc[0, k : 2 * k] = 0.0
        conc[1, k : 2 * k] = rng.uniform(0.4 * max_concentration, max_concentration, k)
    od = (np.asarray(basis, dtype=np.float64) @ conc).T.reshape(height, width, 3)
    return od_to_rgb(od, params), conc


def _disk(height: int, width: int, center_row: float, center_col: float, radius: float):
    rows, cols = np.ogrid[:height, :width]
    return (rows - center_row) ** 2 + (cols - center_col) ** 2 <= radius * radius


def make_synthetic_slide(
    height: int,
    width: int,
    rng: SeededRng,
    n_nuclei: int = 10,
    radius_range: tuple[float, float] = (8.0, 14.0),
    params: StainParams = StainParams(),
):
    """An H&E-like slide: dark hematoxylin nuclei disks over smooth eosin
    background blobs. Returns (image, nuclei mask)."""
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(n_nuclei):
        r = rng.uniform(*radius_range)
        cy = rng.uniform(r, height - r)
        cx = rng.uniform(r, width - r)
        mask |= _disk(height, width, cy, cx, r)

    c_h = 0.06 + rng.uniform(0.0, 0.03, (height, width))
    c_h = np.where(mask, 1.0 + rng.uniform(0.0, 0.15, (height, width)), c_h)

    c_e = 0.18 + np.zeros((height, width))
    rows, cols = np.mgrid[:height, :width]
    for _ in range(3):
        amp = rng.uniform(0.45, 0.6)
        sigma = rng.uniform(0.15, 0.3) * min(height, width)
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        c_e = c_e + amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2))

    od = np.stack([c_h, c_e], axis=-1) @ HE_BASIS.T
    return od_to_rgb(od, params), mask


def make_border_pair_slides(
    rng: SeededRng,
    size: int = 128,
    patch_size: int = 64,
    radius: float = 9.0,
    params: StainParams = StainParams(),
):
    """Two slides that agree inside every local patch along the patch borders
    but disagree in their labels.

    The "true" slide has full nuclei disks centered exactly on the patch
    border lines. The "ghost" slide draws only the half of each disk that
    faces the first patch and labels those pixels background. The local view
    of the affected patch is therefore pixel-identical between the slides
    while the correct output differs; only the global context can tell the
    two apart.

    Returns ((image_true, mask_true), (image_ghost, mask_ghost)).
    """
    if size % patch_size != 0 or size // patch_size < 2:
        raise ValueError("size must be a multiple of patch_size with at least 2 tiles")

    height = width = size
    c_e = 0.18 + np.zeros((height, width))
    rows, cols = np.mgrid[:height, :width]
    for _ in range(3):
        amp = rng.uniform(0.45, 0.6)
        sigma = rng.uniform(0.15, 0.3) * size
        cy = rng.uniform(0, height)
        cx = rng.uniform(0, width)
        c_e = c_e + amp * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2 * sigma**2))
    noise = rng.uniform(0.0, 0.03, (height, width))

    # Interior nuclei, identical in both slides.
    interior = np.zeros((height, width), dtype=bool)
    quarter = patch_size // 2
    for cy in range(quarter, height, patch_size):
        for cx in range(quarter, width, patch_size):
            interior |= _disk(height, width, cy + rng.uniform(-6, 6), cx + rng.uniform(-6, 6), radius - 1)

    # Ambiguous objects centered on the patch border lines.
    full = np.zeros((height, width), dtype=bool)
    half = np.zeros((height, width), dtype=bool)
    centers = []
    for line in range(patch_size, size, patch_size):
        for offset in range(patch_size // 2, size, patch_size):
            centers.append((offset, line, "v"))
            centers.append((line, offset, "h"))
    for cy, cx, orient in centers:
        disk = _disk(height, width, cy, cx, radius)
        full |= disk
        if orient == "v":
            keep = cols < cx
        else:
            keep = rows < cy
        half |= disk & keep

    def render(drawn):
        c_h = 0.06 + noise
        c_h = np.where(drawn, 1.05, c_h)
        od = np.stack([c_h, c_e], axis=-1) @ HE_BASIS.T
        return od_to_rgb(od, params)

    image_true = render(interior | full)
    mask_true = interior | full
    image_ghost = render(interior | half)
    mask_ghost = interior.copy()
    return (image_true, mask_true), (image_ghost, mask_ghost)


def zero_context(pair):
    """Replace a pair's out-of-patch context ring with zeros.

    The center of the global patch keeps duplicating the local patch (the
    pair invariant), so the result carries no information from outside the
    local view; used for local-only ablation runs.
    """
    from .patching import PatchPair

    g = np.zeros_like(pair.global_raw)
    m, p = pair.margin, pair.patch_size
    g[m : m + p, m : m + p] = pair.local
    return PatchPair(local=pair.local.copy(), global_raw=g, origin=pair.origin)


def border_band_mask(patch_size: int, band: int) -> np.ndarray:
    """Bool mask of patch pixels within `band` pixels of any patch edge."""
    rows, cols = np.mgrid[:patch_size, :patch_size]
    edge = np.minimum(
        np.minimum(rows, patch_size - 1 - rows), np.minimum(cols, patch_size - 1 - cols)
    )
    return edge < band


def pooled_dice(gt_masks, seg_masks, region: np.ndarray | None = None) -> float:
    """Dice over the union of all mask pairs, optionally restricted to a
    per-patch region; both-empty pools score 1.0."""
    tp = gt_total = seg_total = 0
    for gt, seg in zip(gt_masks, seg_masks):
        gt = np.asarray(gt, dtype=bool)
        seg = np.asarray(seg, dtype=bool)
        if region is not None:
            gt = gt[region]
            seg = seg[region]
        tp += int(np.logical_and(gt, seg).sum())
        gt_total += int(gt.sum())
        seg_total += int(seg.sum())
    if gt_total + seg_total == 0:
        return 1.0
    return 2.0 * tp / (gt_total + seg_total)


def write_synthetic_dataset(
    directory,
    rng: SeededRng,
    n_train: int = 2,
    n_test: int = 1,
    size: int = 128,
):
    """Write slide/mask PNGs plus a manifest CSV; returns the manifest path.

    The first training image doubles as a natural normalization target.
    """
    from pathlib import Path

    from .config import ManifestRecord, save_manifest
    from .core import mask_to_image, save_png

    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(n_train + n_test):
        image, mask = make_synthetic_slide(size, size, rng.derive(i))
        image_path = directory / "images" / f"slide{i:02d}.png"
        mask_path = directory / "masks" / f"slide{i:02d}_mask.png"
        save_png(image, image_path)
        save_png(mask_to_image(mask), mask_path)
        records.append(
            ManifestRecord(
                image_path=str(image_path),
                mask_path=str(mask_path),
                split="train" if i < n_train else "test",
            )
        )
    manifest_path = directory / "manifest.csv"
    save_manifest(records, manifest_path)
    return manifest_path, records
