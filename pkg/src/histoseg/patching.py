"""Tiling of whole-slide images into local/global patch pairs and stitching
of per-patch predictions back into whole-slide probability maps.

A local patch is a patch_size x patch_size tile. Its global patch extends
margin pixels in every direction, zero-padded where it leaves the image,
so the local tile always sits exactly in the middle of the global one.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ensure_image, load_png, mask_from_image, mask_to_image, save_png
from .errors import ShapeMismatchError


@dataclass(frozen=True)
class PatchGrid:
    """Patch origins tiling an image, row-major over (row, col)."""

    image_height: int
    image_width: int
    patch_size: int
    margin: int
    origins: tuple[tuple[int, int], ...]

    @property
    def global_size(self) -> int:
        return self.patch_size + 2 * self.margin


@dataclass
class PatchPair:
    """A local tile plus its raw (unresized) global context patch."""

    local: np.ndarray
    global_raw: np.ndarray
    origin: tuple[int, int]

    def __post_init__(self):
        self.local = ensure_image(self.local)
        self.global_raw = ensure_image(self.global_raw)
        p = self.local.shape[0]
        if self.local.shape[1] != p:
            raise ShapeMismatchError("local patch must be square")
        g = self.global_raw.shape[0]
        if self.global_raw.shape[1] != g or g < p or (g - p) % 2 != 0:
            raise ShapeMismatchError(
                f"global patch {self.global_raw.shape} incompatible with local {self.local.shape}"
            )
        m = (g - p) // 2
        if not np.array_equal(self.global_raw[m : m + p, m : m + p], self.local):
            raise ShapeMismatchError("center crop of global patch differs from local patch")

    @property
    def patch_size(self) -> int:
        return self.local.shape[0]

    @property
    def margin(self) -> int:
        return (self.global_raw.shape[0] - self.local.shape[0]) // 2


def _axis_origins(dim: int, patch_size: int) -> list[int]:
    starts = list(range(0, dim - patch_size + 1, patch_size))
    if starts[-1] != dim - patch_size:
        starts.append(dim - patch_size)
    return starts


def plan_patch_grid(
    image_height: int,
    image_width: int,
    patch_size: int = 256,
    margin: int = 64,
) -> PatchGrid:
    """Plan a covering grid: stride = patch_size, last origin clamped to the edge."""
    if patch_size <= 0 or margin < 0:
        raise ValueError("patch_size must be positive and margin non-negative")
    if patch_size > image_height or patch_size > image_width:
        raise ValueError(
            f"patch_size {patch_size} exceeds image {image_height}x{image_width}"
        )
    rows = _axis_origins(image_height, patch_size)
    cols = _axis_origins(image_width, patch_size)
    origins = tuple((r, c) for r in rows for c in cols)
    return PatchGrid(image_height, image_width, patch_size, margin, origins)


def extract_local_patch(image: np.ndarray, origin: tuple[int, int], patch_size: int) -> np.ndarray:
    """Copy a patch_size square whose top-left corner is origin. Works on
    (H, W, C) images and (H, W) masks alike."""
    arr = np.asarray(image)
    r, c = origin
    if r < 0 or c < 0 or r + patch_size > arr.shape[0] or c + patch_size > arr.shape[1]:
        raise ValueError(
            f"patch at {origin} size {patch_size} leaves the {arr.shape[0]}x{arr.shape[1]} image"
        )
    return arr[r : r + patch_size, c : c + patch_size].copy()


def extract_global_patch(
    image: np.ndarray,
    origin: tuple[int, int],
    patch_size: int,
    margin: int,
) -> np.ndarray:
    """Extract the margin-extended patch, zero-padding outside the image."""
    img = ensure_image(image)
    r, c = origin
    if r < 0 or c < 0 or r + patch_size > img.shape[0] or c + patch_size > img.shape[1]:
        raise ValueError(
            f"patch at {origin} size {patch_size} leaves the {img.shape[0]}x{img.shape[1]} image"
        )
    size = patch_size + 2 * margin
    out = np.zeros((size, size, img.shape[2]), dtype=np.float64)
    top, left = r - margin, c - margin
    src_r0, src_c0 = max(top, 0), max(left, 0)
    src_r1, src_c1 = min(top + size, img.shape[0]), min(left + size, img.shape[1])
    out[src_r0 - top : src_r1 - top, src_c0 - left : src_c1 - left] = img[
        src_r0:src_r1, src_c0:src_c1
    ]
    return out


def extract_patch_pairs(image: np.ndarray, grid: PatchGrid) -> list[PatchPair]:
    """All local/global pairs of a grid, in origin order."""
    return [
        PatchPair(
            local=extract_local_patch(image, origin, grid.patch_size),
            global_raw=extract_global_patch(image, origin, grid.patch_size, grid.margin),
            origin=origin,
        )
        for origin in grid.origins
    ]


def stitch_predictions(grid: PatchGrid, patch_maps) -> np.ndarray:
    """Reassemble per-patch probability maps into a whole-slide map.

    Overlapping pixels take the arithmetic mean of all covering maps.
    """
    if len(patch_maps) != len(grid.origins):
        raise ShapeMismatchError(
            f"{len(patch_maps)} patch maps for {len(grid.origins)} grid origins"
        )
    p = grid.patch_size
    total = np.zeros((grid.image_height, grid.image_width), dtype=np.float64)
    count = np.zeros((grid.image_height, grid.image_width), dtype=np.int64)
    for origin, pmap in zip(grid.origins, patch_maps):
        arr = np.asarray(pmap, dtype=np.float64)
        if arr.ndim == 3:
            if arr.shape[2] != 1:
                raise ShapeMismatchError("patch maps must be single-channel")
            arr = arr[:, :, 0]
        if arr.shape != (p, p):
            raise ShapeMismatchError(f"patch map shape {arr.shape} != ({p}, {p})")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("patch map values must lie in [0, 1]")
        r, c = origin
        total[r : r + p, c : c + p] += arr
        count[r : r + p, c : c + p] += 1
    if count.min() < 1:
        raise ShapeMismatchError("grid does not cover the full image")
    return (total / count)[:, :, None]


def resize_bilinear(image: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Bilinear resampling with source coord = (dst + 0.5) * scale - 0.5, edge-clamped."""
    if out_height <= 0 or out_width <= 0:
        raise ValueError("output dimensions must be positive")
    img = ensure_image(image)
    in_h, in_w = img.shape[:2]

    def axis_coords(out_dim, in_dim):
        coords = (np.arange(out_dim) + 0.5) * (in_dim / out_dim) - 0.5
        coords = np.clip(coords, 0.0, in_dim - 1.0)
        lo = np.floor(coords).astype(np.int64)
        hi = np.minimum(lo + 1, in_dim - 1)
        frac = coords - lo
        return lo, hi, frac

    r_lo, r_hi, r_frac = axis_coords(out_height, in_h)
    c_lo, c_hi, c_frac = axis_coords(out_width, in_w)
    rf = r_frac[:, None, None]
    cf = c_frac[None, :, None]
    top = img[r_lo][:, c_lo] * (1 - cf) + img[r_lo][:, c_hi] * cf
    bottom = img[r_hi][:, c_lo] * (1 - cf) + img[r_hi][:, c_hi] * cf
    return top * (1 - rf) + bottom * rf


# ---------------------------------------------------------------------------
# Patch archives on disk: r{row}_c{col}_local.png / _global.png (+ optional
# _mask.png) plus grid.json.


def write_patch_archive(directory, grid: PatchGrid, pairs, masks=None) -> None:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if len(pairs) != len(grid.origins):
        raise ShapeMismatchError("one patch pair required per grid origin")
    if masks is not None and len(masks) != len(grid.origins):
        raise ShapeMismatchError("one mask required per grid origin")
    doc = {
        "patch_size": grid.patch_size,
        "margin": grid.margin,
        "image_height": grid.image_height,
        "image_width": grid.image_width,
        "origins": [list(o) for o in grid.origins],
    }
    with open(directory / "grid.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")
    for i, (origin, pair) in enumerate(zip(grid.origins, pairs)):
        r, c = origin
        save_png(pair.local, directory / f"r{r}_c{c}_local.png")
        save_png(pair.global_raw, directory / f"r{r}_c{c}_global.png")
        if masks is not None:
            save_png(mask_to_image(masks[i]), directory / f"r{r}_c{c}_mask.png")


def read_patch_archive(directory):
    """Load a patch archive. Returns (grid, pairs, masks); masks is None when
    the archive has no mask files."""
    from pathlib import Path

    directory = Path(directory)
    with open(directory / "grid.json", "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    grid = PatchGrid(
        image_height=int(doc["image_height"]),
        image_width=int(doc["image_width"]),
        patch_size=int(doc["patch_size"]),
        margin=int(doc["margin"]),
        origins=tuple((int(r), int(c)) for r, c in doc["origins"]),
    )
    pairs, masks = [], []
    for r, c in grid.origins:
        local = load_png(directory / f"r{r}_c{c}_local.png")
        global_raw = load_png(directory / f"r{r}_c{c}_global.png")
        pairs.append(PatchPair(local=local, global_raw=global_raw, origin=(r, c)))
        mask_path = directory / f"r{r}_c{c}_mask.png"
        if mask_path.exists():
            masks.append(mask_from_image(load_png(mask_path)))
    if masks and len(masks) != len(pairs):
        raise ShapeMismatchError("archive has masks for only some patches")
    return grid, pairs, (masks if masks else None)
