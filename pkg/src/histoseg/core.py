"""Numeric foundations: float64 tensors, raster images, binary masks, PNG I/O,
and a counter-based seeded random generator.

Conventions used across the whole package:

* images are float64 arrays of shape (height, width, channels) with
  channels in {1, 3}; RGB intensities live in [0, 255], probability maps
  in [0, 1],
* binary masks are bool arrays of shape (height, width),
* everything is row-major with (row, column, channel) index order,
* all arithmetic is double precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import MalformedPngError, ShapeMismatchError, UnsupportedPngError


@dataclass
class Tensor:
    """Float64 n-d array plus an optional gradient buffer of the same shape.

    Plain ndarrays are used for activations and images; Tensor exists for
    trainable parameters, where the gradient slot matters.
    """

    data: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64)
        if self.grad is not None:
            self.grad = np.ascontiguousarray(self.grad, dtype=np.float64)
            if self.grad.shape != self.data.shape:
                raise ShapeMismatchError(
                    f"grad shape {self.grad.shape} != data shape {self.data.shape}"
                )

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @classmethod
    def zeros(cls, shape) -> "Tensor":
        return cls(np.zeros(shape, dtype=np.float64))


_ELEMENTWISE_OPS = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


def tensor_elementwise(op_kind: str, a: Tensor, b: Tensor) -> Tensor:
    """Exact elementwise add/sub/mul of two equal-shape tensors."""
    if op_kind not in _ELEMENTWISE_OPS:
        raise ValueError(f"unknown op_kind {op_kind!r}, expected add, sub or mul")
    if a.shape != b.shape:
        raise ShapeMismatchError(f"operand shapes differ: {a.shape} vs {b.shape}")
    return Tensor(_ELEMENTWISE_OPS[op_kind](a.data, b.data))


# ---------------------------------------------------------------------------
# Raster images


def ensure_image(image: np.ndarray) -> np.ndarray:
    """Validate and return an (H, W, C) float64 image with C in {1, 3}."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeMismatchError(
            f"expected an (H, W, 1|3) image, got shape {np.asarray(image).shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("image contains non-finite values")
    return arr


def require_rgb(image: np.ndarray) -> np.ndarray:
    img = ensure_image(image)
    if img.shape[2] != 3:
        raise ShapeMismatchError(f"expected an RGB image, got {img.shape[2]} channel(s)")
    return img


_SUPPORTED_PNG_MODES = ("L", "RGB")


def load_png(path) -> np.ndarray:
    """Decode an 8-bit grayscale or RGB PNG into an (H, W, C) float64 image.

    Missing files raise FileNotFoundError, undecodable files
    MalformedPngError, and valid PNGs of any other mode (16-bit, palette,
    alpha, 1-bit) UnsupportedPngError.
    """
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise MalformedPngError(f"{path}: not a PNG file (format={im.format})")
            if im.mode not in _SUPPORTED_PNG_MODES:
                raise UnsupportedPngError(
                    f"{path}: mode {im.mode!r} unsupported, expected 8-bit L or RGB"
                )
            arr = np.asarray(im, dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise MalformedPngError(f"{path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[:, :, None]
    return arr


def save_png(image: np.ndarray, path) -> None:
    """Write an image as an 8-bit PNG, clamping and rounding values to [0, 255]."""
    img = ensure_image(image)
    quantized = np.rint(np.clip(img, 0.0, 255.0)).astype(np.uint8)
    if quantized.shape[2] == 1:
        pil = Image.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(quantized, mode="RGB")
    pil.save(path, format="PNG")


def mask_from_image(image: np.ndarray) -> np.ndarray:
    """Binarize an annotation raster: a pixel is set iff its first channel is > 0."""
    img = ensure_image(image)
    return img[:, :, 0] > 0.0


def mask_to_image(mask: np.ndarray) -> np.ndarray:
    """Render a bool mask as a single-channel {0, 255} image."""
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise ShapeMismatchError(f"expected an (H, W) mask, got shape {mask.shape}")
    return np.where(mask, 255.0, 0.0)[:, :, None]


# ---------------------------------------------------------------------------
# Seeded randomness


class SeededRng:
    """Deterministic counter-based random generator (Philox).

    Identical (seed, key) pairs produce identical streams on every platform.
    Generators are never shared: parallel or per-sample work derives its own
    substream with ``derive``.
    """

    def __init__(self, seed: int, _key: tuple[int, ...] = ()):
        self.seed = int(seed) % 2**64
        self.key = tuple(int(k) for k in _key)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(seq))

    def derive(self, *indices: int) -> "SeededRng":
        """Independent substream addressed by integer indices, e.g. (epoch, sample)."""
        return SeededRng(self.seed, self.key + tuple(int(i) for i in indices))

    def integers(self, low: int, high: int | None = None) -> int:
        return int(self._gen.integers(low, high))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self):
        return f"SeededRng(seed={self.seed}, key={self.key})"
