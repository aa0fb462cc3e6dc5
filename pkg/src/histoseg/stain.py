"""Macenko-style stain normalization of H&E images.

Pipeline: RGB -> optical density -> stain basis estimation (eigenplane of
the OD cloud, percentile angles) -> per-pixel stain concentrations ->
rescale to a target profile -> back to RGB.

Reference for the estimation procedure: Macenko et al., "A method for
normalizing histology slides for quantitative analysis", ISBI 2009.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import require_rgb
from .errors import DegenerateImageError, SingularBasisError

# Relative size of the second covariance eigenvalue below which the OD
# cloud is treated as single-stain.
_EIGENVALUE_FLOOR = 1e-9


@dataclass(frozen=True)
class StainParams:
    """Knobs of the normalization procedure.

    io_intensity is the transmitted-light reference, beta the OD noise
    floor below which pixels are ignored, alpha the percentile (in percent)
    picking robust extreme angles, and concentration_percentile the
    per-stain scale statistic.
    """

    io_intensity: float = 255.0
    beta: float = 0.15
    alpha: float = 1.0
    concentration_percentile: float = 99.0

    def __post_init__(self):
        if not self.io_intensity > 0:
            raise ValueError("io_intensity must be > 0")
        if not 0 < self.alpha < 50:
            raise ValueError("alpha must be in (0, 50)")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if not 50 < self.concentration_percentile <= 100:
            raise ValueError("concentration_percentile must be in (50, 100]")


@dataclass
class StainProfile:
    """A target color space: 3x2 unit-column stain basis plus per-stain
    concentration scales (column 0 hematoxylin-like, column 1 eosin-like)."""

    basis: np.ndarray
    max_concentration: np.ndarray

    def __post_init__(self):
        self.basis = np.asarray(self.basis, dtype=np.float64)
        self.max_concentration = np.asarray(self.max_concentration, dtype=np.float64)
        if self.basis.shape != (3, 2):
            raise ValueError(f"basis must be 3x2, got {self.basis.shape}")
        if self.max_concentration.shape != (2,):
            raise ValueError("max_concentration must have length 2")

    def __eq__(self, other):
        if not isinstance(other, StainProfile):
            return NotImplemented
        return np.array_equal(self.basis, other.basis) and np.array_equal(
            self.max_concentration, other.max_concentration
        )


def rgb_to_od(image: np.ndarray, params: StainParams = StainParams()) -> np.ndarray:
    """Convert RGB intensities to optical density: -log10(max(I, 1) / I0), clamped >= 0."""
    img = require_rgb(image)
    od = -np.log10(np.maximum(img, 1.0) / params.io_intensity)
    return np.maximum(od, 0.0)


def od_to_rgb(od: np.ndarray, params: StainParams = StainParams()) -> np.ndarray:
    """Invert the OD transform: I = I0 * 10**(-od), clamped to [0, 255]."""
    od = np.asarray(od, dtype=np.float64)
    rgb = params.io_intensity * np.power(10.0, -od)
    return np.clip(rgb, 0.0, 255.0)


def percentile_nearest_rank(values: np.ndarray, pct: float) -> float:
    """Nearest-rank percentile: the ceil(pct/100 * N)-th smallest value."""
    values = np.sort(np.asarray(values, dtype=np.float64), kind="stable")
    n = values.size
    if n == 0:
        raise ValueError("percentile of empty list")
    rank = min(max(math.ceil(pct * n / 100.0), 1), n)
    return float(values[rank - 1])


def estimate_stain_basis(od: np.ndarray, params: StainParams = StainParams()) -> np.ndarray:
    """Estimate the 3x2 stain basis from an OD image.

    Steps: drop pixels with any OD channel below beta, eigen-decompose the
    covariance of the survivors, project onto the leading eigenplane, take
    the alpha / (100 - alpha) percentile angles, map those angles back to
    OD space, clamp negatives, renormalize, and order hematoxylin first
    (larger red coefficient).
    """
    od = np.asarray(od, dtype=np.float64)
    pixels = od.reshape(-1, 3)
    survivors = pixels[~np.any(pixels < params.beta, axis=1)]
    if survivors.shape[0] < 2:
        raise DegenerateImageError(
            f"only {survivors.shape[0]} pixel(s) above the OD floor {params.beta}"
        )
    # Lexicographic sort makes the estimate exactly independent of pixel order.
    survivors = survivors[np.lexsort((survivors[:, 2], survivors[:, 1], survivors[:, 0]))]

    cov = np.cov(survivors, rowvar=False)
    eigvals, eigvecs = np.linalg.eigh(cov)
    lead, second = float(eigvals[2]), float(eigvals[1])
    if lead <= 0 or second <= _EIGENVALUE_FLOOR * lead:
        raise DegenerateImageError(
            "OD cloud is rank-deficient (single stain or constant image)"
        )
    plane = eigvecs[:, [2, 1]]
    for j in range(2):
        if plane[:, j].sum() < 0:
            plane[:, j] = -plane[:, j]

    proj = survivors @ plane
    phi = np.arctan2(proj[:, 1], proj[:, 0])
    phi_lo = percentile_nearest_rank(phi, params.alpha)
    phi_hi = percentile_nearest_rank(phi, 100.0 - params.alpha)

    vectors = []
    for angle in (phi_lo, phi_hi):
        v = plane @ np.array([math.cos(angle), math.sin(angle)])
        v = np.maximum(v, 0.0)
        norm = np.linalg.norm(v)
        if norm <= 0:
            raise DegenerateImageError("stain vector collapsed to zero after clamping")
        vectors.append(v / norm)

    if vectors[0][0] >= vectors[1][0]:
        first, second_vec = vectors
    else:
        second_vec, first = vectors
    return np.column_stack([first, second_vec])


def compute_concentrations(od: np.ndarray, basis: np.ndarray) -> np.ndarray:
    """Least-squares unmixing of every pixel: solve basis @ c = od, clamp c >= 0.

    Returns a (2, N) concentration map in pixel raster order.
    """
    basis = np.asarray(basis, dtype=np.float64)
    if basis.shape != (3, 2):
        raise ValueError(f"basis must be 3x2, got {basis.shape}")
    singular = np.linalg.svd(basis, compute_uv=False)
    if singular[1] <= 1e-12 * max(singular[0], 1e-300):
        raise SingularBasisError("basis columns are linearly dependent")
    od = np.asarray(od, dtype=np.float64)
    rhs = od.reshape(-1, 3).T
    conc, *_ = np.linalg.lstsq(basis, rhs, rcond=None)
    return np.maximum(conc, 0.0)


def fit_target_profile(target: np.ndarray, params: StainParams = StainParams()) -> StainProfile:
    """Fit the stain basis and concentration scales of a target image."""
    od = rgb_to_od(target, params)
    basis = estimate_stain_basis(od, params)
    conc = compute_concentrations(od, basis)
    max_c = np.array(
        [
            percentile_nearest_rank(conc[0], params.concentration_percentile),
            percentile_nearest_rank(conc[1], params.concentration_percentile),
        ]
    )
    return StainProfile(basis=basis, max_concentration=max_c)


def normalize_to_target(
    source: np.ndarray,
    profile: StainProfile,
    params: StainParams = StainParams(),
) -> np.ndarray:
    """Map a source image into the target profile's color space.

    Source concentrations are rescaled per stain by target_max / source_max
    and reconstructed through the target basis.
    """
    od = rgb_to_od(source, params)
    src_basis = estimate_stain_basis(od, params)
    conc = compute_concentrations(od, src_basis)
    scales = np.ones(2)
    for i in range(2):
        src_max = percentile_nearest_rank(conc[i], params.concentration_percentile)
        if src_max > 0:
            scales[i] = profile.max_concentration[i] / src_max
    conc = conc * scales[:, None]
    od_out = (profile.basis @ conc).T.reshape(od.shape)
    return od_to_rgb(od_out, params)


# ---------------------------------------------------------------------------
# Profile serialization: decimal text with 17 significant digits, which
# round-trips float64 exactly.


def profile_to_json(profile: StainProfile) -> str:
    def fmt(x: float) -> str:
        return format(float(x), ".17g")

    rows = ", ".join(
        "[" + ", ".join(fmt(v) for v in row) + "]" for row in profile.basis
    )
    max_c = ", ".join(fmt(v) for v in profile.max_concentration)
    return f'{{"basis": [{rows}], "max_concentration": [{max_c}]}}\n'


def profile_from_json(text: str) -> StainProfile:
    doc = json.loads(text)
    return StainProfile(
        basis=np.array(doc["basis"], dtype=np.float64),
        max_concentration=np.array(doc["max_concentration"], dtype=np.float64),
    )


def save_profile(profile: StainProfile, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(profile_to_json(profile))


def load_profile(path) -> StainProfile:
    with open(path, "r", encoding="utf-8") as fh:
        return profile_from_json(fh.read())
