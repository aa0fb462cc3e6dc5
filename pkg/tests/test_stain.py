import math

import numpy as np
import pytest

import histoseg as hs
from histoseg import synthetic as syn
from histoseg.errors import DegenerateImageError, ShapeMismatchError, SingularBasisError
from histoseg.stain import (
    load_profile,
    percentile_nearest_rank,
    profile_from_json,
    profile_to_json,
    save_profile,
)


def angular_error_deg(estimated, truth):
    cosines = np.clip((estimated * truth).sum(axis=0), -1.0, 1.0)
    return np.degrees(np.arccos(cosines))


@pytest.fixture()
def rng():
    return hs.SeededRng(2468)


class TestOdTransform:
    def test_white_is_zero(self):
        img = np.full((1, 1, 3), 255.0)
        assert np.array_equal(hs.rgb_to_od(img), np.zeros((1, 1, 3)))

    def test_tenth_intensity_is_one(self):
        od = hs.rgb_to_od(np.full((1, 1, 3), 25.5))
        assert np.allclose(od, 1.0, atol=1e-14)

    def test_black_pixel_scalar_oracle(self):
        # max(I, 1) floors black at intensity 1: od = -log10(1/255) = log10(255)
        od = hs.rgb_to_od(np.zeros((1, 1, 3)))
        assert np.allclose(od, math.log10(255.0), atol=1e-12)

    def test_non_rgb_rejected(self):
        with pytest.raises(ShapeMismatchError):
            hs.rgb_to_od(np.zeros((4, 4, 1)))

    def test_od_nonnegative_for_random_images(self, rng):
        img = rng.uniform(0, 255, (16, 16, 3))
        assert hs.rgb_to_od(img).min() >= 0.0

    def test_od_to_rgb_trivials(self):
        assert np.array_equal(hs.od_to_rgb(np.zeros((1, 1, 3))), np.full((1, 1, 3), 255.0))
        assert np.allclose(hs.od_to_rgb(np.ones((1, 1, 3))), 25.5, atol=1e-12)

    def test_roundtrip_within_one_level(self, rng):
        img = rng.uniform(1.0, 255.0, (12, 12, 3))
        back = hs.od_to_rgb(hs.rgb_to_od(img))
        assert np.abs(back - img).max() < 1.0


class TestPercentile:
    def test_nearest_rank_small_list(self):
        values = np.array([3.0, 1.0, 2.0, 4.0])
        assert percentile_nearest_rank(values, 50.0) == 2.0
        assert percentile_nearest_rank(values, 100.0) == 4.0
        assert percentile_nearest_rank(values, 1.0) == 1.0


class TestBasisEstimation:
    def test_recovery_with_pure_pixels(self, rng):
        img, _ = syn.make_two_stain_image(96, 96, rng, pure_fraction=0.06)
        basis = hs.estimate_stain_basis(hs.rgb_to_od(img))
        assert angular_error_deg(basis, syn.HE_BASIS).max() < 5.0

    def test_recovery_with_uniform_concentrations(self, rng):
        img, _ = syn.make_two_stain_image(96, 96, rng)
        basis = hs.estimate_stain_basis(hs.rgb_to_od(img))
        assert angular_error_deg(basis, syn.HE_BASIS).max() < 5.0

    def test_columns_unit_norm(self, rng):
        img, _ = syn.make_two_stain_image(64, 64, rng)
        basis = hs.estimate_stain_basis(hs.rgb_to_od(img))
        assert np.abs(np.linalg.norm(basis, axis=0) - 1.0).max() < 1e-9
        assert basis.min() >= -1e-9
        assert basis[0, 0] >= basis[0, 1]  # hematoxylin-first ordering

    def test_single_stain_rejected(self, rng):
        conc = rng.uniform(0.4, 1.2, (1, 48 * 48))
        od = (syn.HE_BASIS[:, :1] @ conc).T.reshape(48, 48, 3)
        with pytest.raises(DegenerateImageError):
            hs.estimate_stain_basis(od)

    def test_blank_image_rejected(self):
        with pytest.raises(DegenerateImageError):
            hs.estimate_stain_basis(hs.rgb_to_od(np.full((8, 8, 3), 255.0)))

    def test_pixel_permutation_invariance_exact(self, rng):
        img, _ = syn.make_two_stain_image(32, 48, rng)
        od = hs.rgb_to_od(img)
        basis = hs.estimate_stain_basis(od)
        flat = od.reshape(-1, 3)
        shuffled = flat[np.random.default_rng(0).permutation(flat.shape[0])]
        basis_shuffled = hs.estimate_stain_basis(shuffled.reshape(48, 32, 3))
        assert np.array_equal(basis, basis_shuffled)


class TestConcentrations:
    def test_exact_recovery_consistent_system(self, rng):
        conc = rng.uniform(0, 1.5, (2, 300))
        od = (syn.HE_BASIS @ conc).T.reshape(30, 10, 3)
        recovered = hs.compute_concentrations(od, syn.HE_BASIS)
        assert np.abs(recovered - conc).max() < 1e-9

    def test_zero_od_gives_zero(self):
        out = hs.compute_concentrations(np.zeros((4, 4, 3)), syn.HE_BASIS)
        assert np.array_equal(out, np.zeros((2, 16)))

    def test_never_negative(self, rng):
        od = rng.uniform(0, 1.2, (10, 10, 3))
        assert hs.compute_concentrations(od, syn.HE_BASIS).min() >= 0.0

    def test_matches_normal_equations_oracle(self, rng):
        # Independent route: solve (B^T B) c = B^T od with an explicit
        # 2x2 inverse, then clamp, exactly as the contract states.
        basis = syn.HE_BASIS
        od = rng.uniform(0, 1.0, (6, 7, 3))
        got = hs.compute_concentrations(od, basis)
        bt_b = basis.T @ basis
        det = bt_b[0, 0] * bt_b[1, 1] - bt_b[0, 1] * bt_b[1, 0]
        inv = np.array([[bt_b[1, 1], -bt_b[0, 1]], [-bt_b[1, 0], bt_b[0, 0]]]) / det
        expected = np.maximum(inv @ (basis.T @ od.reshape(-1, 3).T), 0.0)
        assert np.abs(got - expected).max() < 1e-9

    def test_rank_deficient_basis_rejected(self):
        column = syn.HE_BASIS[:, :1]
        with pytest.raises(SingularBasisError):
            hs.compute_concentrations(np.zeros((2, 2, 3)), np.hstack([column, column]))


class TestTargetProfile:
    def test_deterministic(self, rng):
        img, _ = syn.make_two_stain_image(48, 48, rng)
        a = hs.fit_target_profile(img)
        b = hs.fit_target_profile(img)
        assert a == b

    def test_synthetic_basis_within_five_degrees(self, rng):
        img, _ = syn.make_two_stain_image(96, 96, rng, pure_fraction=0.06)
        profile = hs.fit_target_profile(img)
        assert angular_error_deg(profile.basis, syn.HE_BASIS).max() < 5.0

    def test_rotated_target_same_profile(self, rng):
        img, _ = syn.make_two_stain_image(64, 64, rng)
        a = hs.fit_target_profile(img)
        b = hs.fit_target_profile(np.ascontiguousarray(np.rot90(img)))
        assert a == b


class TestNormalization:
    def test_self_normalization_within_two_levels(self, rng):
        target, _ = syn.make_two_stain_image(96, 96, rng, pure_fraction=0.06)
        profile = hs.fit_target_profile(target)
        out = hs.normalize_to_target(target, profile)
        assert np.abs(out - target).max() <= 2.0

    def test_idempotence_within_two_levels(self, rng):
        target, _ = syn.make_two_stain_image(96, 96, rng, pure_fraction=0.06)
        source, _ = syn.make_two_stain_image(96, 96, rng.derive(1), pure_fraction=0.06)
        profile = hs.fit_target_profile(target)
        once = hs.normalize_to_target(source, profile)
        twice = hs.normalize_to_target(once, profile)
        assert np.abs(twice - once).max() <= 2.0

    def test_same_concentrations_different_bases_converge(self, rng):
        n = 96 * 96
        conc = rng.uniform(0, 1.2, (2, n))
        k = int(n * 0.06)
        conc[1, :k] = 0.0
        conc[0, :k] = rng.uniform(0.5, 1.2, k)
        conc[0, k : 2 * k] = 0.0
        conc[1, k : 2 * k] = rng.uniform(0.5, 1.2, k)
        image_a = hs.od_to_rgb((syn.HE_BASIS @ conc).T.reshape(96, 96, 3))
        image_b = hs.od_to_rgb((syn.ALT_BASIS @ conc).T.reshape(96, 96, 3))
        target, _ = syn.make_two_stain_image(96, 96, rng.derive(2), pure_fraction=0.06)
        profile = hs.fit_target_profile(target)
        out_a = hs.normalize_to_target(image_a, profile)
        out_b = hs.normalize_to_target(image_b, profile)
        assert np.abs(out_a - out_b).max() <= 2.0

    def test_degenerate_source_propagates(self, rng):
        target, _ = syn.make_two_stain_image(48, 48, rng)
        profile = hs.fit_target_profile(target)
        with pytest.raises(DegenerateImageError):
            hs.normalize_to_target(np.full((8, 8, 3), 255.0), profile)


class TestProfileSerialization:
    def test_json_roundtrip_bit_exact(self, rng):
        img, _ = syn.make_two_stain_image(48, 48, rng)
        profile = hs.fit_target_profile(img)
        restored = profile_from_json(profile_to_json(profile))
        assert np.array_equal(restored.basis, profile.basis)
        assert np.array_equal(restored.max_concentration, profile.max_concentration)

    def test_file_roundtrip_and_idempotent_bytes(self, rng, tmp_path):
        img, _ = syn.make_two_stain_image(48, 48, rng)
        profile = hs.fit_target_profile(img)
        path = tmp_path / "profile.json"
        save_profile(profile, path)
        first = path.read_bytes()
        restored = load_profile(path)
        assert restored == profile
        save_profile(restored, path)
        assert path.read_bytes() == first
