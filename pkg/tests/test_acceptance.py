"""Acceptance suite: one test per verification criterion, each printing a
PASS/FAIL line. Run with `pytest tests/test_acceptance.py -v -rA` to see the
lines for passing tests too.
"""

import time

import numpy as np
import pytest

import fd_oracle
import histoseg as hs
from histoseg import cli
from histoseg import synthetic as syn
from histoseg.config import default_config, save_config


def report(name, passed, detail=""):
    status = "PASS" if passed else "FAIL"
    print(f"[acceptance] {name}: {status}" + (f"  ({detail})" if detail else ""))
    assert passed, f"{name}: {detail}"


class TestGradientCorrectness:
    def test_every_parameter_matches_finite_differences(self):
        config = hs.ModelConfig(patch_size=32, levels=2, base_channels=4, seed=2024)
        model = hs.build_model(config)
        rng = hs.SeededRng(1)
        local = rng.uniform(0, 255, (1, 32, 32, 3))
        glob = rng.uniform(0, 255, (1, 48, 48, 3))
        target = (rng.uniform(0, 1, (1, 32, 32, 1)) < 0.4).astype(float)
        n_params = hs.count_parameters(model)

        start = time.monotonic()
        worst, refined, failures = fd_oracle.two_tier_check(
            model, local, glob, target, h=1e-5, tol=1e-4
        )
        elapsed = time.monotonic() - start
        report(
            "gradient correctness (h=1e-5, rel < 1e-4)",
            not failures and elapsed < 120.0,
            f"{n_params} parameters, worst rel {worst:.2e}, "
            f"{refined} refined in longdouble, {elapsed:.1f}s",
        )


class TestLossAndMetricOracles:
    def test_dice_and_jaccard_against_bruteforce(self):
        rng = hs.SeededRng(2)
        worst_identity = 0.0
        for _ in range(1000):
            h = rng.integers(1, 17)
            w = rng.integers(1, 17)
            a = rng.uniform(0, 1, (h, w)) < 0.5
            b = rng.uniform(0, 1, (h, w)) < 0.5
            inter = union = size_a = size_b = 0
            for i in range(h):
                for j in range(w):
                    inter += int(a[i, j] and b[i, j])
                    union += int(a[i, j] or b[i, j])
                    size_a += int(a[i, j])
                    size_b += int(b[i, j])
            expected_dice = 1.0 if size_a + size_b == 0 else 2.0 * inter / (size_a + size_b)
            expected_jaccard = 0.0 if union == 0 else (union - inter) / union
            assert hs.dice_coefficient(a, b) == expected_dice
            assert hs.hard_jaccard_distance(a, b) == expected_jaccard
            d = expected_jaccard
            worst_identity = max(
                worst_identity, abs(hs.dice_coefficient(a, b) - 2 * (1 - d) / (2 - d))
            )
        report(
            "loss/metric oracles (1000 pairs, exact + identity 1e-12)",
            worst_identity < 1e-12,
            f"worst identity residual {worst_identity:.2e}",
        )


class TestAmsgradExactness:
    def test_hand_step_and_vhat_monotonicity(self):
        theta = hs.Tensor(np.array([0.0]))
        state = hs.OptimizerState.for_params([theta])
        hs.amsgrad_step([theta], [np.array([1.0])], state, hs.TrainConfig())
        expected = -0.001 * 0.1 / (np.sqrt(0.001) + 1e-8)
        step_error = abs(theta.data[0] - expected)

        rng = hs.SeededRng(3)
        params = [hs.Tensor(np.zeros(8))]
        state = hs.OptimizerState.for_params(params)
        config = hs.TrainConfig()
        monotone = True
        previous = state.v_hat[0].copy()
        for _ in range(10_000):
            hs.amsgrad_step(params, [rng.normal(0, 2, 8)], state, config)
            if not (state.v_hat[0] >= previous).all():
                monotone = False
                break
            previous = state.v_hat[0].copy()
        report(
            "amsgrad exactness (first step 1e-12, v-hat monotone over 1e4 steps)",
            step_error < 1e-12 and monotone,
            f"first-step error {step_error:.2e}, monotone={monotone}",
        )


class TestGeometrySuite:
    def test_grid_cropping_stitching_padding(self):
        grid = hs.plan_patch_grid(1000, 1000, 256, 64)
        rows = sorted({r for r, _ in grid.origins})
        cols = sorted({c for _, c in grid.origins})
        axes_ok = rows == [0, 256, 512, 744] and cols == [0, 256, 512, 744]

        covered = np.zeros((1000, 1000), dtype=bool)
        for r, c in grid.origins:
            covered[r : r + 256, c : c + 256] = True
        coverage_ok = covered.all()

        rng = hs.SeededRng(4)
        image = rng.uniform(1, 255, (1000, 1000, 3))  # strictly positive pixels
        crop_ok = True
        padding_ok = True
        for origin in grid.origins:
            local = hs.extract_local_patch(image, origin, 256)
            glob = hs.extract_global_patch(image, origin, 256, 64)
            if not np.array_equal(glob[64:320, 64:320], local):
                crop_ok = False
            rows_idx = np.arange(-64, 320) + origin[0]
            cols_idx = np.arange(-64, 320) + origin[1]
            outside = (
                (rows_idx[:, None] < 0) | (rows_idx[:, None] >= 1000)
                | (cols_idx[None, :] < 0) | (cols_idx[None, :] >= 1000)
            )
            if outside.any() and not (glob[outside] == 0.0).all():
                padding_ok = False
            if not (glob[~outside] > 0.0).all():
                padding_ok = False

        prob_map = rng.uniform(0, 1, (1000, 1000, 1))
        maps = [hs.extract_local_patch(prob_map, origin, 256) for origin in grid.origins]
        stitch_ok = np.array_equal(hs.stitch_predictions(grid, maps), prob_map)

        report(
            "geometry suite (grid {0,256,512,744}, center crop, stitch identity, zero padding)",
            axes_ok and coverage_ok and crop_ok and stitch_ok and padding_ok,
            f"axes={axes_ok} coverage={coverage_ok} crop={crop_ok} "
            f"stitch={stitch_ok} padding={padding_ok}",
        )


class TestStainOracles:
    def test_basis_recovery_and_normalization_bounds(self):
        rng = hs.SeededRng(5)

        start = time.monotonic()
        worst_angle = 0.0
        for pure_fraction in (0.06, 0.0):
            image, _ = syn.make_two_stain_image(96, 96, rng.derive(int(pure_fraction * 100)),
                                                pure_fraction=pure_fraction)
            basis = hs.estimate_stain_basis(hs.rgb_to_od(image))
            cosines = np.clip((basis * syn.HE_BASIS).sum(axis=0), -1.0, 1.0)
            worst_angle = max(worst_angle, float(np.degrees(np.arccos(cosines)).max()))
        recovery_seconds = time.monotonic() - start

        start = time.monotonic()
        target, _ = syn.make_two_stain_image(96, 96, rng.derive(10), pure_fraction=0.06)
        profile = hs.fit_target_profile(target)
        self_delta = float(np.abs(hs.normalize_to_target(target, profile) - target).max())
        self_seconds = time.monotonic() - start

        start = time.monotonic()
        source, _ = syn.make_two_stain_image(96, 96, rng.derive(11), pure_fraction=0.06)
        once = hs.normalize_to_target(source, profile)
        twice = hs.normalize_to_target(once, profile)
        idem_delta = float(np.abs(twice - once).max())
        idem_seconds = time.monotonic() - start

        report(
            "stain oracles (recovery < 5 deg, self/idempotence <= 2 levels, < 60s each)",
            worst_angle < 5.0
            and self_delta <= 2.0
            and idem_delta <= 2.0
            and max(recovery_seconds, self_seconds, idem_seconds) < 60.0,
            f"worst angle {worst_angle:.3f} deg, self {self_delta:.3f}, "
            f"idempotence {idem_delta:.3f}, slowest check "
            f"{max(recovery_seconds, self_seconds, idem_seconds):.1f}s",
        )


class TestEndToEndOverfit:
    def test_blob_dataset_reaches_dice(self, blob_fixture, overfit_run):
        assert len(blob_fixture["dataset"]) == 8
        assert blob_fixture["dataset"][0][0].patch_size == 64
        assert blob_fixture["dataset"][0][0].margin == 16
        history = overfit_run["history"]
        report(
            "end-to-end overfit (8 pairs, <= 200 epochs, dice >= 0.90, < 5 min)",
            len(history) <= 200
            and history.mean_dice[-1] >= 0.90
            and overfit_run["seconds"] < 300.0,
            f"final dice {history.mean_dice[-1]:.4f} after {len(history)} epochs "
            f"in {overfit_run['seconds']:.0f}s",
        )


@pytest.fixture(scope="class")
def determinism_workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("determinism")
    rng = hs.SeededRng(271828)
    manifest_path, records = syn.write_synthetic_dataset(root / "data", rng, n_train=2, n_test=1)
    config = default_config(
        records[0].image_path, str(root / "out"),
        patch_size=64, margin=16, levels=2, base_channels=4, seed=42, epochs=2,
    )
    config_path = root / "config.toml"
    save_config(config, config_path)
    args = ["--config", str(config_path), "--manifest", str(manifest_path)]
    assert cli.main(["normalize", *args]) == 0
    assert cli.main(["patchify", *args]) == 0
    return {
        "root": root,
        "config_path": str(config_path),
        "manifest_path": str(manifest_path),
        "test_image": [r for r in records if r.split == "test"][0].image_path,
    }


class TestDeterminism:
    def test_repeated_runs_are_byte_identical(self, determinism_workspace):
        ws = determinism_workspace
        out = ws["root"] / "out"
        ckpt = out / "model.ckpt"
        train_args = ["train", "--config", ws["config_path"], "--manifest", ws["manifest_path"]]
        assert cli.main(train_args) == 0
        first_ckpt = ckpt.read_bytes()
        assert cli.main(train_args) == 0
        train_ok = ckpt.read_bytes() == first_ckpt

        predict_args = ["predict", "--config", ws["config_path"], "--image", ws["test_image"]]
        stem = ws["test_image"].rsplit("/", 1)[-1].removesuffix(".png")
        prob_path = out / "predictions" / f"{stem}_prob.png"
        mask_path = out / "predictions" / f"{stem}_mask.png"
        assert cli.main(predict_args) == 0
        first_pred = (prob_path.read_bytes(), mask_path.read_bytes())
        assert cli.main(predict_args) == 0
        predict_ok = (prob_path.read_bytes(), mask_path.read_bytes()) == first_pred

        report(
            "determinism (byte-identical checkpoints and prediction PNGs)",
            train_ok and predict_ok,
            f"train={train_ok} predict={predict_ok}",
        )


class TestBorderContextDirection:
    def test_dual_view_at_least_matches_local_only_on_borders(self, border_run):
        report(
            "border-context direction (dual-view band dice >= local-only band dice)",
            border_run["dual"] >= border_run["ablation"],
            f"dual {border_run['dual']:.4f} vs local-only {border_run['ablation']:.4f} "
            f"({border_run['seconds']:.0f}s for both runs)",
        )
