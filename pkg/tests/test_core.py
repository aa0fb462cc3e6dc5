import numpy as np
import pytest
from PIL import Image

import histoseg as hs
from histoseg.core import Tensor, mask_to_image
from histoseg.errors import MalformedPngError, ShapeMismatchError, UnsupportedPngError


class TestTensor:
    def test_elementwise_add(self):
        out = hs.tensor_elementwise("add", Tensor(np.array([1.0, 2.0])), Tensor(np.array([3.0, 4.0])))
        assert np.array_equal(out.data, [4.0, 6.0])

    def test_mul_by_ones_is_identity(self):
        x = Tensor(np.arange(12, dtype=float).reshape(3, 4))
        out = hs.tensor_elementwise("mul", x, Tensor(np.ones((3, 4))))
        assert np.array_equal(out.data, x.data)

    def test_sub_self_is_zero(self):
        x = Tensor(np.linspace(-5, 5, 8))
        out = hs.tensor_elementwise("sub", x, x)
        assert np.array_equal(out.data, np.zeros(8))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            hs.tensor_elementwise("add", Tensor(np.zeros(3)), Tensor(np.zeros(4)))

    def test_unknown_op_rejected(self):
        with pytest.raises(ValueError):
            hs.tensor_elementwise("div", Tensor(np.zeros(3)), Tensor(np.zeros(3)))

    def test_grad_shape_must_match(self):
        with pytest.raises(ShapeMismatchError):
            Tensor(np.zeros((2, 3)), grad=np.zeros((3, 2)))

    def test_data_coerced_to_float64(self):
        t = Tensor(np.arange(4, dtype=np.int32))
        assert t.data.dtype == np.float64
        assert t.shape == (4,)


class TestPng:
    def test_load_white_pixel(self, tmp_path):
        path = tmp_path / "white.png"
        Image.fromarray(np.full((1, 1, 3), 255, dtype=np.uint8)).save(path)
        img = hs.load_png(path)
        assert img.shape == (1, 1, 3)
        assert np.array_equal(img, np.full((1, 1, 3), 255.0))

    def test_load_black_image(self, tmp_path):
        path = tmp_path / "black.png"
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).save(path)
        assert np.array_equal(hs.load_png(path), np.zeros((2, 2, 3)))

    def test_roundtrip_corpus(self, tmp_path):
        rng = np.random.default_rng(7)
        for i in range(20):
            h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
            channels = 3 if i % 2 == 0 else 1
            pixels = rng.integers(0, 256, (h, w, channels)).astype(np.float64)
            path = tmp_path / f"img{i}.png"
            hs.save_png(pixels, path)
            assert np.array_equal(hs.load_png(path), pixels)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            hs.load_png(tmp_path / "nope.png")

    def test_malformed_png(self, tmp_path):
        path = tmp_path / "garbage.png"
        path.write_bytes(b"this is not a png at all")
        with pytest.raises(MalformedPngError):
            hs.load_png(path)

    def test_non_png_format_rejected(self, tmp_path):
        path = tmp_path / "actually.jpg"
        Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(path, format="JPEG")
        with pytest.raises(MalformedPngError):
            hs.load_png(path)

    def test_16bit_rejected(self, tmp_path):
        path = tmp_path / "deep.png"
        Image.fromarray(np.zeros((2, 2), dtype=np.uint16)).save(path)
        with pytest.raises(UnsupportedPngError):
            hs.load_png(path)

    def test_palette_rejected(self, tmp_path):
        path = tmp_path / "palette.png"
        Image.fromarray(np.zeros((2, 2, 3), dtype=np.uint8)).convert("P").save(path)
        with pytest.raises(UnsupportedPngError):
            hs.load_png(path)

    def test_save_clamps_and_rounds(self, tmp_path):
        path = tmp_path / "clamp.png"
        hs.save_png(np.array([[[255.4], [-0.3]]]), path)
        out = hs.load_png(path)
        assert out[0, 0, 0] == 255.0
        assert out[0, 1, 0] == 0.0

    def test_save_to_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            hs.save_png(np.zeros((2, 2, 3)), tmp_path / "missing_dir" / "x.png")


class TestMasks:
    def test_all_zero(self):
        assert not hs.mask_from_image(np.zeros((3, 4, 3))).any()

    def test_all_255(self):
        assert hs.mask_from_image(np.full((3, 4, 1), 255.0)).all()

    def test_single_pixel(self):
        img = np.zeros((5, 6, 1))
        img[2, 3, 0] = 17.0
        mask = hs.mask_from_image(img)
        assert mask.sum() == 1 and mask[2, 3]

    def test_first_channel_rule(self):
        img = np.zeros((1, 1, 3))
        img[0, 0] = [0.0, 99.0, 99.0]
        assert not hs.mask_from_image(img).any()

    def test_mask_to_image_roundtrip(self):
        rng = np.random.default_rng(3)
        mask = rng.random((6, 7)) > 0.5
        assert np.array_equal(hs.mask_from_image(mask_to_image(mask)), mask)


class TestSeededRng:
    def test_equal_seeds_equal_streams(self):
        a = hs.SeededRng(99)
        b = hs.SeededRng(99)
        assert np.array_equal(a.uniform(size=10_000), b.uniform(size=10_000))

    def test_different_seeds_differ(self):
        assert not np.array_equal(
            hs.SeededRng(1).uniform(size=100), hs.SeededRng(2).uniform(size=100)
        )

    def test_derived_streams_reproducible_and_distinct(self):
        root = hs.SeededRng(5)
        d1 = root.derive(3, 7).uniform(size=50)
        d2 = hs.SeededRng(5).derive(3, 7).uniform(size=50)
        assert np.array_equal(d1, d2)
        assert not np.array_equal(d1, hs.SeededRng(5).derive(3, 8).uniform(size=50))
        assert not np.array_equal(d1, hs.SeededRng(5).uniform(size=50))

    def test_permutation_is_permutation(self):
        perm = hs.SeededRng(11).permutation(40)
        assert sorted(perm.tolist()) == list(range(40))

    def test_negative_seed_accepted(self):
        assert hs.SeededRng(-3).uniform() == hs.SeededRng(-3).uniform()
