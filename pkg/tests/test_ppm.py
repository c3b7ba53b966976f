import numpy as np
import pytest

from litedet.ppm import (
    BadDims,
    BadMagic,
    PpmImage,
    Truncated,
    bilinear_resize,
    from_tensor,
    read_ppm,
    to_input_tensor,
    write_ppm,
)


class TestReadPpm:
    def test_one_pixel_red(self):
        img = read_ppm(b"P6\n1 1\n255\n\xff\x00\x00")
        assert (img.width, img.height) == (1, 1)
        assert img.rgb == b"\xff\x00\x00"

    def test_maxval_16bit_rejected(self):
        with pytest.raises(BadDims):
            read_ppm(b"P6\n1 1\n65535\n" + b"\x00" * 6)

    def test_comments_between_tokens(self):
        data = b"P6\n# a comment\n2 # inline\n1\n# another\n255\n" + b"\x01" * 6
        img = read_ppm(data)
        assert (img.width, img.height) == (2, 1)

    def test_bad_magic(self):
        with pytest.raises(BadMagic):
            read_ppm(b"P5\n1 1\n255\n\x00")

    def test_truncated_raster(self):
        with pytest.raises(Truncated):
            read_ppm(b"P6\n2 2\n255\n\x00\x00\x00")

    def test_truncated_header(self):
        with pytest.raises(Truncated):
            read_ppm(b"P6\n2")

    def test_non_numeric_dims(self):
        with pytest.raises(BadDims):
            read_ppm(b"P6\nabc 1\n255\n\x00\x00\x00")

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        rgb = bytes(rng.integers(0, 256, 3 * 5 * 4, dtype=np.uint8))
        img = PpmImage(width=5, height=4, rgb=rgb)
        assert read_ppm(write_ppm(img)) == img


class TestToInputTensor:
    def test_no_resample_exact_scaling(self):
        rgb = bytes(range(12))
        img = PpmImage(width=2, height=2, rgb=rgb)
        t = to_input_tensor(img, 2, 2)
        assert t.shape == (3, 2, 2)
        expected = np.frombuffer(rgb, dtype=np.uint8).reshape(2, 2, 3)
        np.testing.assert_allclose(
            t, expected.transpose(2, 0, 1).astype(np.float32) / 255.0)

    def test_checkerboard_to_single_pixel(self):
        # 2x2 checkerboard downsampled to 1x1 = mean of the four corners
        rgb = bytes([255, 255, 255, 0, 0, 0, 0, 0, 0, 255, 255, 255])
        img = PpmImage(width=2, height=2, rgb=rgb)
        t = to_input_tensor(img, 1, 1)
        np.testing.assert_allclose(t, 0.5, atol=1e-6)

    def test_all_white(self):
        img = PpmImage(width=3, height=3, rgb=b"\xff" * 27)
        t = to_input_tensor(img, 5, 5)
        np.testing.assert_allclose(t, 1.0, atol=1e-6)

    def test_bad_target_dims(self):
        img = PpmImage(width=1, height=1, rgb=b"\x00\x00\x00")
        with pytest.raises(BadDims):
            to_input_tensor(img, 0, 5)


class TestBilinearResize:
    def test_identity(self):
        x = np.random.default_rng(1).uniform(size=(3, 4, 4)).astype(np.float32)
        np.testing.assert_array_equal(bilinear_resize(x, 4, 4), x)

    def test_upsample_constant(self):
        x = np.full((1, 2, 2), 0.7, dtype=np.float32)
        np.testing.assert_allclose(bilinear_resize(x, 5, 5), 0.7, atol=1e-6)

    def test_values_within_input_range(self):
        x = np.random.default_rng(2).uniform(size=(3, 6, 9)).astype(np.float32)
        y = bilinear_resize(x, 13, 4)
        assert y.min() >= x.min() - 1e-6
        assert y.max() <= x.max() + 1e-6


class TestFromTensor:
    def test_round_trip_quantized(self):
        x = np.random.default_rng(3).uniform(size=(3, 4, 4)).astype(np.float32)
        img = from_tensor(x)
        back = to_input_tensor(img, 4, 4)
        assert np.abs(back - x).max() <= 0.5 / 255 + 1e-6

    def test_channel_guard(self):
        with pytest.raises(BadDims):
            from_tensor(np.zeros((1, 2, 2)))
