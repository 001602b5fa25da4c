import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from urgr.imaging import (
    PSNR_INFINITE,
    SHARPEN_KERNEL,
    DegradationConfig,
    bicubic_resize,
    canny_edges,
    degrade,
    gaussian_kernel,
    gaussian_smooth,
    jpeg_compress,
    mse,
    psnr,
    quality,
    read_image,
    sharpen,
    write_image,
)
from urgr import InvalidArgument


def loop_mse(a, b):
    h, w, c = a.shape
    total = 0.0
    for y in range(h):
        for x in range(w):
            for k in range(c):
                d = a[y, x, k] - b[y, x, k]
                total += d * d
    return total / (h * w * c)


def hand_gaussian(size, sigma):
    r = size // 2
    k = [[math.exp(-((x - r) ** 2 + (y - r) ** 2) / (2 * sigma**2)) for x in range(size)]
         for y in range(size)]
    s = sum(map(sum, k))
    return np.array([[v / s for v in row] for row in k])


unit_images = arrays(np.float64, (6, 7, 3), elements=st.floats(0, 1))


class TestGaussianSmooth:
    @pytest.mark.parametrize("c", [0.0, 0.25, 0.6, 1.0])
    def test_constant_preserved(self, c):
        img = np.full((9, 12, 3), c)
        np.testing.assert_allclose(gaussian_smooth(img), img, atol=1e-12)

    def test_impulse_response_is_the_kernel(self):
        img = np.zeros((11, 11, 1))
        img[5, 5, 0] = 1.0
        out = gaussian_smooth(img, 5, 1.0)[:, :, 0]
        expected = np.zeros((11, 11))
        expected[3:8, 3:8] = hand_gaussian(5, 1.0)
        np.testing.assert_allclose(out, expected, atol=1e-10, rtol=0)

    def test_kernel_is_normalized(self):
        assert gaussian_kernel(5, 1.3).sum() == pytest.approx(1.0, abs=1e-15)

    def test_dimensions(self):
        img = np.random.default_rng(0).random((480, 640, 3))
        assert gaussian_smooth(img).shape == (480, 640, 3)

    @pytest.mark.parametrize("kernel, sigma", [(4, 1.0), (1, 1.0), (5, 0.0), (5, -1.0)])
    def test_bad_arguments(self, kernel, sigma):
        with pytest.raises(InvalidArgument):
            gaussian_smooth(np.zeros((8, 8, 3)), kernel, sigma)


class TestSharpen:
    def test_kernel_sums_to_one(self):
        assert SHARPEN_KERNEL.sum() == 1.0

    @pytest.mark.parametrize("c", [0.0, 0.1, 0.5, 1.0])
    def test_constant_preserved(self, c):
        img = np.full((6, 6, 3), c)
        np.testing.assert_allclose(sharpen(img), img, atol=1e-12)

    def test_impulse(self):
        img = np.zeros((7, 7, 1))
        img[3, 3, 0] = 0.1
        out = sharpen(img)[:, :, 0]
        expected = np.zeros((7, 7))
        expected[3, 3] = 0.5  # the -0.1 neighbours clamp to 0
        np.testing.assert_allclose(out, expected, atol=1e-10, rtol=0)

    def test_dimensions(self, natural_image):
        assert sharpen(natural_image).shape == natural_image.shape


class TestJpeg:
    def test_dimensions(self, natural_image):
        assert jpeg_compress(natural_image, 50).shape == natural_image.shape

    def test_quality_ordering(self, natural_image):
        assert psnr(jpeg_compress(natural_image, 95), natural_image) > psnr(
            jpeg_compress(natural_image, 10), natural_image)

    def test_deterministic(self, natural_image):
        assert np.array_equal(jpeg_compress(natural_image, 30), jpeg_compress(natural_image, 30))

    @pytest.mark.parametrize("q", [0, 101, -5])
    def test_quality_range(self, natural_image, q):
        with pytest.raises(InvalidArgument):
            jpeg_compress(natural_image, q)


class TestDegrade:
    def test_is_the_composition(self, natural_image):
        cfg = DegradationConfig(5, 1.0, 30)
        expected = jpeg_compress(sharpen(gaussian_smooth(natural_image, 5, 1.0)), 30)
        assert np.array_equal(degrade(natural_image, cfg), expected)

    def test_alters_the_image(self, natural_image):
        out = degrade(natural_image)
        assert out.shape == natural_image.shape
        assert math.isfinite(psnr(out, natural_image))

    def test_config_json_fields(self):
        d = DegradationConfig().to_dict()
        assert d == {"smooth_kernel": 5, "smooth_sigma": 1.0, "jpeg_quality": 30}
        assert DegradationConfig.from_dict(d) == DegradationConfig()


class TestMetrics:
    def test_mse_identical(self, rng):
        a = rng.random((8, 8, 3))
        assert mse(a, a) == 0.0

    def test_mse_zero_one(self):
        assert mse(np.zeros((4, 4, 3)), np.ones((4, 4, 3))) == 1.0

    def test_mse_matches_loop(self, rng):
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert abs(mse(a, b) - loop_mse(a, b)) < 1e-12

    def test_mse_shape_mismatch(self):
        with pytest.raises(InvalidArgument):
            mse(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))

    def test_psnr_identical_is_sentinel(self, rng):
        a = rng.random((8, 8, 3))
        assert psnr(a, a) == PSNR_INFINITE
        assert quality(a, a).is_infinite

    def test_psnr_zero_db(self):
        assert psnr(np.zeros((4, 4, 3)), np.ones((4, 4, 3)), 1.0) == 0.0

    def test_psnr_twenty_db(self):
        a = np.zeros((10, 10, 1))
        b = np.full((10, 10, 1), 0.1)  # mse = 0.01
        assert psnr(a, b) == pytest.approx(20.0, abs=1e-12)

    def test_psnr_matches_formula(self, rng):
        a, b = rng.random((8, 8, 3)), rng.random((8, 8, 3))
        assert abs(psnr(a, b, 1.0) - 10 * math.log10(1.0 / loop_mse(a, b))) < 1e-12

    @settings(max_examples=50, deadline=None)
    @given(unit_images, unit_images)
    def test_mse_symmetric_nonnegative(self, a, b):
        assert mse(a, b) == mse(b, a)
        assert mse(a, b) >= 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-6, 1.0), st.floats(1e-6, 1.0))
    def test_psnr_decreasing_in_mse(self, m1, m2):
        a = np.zeros((1, 1, 1))
        p1 = psnr(a, np.full((1, 1, 1), math.sqrt(m1)))
        p2 = psnr(a, np.full((1, 1, 1), math.sqrt(m2)))
        if m1 < m2:
            assert p1 > p2


class TestCanny:
    def test_constant_image_has_no_edges(self):
        assert not canny_edges(np.full((20, 20, 3), 0.4)).any()

    def test_vertical_step_localized(self):
        img = np.full((32, 32, 3), 0.2)
        img[:, 16:] = 0.8
        edges = canny_edges(img)[:, :, 0]
        ys, xs = np.nonzero(edges)
        assert len(xs) > 0
        # boundary sits between columns 15 and 16
        assert all(14 <= x <= 17 for x in xs)
        assert all(15 <= x <= 16 for x in xs), sorted(set(xs.tolist()))

    def test_binary_and_shape(self, natural_image):
        e = canny_edges(natural_image)
        assert e.shape == natural_image.shape[:2] + (1,)
        assert set(np.unique(e)) <= {0.0, 1.0}

    def test_bad_thresholds(self, natural_image):
        with pytest.raises(InvalidArgument):
            canny_edges(natural_image, low=0.3, high=0.3)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31), st.floats(-0.2, 0.2))
    def test_brightness_shift_invariance(self, seed, c):
        img = 0.25 + 0.5 * np.random.default_rng(seed).random((24, 24, 3))
        assert np.array_equal(canny_edges(img), canny_edges(img + c))


class TestBicubic:
    def test_constant(self):
        img = np.full((10, 13, 3), 0.37)
        np.testing.assert_allclose(bicubic_resize(img, 23, 7), 0.37, atol=1e-12)

    def test_identity_size(self, natural_image):
        out = bicubic_resize(natural_image, *natural_image.shape[:2])
        assert np.abs(out - natural_image).max() < 1e-6

    def test_ramp_upscale_monotone(self):
        ramp = np.tile(np.linspace(0, 1, 16)[None, :, None], (4, 1, 3))
        out = bicubic_resize(ramp, 8, 32)
        assert np.all(np.diff(out, axis=1) >= -1e-12)

    @pytest.mark.parametrize("h, w", [(0, 5), (5, 0), (-1, 3)])
    def test_bad_size(self, h, w):
        with pytest.raises(InvalidArgument):
            bicubic_resize(np.zeros((4, 4, 3)), h, w)


def test_png_roundtrip_is_lossless_on_8bit_grid(tmp_path, rng):
    img = np.rint(rng.random((9, 11, 3)) * 255) / 255
    write_image(tmp_path / "a.png", img)
    assert np.array_equal(read_image(tmp_path / "a.png"), img)
