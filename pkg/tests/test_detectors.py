import numpy as np
import pytest

from specscan import (
    ComputeError,
    DataError,
    RasterCube,
    TargetSpectrum,
    compute_scene_stats,
    detect_map,
    mf,
    rx,
    sam,
    scene_stats_from_moments,
)
from conftest import random_cube
from oracles import covariance_bruteforce, gauss_jordan_inverse, mf_bruteforce, rx_bruteforce


def cube_from_pixels(pixels, width=None):
    """Cube whose pixel spectra (N, B) are laid out row-major."""
    pixels = np.asarray(pixels, dtype=np.float32)
    n, bands = pixels.shape
    width = width or n
    height = n // width
    data = pixels.T.reshape(bands, height, width)
    return RasterCube(data=data)


class TestSceneStats:
    def test_two_pixel_analytic_case(self):
        stats = compute_scene_stats(cube_from_pixels([[0.0, 0.0], [2.0, 2.0]]))
        np.testing.assert_array_equal(stats.mean, [1.0, 1.0])
        np.testing.assert_allclose(stats.covariance, [[1.0, 1.0], [1.0, 1.0]], atol=1e-12)
        assert stats.ridge > 0.0, "singular covariance must engage the ridge"
        assert stats.pixel_count == 2

    def test_constant_scene(self):
        stats = compute_scene_stats(cube_from_pixels(np.full((10, 3), 0.5)))
        np.testing.assert_array_equal(stats.covariance, np.zeros((3, 3)))
        assert stats.ridge > 0.0

    def test_matches_bruteforce_covariance(self):
        rng = np.random.default_rng(31)
        pixels = rng.random((50, 4)).astype(np.float32)
        stats = compute_scene_stats(cube_from_pixels(pixels, width=10))
        mean, cov = covariance_bruteforce(pixels.astype(np.float64))
        np.testing.assert_allclose(stats.mean, mean, rtol=1e-12, atol=1e-15)
        np.testing.assert_allclose(stats.covariance, cov, rtol=1e-12, atol=1e-15)

    def test_too_few_pixels(self):
        cube = RasterCube(data=np.zeros((2, 1, 1), dtype=np.float32))
        with pytest.raises(ComputeError, match=">= 2"):
            compute_scene_stats(cube)

    def test_validity_mask_excludes_pixels(self):
        pixels = np.array([[0.0, 0.0], [2.0, 2.0], [100.0, -100.0]])
        cube = cube_from_pixels(pixels, width=3)
        keep = np.array([[True, True, False]])
        stats = compute_scene_stats(cube, validity=keep)
        np.testing.assert_array_equal(stats.mean, [1.0, 1.0])
        assert stats.pixel_count == 2

    def test_factorization_reconstructs(self):
        rng = np.random.default_rng(5)
        pixels = rng.random((200, 5))
        stats = compute_scene_stats(cube_from_pixels(pixels, width=20))
        regularized = stats.covariance + stats.ridge * np.eye(5)
        np.testing.assert_allclose(
            stats.factor_lower @ stats.factor_lower.T, regularized, rtol=1e-9, atol=1e-15
        )


class TestSam:
    def test_identical_spectra(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = rng.random(6) + 0.01
            assert sam(x, x) == 0.0

    def test_orthogonal(self):
        assert sam(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(np.pi / 2, abs=1e-15)

    def test_forty_five_degrees(self):
        assert sam(np.array([1.0, 1.0]), np.array([1.0, 0.0])) == pytest.approx(np.pi / 4, rel=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            x = rng.random(5) + 0.1
            y = rng.random(5) + 0.1
            a, b = rng.uniform(0.01, 100, size=2)
            assert sam(a * x, b * y) == pytest.approx(sam(x, y), abs=1e-12)
            assert sam(x, 3.7 * x) == pytest.approx(0.0, abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        x, y = rng.random(4), rng.random(4)
        assert sam(x, y) == sam(y, x)

    def test_range(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            angle = sam(rng.normal(size=3), rng.normal(size=3))
            assert 0.0 <= angle <= np.pi

    def test_antiparallel(self):
        x = np.array([0.3, 0.7])
        assert sam(x, -x) == pytest.approx(np.pi, abs=1e-15)

    def test_zero_norm_errors(self):
        with pytest.raises(ComputeError, match="zero"):
            sam(np.zeros(3), np.ones(3))

    def test_length_mismatch(self):
        with pytest.raises(DataError, match="length"):
            sam(np.ones(3), np.ones(4))

    def test_accepts_target_spectrum(self):
        target = TargetSpectrum(label="t", values=np.array([1.0, 0.0]))
        assert sam(np.array([1.0, 0.0]), target) == 0.0


class TestMf:
    def identity_stats(self, mean):
        mean = np.asarray(mean, dtype=np.float64)
        return scene_stats_from_moments(mean, np.eye(mean.size))

    def test_target_scores_one(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            pixels = rng.random((40, 3))
            stats = compute_scene_stats(cube_from_pixels(pixels, width=8))
            target = rng.random(3) + 0.5
            assert mf(target, target, stats) == pytest.approx(1.0, abs=1e-9)

    def test_mean_scores_zero(self):
        rng = np.random.default_rng(14)
        pixels = rng.random((40, 3))
        stats = compute_scene_stats(cube_from_pixels(pixels, width=8))
        target = rng.random(3) + 0.5
        assert mf(stats.mean, target, stats) == pytest.approx(0.0, abs=1e-9)

    def test_identity_covariance_hand_case(self):
        stats = self.identity_stats([0.0, 0.0])
        score = mf(np.array([0.5, 3.0]), np.array([1.0, 0.0]), stats)
        assert score == pytest.approx(0.5, abs=1e-12)

    def test_linearity_in_x(self):
        rng = np.random.default_rng(15)
        pixels = rng.random((60, 4))
        stats = compute_scene_stats(cube_from_pixels(pixels, width=12))
        target = rng.random(4)
        x1, x2 = rng.random(4), rng.random(4)
        for alpha in (0.0, 0.25, 0.5, 0.9, 1.0):
            blend = alpha * x1 + (1 - alpha) * x2
            expected = alpha * mf(x1, target, stats) + (1 - alpha) * mf(x2, target, stats)
            assert mf(blend, target, stats) == pytest.approx(expected, abs=1e-9)

    def test_matches_explicit_inverse_oracle(self):
        rng = np.random.default_rng(16)
        for _ in range(20):
            bands = int(rng.integers(2, 7))
            pixels = rng.random((int(rng.integers(bands + 2, 60)), bands))
            stats = compute_scene_stats(cube_from_pixels(pixels, width=1))
            inverse = gauss_jordan_inverse(stats.covariance + stats.ridge * np.eye(bands))
            target = rng.random(bands)
            x = rng.random(bands)
            want = mf_bruteforce(x, target, stats.mean, inverse)
            assert mf(x, target, stats) == pytest.approx(want, rel=1e-9, abs=1e-12)

    def test_target_equal_mean_errors(self):
        stats = self.identity_stats([0.3, 0.3])
        with pytest.raises(ComputeError, match="mean"):
            mf(np.array([1.0, 1.0]), np.array([0.3, 0.3]), stats)

    def test_dimension_mismatch(self):
        stats = self.identity_stats([0.0, 0.0])
        with pytest.raises(DataError):
            mf(np.ones(3), np.ones(2), stats)


class TestRx:
    def test_mean_scores_zero(self):
        rng = np.random.default_rng(18)
        pixels = rng.random((30, 3))
        stats = compute_scene_stats(cube_from_pixels(pixels, width=6))
        assert rx(stats.mean, stats) == 0.0

    def test_diagonal_covariance(self):
        stats = scene_stats_from_moments(np.zeros(2), np.diag([4.0, 1.0]))
        assert rx(np.array([2.0, 1.0]), stats) == pytest.approx(2.0, abs=1e-12)

    def test_identity_reduces_to_squared_norm(self):
        rng = np.random.default_rng(19)
        stats = scene_stats_from_moments(np.zeros(4), np.eye(4))
        for _ in range(20):
            x = rng.normal(size=4)
            assert rx(x, stats) == pytest.approx(float(x @ x), rel=1e-12, abs=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(20)
        pixels = rng.random((50, 3))
        stats = compute_scene_stats(cube_from_pixels(pixels, width=10))
        for _ in range(50):
            assert rx(rng.normal(size=3), stats) >= 0.0

    def test_matches_explicit_inverse_oracle(self):
        rng = np.random.default_rng(22)
        for _ in range(20):
            bands = int(rng.integers(2, 7))
            pixels = rng.random((int(rng.integers(bands + 2, 80)), bands))
            stats = compute_scene_stats(cube_from_pixels(pixels, width=1))
            inverse = gauss_jordan_inverse(stats.covariance + stats.ridge * np.eye(bands))
            x = rng.random(bands)
            want = rx_bruteforce(x, stats.mean, inverse)
            assert rx(x, stats) == pytest.approx(want, rel=1e-9, abs=1e-12)


class TestDetectMap:
    def test_sam_map_of_target_is_zero(self):
        target = np.array([0.25, 0.5, 0.125], dtype=np.float32)
        pixels = np.tile(target, (12, 1))
        cube = cube_from_pixels(pixels, width=4)
        scores = detect_map(cube, "sam", target=target.astype(np.float64))
        assert (scores.data == 0.0).all()
        assert scores.score_kind == "SAM"

    def test_rx_map_of_constant_scene_is_zero(self):
        cube = cube_from_pixels(np.full((16, 3), 0.7), width=4)
        scores = detect_map(cube, "rx")
        assert (scores.data == 0.0).all()

    def test_mf_planted_targets_beat_background(self):
        rng = np.random.default_rng(33)
        bands, n = 8, 3600
        background = rng.random(bands) * 0.3 + 0.2
        pixels = background + 0.02 * rng.standard_normal((n, bands))
        target = background + np.linspace(0.4, -0.3, bands)
        planted = rng.choice(n, size=15, replace=False)
        pixels[planted] = target + 0.005 * rng.standard_normal((15, bands))
        cube = cube_from_pixels(pixels, width=60)
        scores = detect_map(cube, "mf", target=target, precision="double").data.ravel()
        background_scores = np.delete(scores, planted)
        assert scores[planted].min() > np.quantile(background_scores, 0.99)

    def test_rx_single_anomaly_is_strict_max(self):
        pixels = np.full((100, 4), 0.4)
        pixels[57] = [0.9, 0.1, 0.8, 0.2]
        cube = cube_from_pixels(pixels, width=10)
        scores = detect_map(cube, "rx").data.ravel()
        assert np.argmax(scores) == 57
        assert scores[57] > np.delete(scores, 57).max()

    def test_sam_zero_norm_pixel_flagged_pi(self):
        pixels = np.array([[0.0, 0.0], [0.5, 0.5], [0.2, 0.8]])
        cube = cube_from_pixels(pixels, width=3)
        scores = detect_map(cube, "sam", target=np.array([1.0, 1.0]))
        assert scores.data.ravel()[0] == pytest.approx(np.pi)
        assert scores.flags.ravel().tolist() == [True, False, False]

    def test_sam_requires_target(self):
        cube = cube_from_pixels(np.ones((4, 2)), width=2)
        with pytest.raises(DataError, match="target"):
            detect_map(cube, "sam")

    def test_stats_computed_on_demand(self):
        rng = np.random.default_rng(40)
        cube = cube_from_pixels(rng.random((36, 3)), width=6)
        explicit = detect_map(cube, "rx", stats=compute_scene_stats(cube))
        implicit = detect_map(cube, "rx")
        np.testing.assert_array_equal(explicit.data, implicit.data)

    def test_unknown_detector(self):
        cube = cube_from_pixels(np.ones((4, 2)), width=2)
        with pytest.raises(DataError, match="detector"):
            detect_map(cube, "ace")

    def test_single_vs_double_precision_close(self):
        rng = np.random.default_rng(44)
        cube = random_cube(rng, bands=4, height=24, width=24)
        target = TargetSpectrum(label="t", values=rng.random(4) + 0.2)
        for detector in ("sam", "mf", "rx"):
            kwargs = {"target": target} if detector in ("sam", "mf") else {}
            single = detect_map(cube, detector, precision="single", **kwargs)
            double = detect_map(cube, detector, precision="double", **kwargs)
            diff = np.abs(single.data - double.data)
            assert diff.mean() < 1e-5, detector
            assert diff.max() < 1e-3, detector

    def test_map_matches_scalar_kernels(self):
        rng = np.random.default_rng(45)
        pixels = rng.random((24, 3))
        cube = cube_from_pixels(pixels, width=6)
        stats = compute_scene_stats(cube)
        target = rng.random(3) + 0.2
        mf_map = detect_map(cube, "mf", target=target, stats=stats, precision="double").data.ravel()
        rx_map = detect_map(cube, "rx", stats=stats, precision="double").data.ravel()
        sam_map = detect_map(cube, "sam", target=target, precision="double").data.ravel()
        spectra = cube.pixels().astype(np.float64)
        for i in (0, 7, 23):
            assert mf_map[i] == pytest.approx(mf(spectra[i], target, stats), rel=1e-12, abs=1e-12)
            assert rx_map[i] == pytest.approx(rx(spectra[i], stats), rel=1e-12, abs=1e-12)
            assert sam_map[i] == pytest.approx(sam(spectra[i], target), rel=1e-12, abs=1e-12)
