"""Noise synthesis tests: mixed Poisson-Gaussian moments, blur, exposure
scaling, and generation from reference images."""

import numpy as np
import pytest

from xraypod.imgcore import ImageGrid, SeedSpec
from xraypod.noisegen import (DetectorCalibration, GenerationRequest, blur,
                              check_reference_quality, generate_from_reference,
                              provenance_sidecar, sample_noisy, scale_exposure,
                              variance_of_log)

CALIB = DetectorCalibration(gain=1.5, darkfield=100.0, darkfield_var=25.0)


class TestCalibration:
    def test_scalar_fields(self):
        assert CALIB.darkfield_sigma == pytest.approx(5.0)

    def test_per_pixel_fields(self):
        g = np.full((4, 4), 1.5)
        c = DetectorCalibration(gain=g, darkfield=100.0, darkfield_var=25.0)
        assert np.asarray(c.gain).shape == (4, 4)

    def test_validation(self):
        with pytest.raises(ValueError):
            DetectorCalibration(gain=0.0, darkfield=0.0, darkfield_var=0.0)
        with pytest.raises(ValueError):
            DetectorCalibration(gain=1.0, darkfield=0.0, darkfield_var=-1.0)
        with pytest.raises(ValueError):
            DetectorCalibration(gain=1.0, darkfield=0.0, darkfield_var=0.0,
                                psf_sigma=-0.5)

    def test_content_hash_stable(self):
        c1 = DetectorCalibration(gain=1.5, darkfield=100.0, darkfield_var=25.0)
        assert c1.content_hash() == CALIB.content_hash()
        c2 = DetectorCalibration(gain=1.6, darkfield=100.0, darkfield_var=25.0)
        assert c2.content_hash() != CALIB.content_hash()


class TestSampleNoisy:
    def test_deterministic(self):
        grid = ImageGrid(np.full((16, 16), 1000.0))
        a = sample_noisy(grid, CALIB, SeedSpec(5))
        b = sample_noisy(grid, CALIB, SeedSpec(5))
        assert a == b

    def test_near_deterministic_limit(self):
        # Vanishing gain and electronic noise: y ~= I + d_e.
        calib = DetectorCalibration(gain=1e-12, darkfield=100.0, darkfield_var=0.0)
        grid = ImageGrid(np.full((8, 8), 50.0))
        y = sample_noisy(grid, calib, SeedSpec(1), poisson_exact_threshold=1.0)
        assert np.allclose(y.data, 150.0, rtol=1e-5)

    def test_negative_intensity_rejected(self):
        with pytest.raises(ValueError):
            sample_noisy(ImageGrid(np.array([[-1.0]])), CALIB, SeedSpec(0))

    def test_moments(self):
        # mean I + d_e, variance g*I + sigma_e^2 at 3-standard-error bounds.
        n = 1_000_000
        grid = ImageGrid(np.full((1000, 1000), 1000.0))
        y = sample_noisy(grid, CALIB, SeedSpec(77)).data
        mean, var = y.mean(), y.var(ddof=1)
        assert abs(mean - 1100.0) < 3 * np.sqrt(1525.0 / n)
        assert abs(var - 1525.0) < 3 * 1525.0 * np.sqrt(2.0 / n)

    def test_output_not_clamped_below_darkfield(self):
        calib = DetectorCalibration(gain=1.0, darkfield=0.0, darkfield_var=100.0)
        y = sample_noisy(ImageGrid(np.zeros((64, 64))), calib, SeedSpec(2))
        assert y.data.min() < 0.0


class TestBlur:
    def test_identity_at_zero_sigma(self):
        img = ImageGrid(np.arange(16.0).reshape(4, 4))
        assert blur(img, 0.0) is img

    def test_mean_preserved(self):
        rng = np.random.default_rng(9)
        img = ImageGrid(rng.uniform(0, 100, (64, 64)))
        out = blur(img, 1.3)
        assert out.data.mean() == pytest.approx(img.data.mean(), rel=1e-10)

    def test_impulse_matches_analytic_kernel(self):
        sigma = 0.8
        radius = int(np.ceil(4 * sigma))
        size = 2 * radius + 9
        data = np.zeros((size, size))
        center = size // 2
        data[center, center] = 1.0
        out = blur(ImageGrid(data), sigma).data

        x = np.arange(-radius, radius + 1, dtype=float)
        k = np.exp(-(x**2) / (2 * sigma**2))
        k /= k.sum()
        expected = np.zeros_like(data)
        expected[center - radius:center + radius + 1,
                 center - radius:center + radius + 1] = np.outer(k, k)
        assert np.allclose(out, expected, atol=1e-6)

    def test_autocovariance_matches_kernel_correlation(self):
        # Blurred white noise: covariance at offset r equals the noise
        # variance times the kernel autocorrelation at r.
        sigma = 0.8
        rng = np.random.default_rng(13)
        noise = rng.standard_normal((768, 768))
        out = blur(ImageGrid(noise), sigma).data
        centered = out - out.mean()

        radius = int(np.ceil(4 * sigma))
        x = np.arange(-radius, radius + 1, dtype=float)
        k = np.exp(-(x**2) / (2 * sigma**2))
        k /= k.sum()
        corr1d = np.correlate(k, k, mode="full")   # kernel autocorrelation

        for dx, dy in ((1, 0), (0, 1), (1, 1), (2, 0)):
            a = centered[: -dy or None, : -dx or None]
            b = centered[dy:, dx:]
            emp = (a * b).mean()
            model = corr1d[len(k) - 1 + dx] * corr1d[len(k) - 1 + dy]
            assert emp == pytest.approx(model, rel=0.10)

    def test_negative_sigma_rejected(self):
        with pytest.raises(ValueError):
            blur(ImageGrid(np.zeros((2, 2))), -0.1)


class TestScaleExposure:
    def test_identity(self):
        img = ImageGrid(np.full((2, 2), 7.0))
        assert scale_exposure(img, 100.0, 100.0) == img

    def test_long_to_short_exposure_factor(self):
        img = ImageGrid(np.full((2, 2), 580.0))
        out = scale_exposure(img, 1000.0, 20.0)
        assert np.allclose(out.data, 580.0 * 0.02)

    def test_composition(self):
        img = ImageGrid(np.full((2, 2), 580.0))
        two_step = scale_exposure(scale_exposure(img, 1000.0, 100.0), 100.0, 20.0)
        one_step = scale_exposure(img, 1000.0, 20.0)
        assert np.allclose(two_step.data, one_step.data, rtol=1e-14)

    def test_positive_times(self):
        with pytest.raises(ValueError):
            scale_exposure(ImageGrid(np.zeros((1, 1))), 0.0, 10.0)


class TestGenerateFromReference:
    def reference(self, value=580.0 + 100.0, shape=(64, 64)):
        return ImageGrid(np.full(shape, value))

    def request(self, **kw):
        base = dict(reference=self.reference(), ref_exposure_ms=1000.0,
                    target_exposure_ms=100.0, flux_coefficient=0.58,
                    calib=CALIB, seed=SeedSpec(31), apply_blur=False)
        base.update(kw)
        return GenerationRequest(**base)

    def test_quality_check(self):
        ok, _ = check_reference_quality(self.reference(), CALIB)
        assert not ok  # 580 counts is far below 100x the noise level
        bright = ImageGrid(np.full((8, 8), 1.0e6))
        ok, _ = check_reference_quality(bright, CALIB)
        assert ok

    def test_strict_rejects_low_quality(self):
        with pytest.raises(ValueError, match="high-quality"):
            generate_from_reference(self.request())

    def test_non_strict_warns(self):
        with pytest.warns(UserWarning):
            generate_from_reference(self.request(), strict=False)

    def test_mean_tracks_flux(self):
        # Flatfield at 1000 ms with k = 0.58/ms: a 100 ms image should
        # average ~58 + d_e.
        ref = ImageGrid(np.full((256, 256), 580.0 + 100.0))
        req = self.request(reference=ref)
        y = generate_from_reference(req, quality_factor=1.0)
        assert y.data.mean() == pytest.approx(58.0 + 100.0, abs=0.5)

    def test_degenerate_identity(self):
        calib = DetectorCalibration(gain=1e-12, darkfield=0.0, darkfield_var=0.0)
        ref = ImageGrid(np.full((8, 8), 1.0e4))
        req = GenerationRequest(reference=ref, ref_exposure_ms=100.0,
                                target_exposure_ms=100.0, flux_coefficient=1.0,
                                calib=calib, seed=SeedSpec(0), apply_blur=False)
        y = generate_from_reference(req, quality_factor=1.0)
        assert np.allclose(y.data, ref.data, rtol=1e-5)

    def test_regenerated_series_recovers_gain(self):
        # Re-derive the mean/variance line from generated flatfields.
        ref = ImageGrid(np.full((96, 96), 1.0e6 + 100.0))
        frames = []
        for i in range(400):
            req = GenerationRequest(reference=ref, ref_exposure_ms=1000.0,
                                    target_exposure_ms=20.0, flux_coefficient=1.0,
                                    calib=CALIB, seed=SeedSpec(900, i),
                                    apply_blur=False)
            frames.append(generate_from_reference(req).data)
        stack = np.stack(frames)
        mean = stack.mean(axis=0) - 100.0
        var = stack.var(axis=0, ddof=1)
        slope = ((var - 25.0) / mean).mean()
        assert slope == pytest.approx(1.5, rel=0.02)

    def test_blur_applied_after_noise(self):
        calib = DetectorCalibration(gain=1.5, darkfield=100.0,
                                    darkfield_var=25.0, psf_sigma=0.8)
        ref = ImageGrid(np.full((64, 64), 1.0e6))
        req = GenerationRequest(reference=ref, ref_exposure_ms=1000.0,
                                target_exposure_ms=1000.0, flux_coefficient=1.0,
                                calib=calib, seed=SeedSpec(8))
        y_blur = generate_from_reference(req, quality_factor=1.0)
        from dataclasses import replace
        y_sharp = generate_from_reference(replace(req, apply_blur=False),
                                          quality_factor=1.0)
        # Blur suppresses per-pixel variance but keeps the mean.
        assert y_blur.data.mean() == pytest.approx(y_sharp.data.mean(), rel=1e-3)
        assert y_blur.data.var() < 0.6 * y_sharp.data.var()

    def test_variance_of_log_wrapper(self):
        assert variance_of_log(1.0e4, CALIB) == pytest.approx(1.5025e-4)

    def test_provenance_fields(self):
        doc = provenance_sidecar(self.request())
        assert doc["exposure_ms"] == 100.0
        assert doc["flux_coefficient"] == 0.58
        assert doc["calibration_hash"] == CALIB.content_hash()


def test_exposure_linearity_of_generated_means():
    ref = ImageGrid(np.full((128, 128), 1.0e6 + 100.0))
    means = {}
    for t in (20.0, 50.0, 100.0, 1000.0):
        req = GenerationRequest(reference=ref, ref_exposure_ms=1000.0,
                                target_exposure_ms=t, flux_coefficient=1.0,
                                calib=CALIB, seed=SeedSpec(4, int(t)),
                                apply_blur=False)
        means[t] = generate_from_reference(req).data.mean() - 100.0
    for t in (20.0, 50.0, 100.0):
        assert means[t] / means[1000.0] == pytest.approx(t / 1000.0, rel=0.01)
