"""Detector characterization from flatfield/darkfield series: per-pixel
mean-variance regression for gain and electronic noise, flux-vs-exposure
regression, and PSF width estimation from flatfield autocovariance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgcore import BinaryMask, ImageGrid
from .noisegen import DetectorCalibration

INTERCEPT_MISMATCH_LIMIT = 0.5  # relative; beyond this a pixel is marked invalid


@dataclass(frozen=True)
class FlatfieldSeries:
    """Repeated frames at one intensity level."""

    frames: tuple                # tuple of ImageGrid, same dims
    exposure_ms: float
    tube_label: str = ""
    level_id: str = ""

    def __post_init__(self):
        frames = tuple(self.frames)
        if len(frames) < 2:
            raise ValueError("a series needs at least 2 frames")
        dims = {(f.height, f.width) for f in frames}
        if len(dims) != 1:
            raise ValueError(f"frame dimensions differ within the series: {sorted(dims)}")
        object.__setattr__(self, "frames", frames)


@dataclass(frozen=True)
class CalibrationDataset:
    """Darkfield series plus flatfield series at distinct intensity levels."""

    darkfield_series: FlatfieldSeries
    levels: tuple

    def __post_init__(self):
        levels = tuple(self.levels)
        if len(levels) < 3:
            raise ValueError("need at least 3 nonzero intensity levels for the regression")
        object.__setattr__(self, "levels", levels)


@dataclass(frozen=True)
class FluxFit:
    """Through-origin fit of de-offset flatfield intensity against exposure."""

    k: float                     # intensity units per ms
    residual_rms: float
    n_points: int

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError("fitted flux coefficient must be positive")


@dataclass
class NoiseFitDiagnostics:
    """Per-pixel quality report of the mean-variance regression."""

    valid: BinaryMask
    intercept: np.ndarray                 # fitted sigma_e^2 from the regression line
    max_intercept_mismatch: float         # worst |intercept - darkfield var| / darkfield var
    n_levels: int


class RunningMoments:
    """Streaming per-pixel mean and unbiased variance (Welford), so long
    frame series never need to reside in memory at once."""

    def __init__(self):
        self.n = 0
        self._mean = None
        self._m2 = None

    def update(self, frame: np.ndarray):
        frame = np.asarray(frame, dtype=np.float64)
        if self._mean is None:
            self._mean = np.zeros_like(frame)
            self._m2 = np.zeros_like(frame)
        elif frame.shape != self._mean.shape:
            raise ValueError(f"frame shape {frame.shape} != {self._mean.shape}")
        self.n += 1
        delta = frame - self._mean
        self._mean += delta / self.n
        self._m2 += delta * (frame - self._mean)

    @property
    def mean(self) -> np.ndarray:
        if self.n < 1:
            raise ValueError("no frames accumulated")
        return self._mean.copy()

    @property
    def variance(self) -> np.ndarray:
        if self.n < 2:
            raise ValueError("unbiased variance needs at least 2 frames")
        return self._m2 / (self.n - 1)


def streaming_moments(frames) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel (mean, unbiased variance) from an iterable of arrays or grids."""
    acc = RunningMoments()
    for frame in frames:
        acc.update(frame.data if isinstance(frame, ImageGrid) else frame)
    return acc.mean, acc.variance


def series_moments(series: FlatfieldSeries) -> tuple[ImageGrid, ImageGrid]:
    """Per-pixel sample mean and unbiased sample variance of a series."""
    mean, var = streaming_moments(series.frames)
    pitch = series.frames[0].pitch_mm
    return ImageGrid(mean, pitch), ImageGrid(var, pitch)


def fit_noise_params(dataset: CalibrationDataset
                     ) -> tuple[DetectorCalibration, NoiseFitDiagnostics]:
    """Per-pixel noise model fit.

    The darkfield series pins d_e and sigma_e^2 directly; ordinary least
    squares of the sample variance against the de-offset mean across the
    nonzero levels gives the gain per pixel.  The regression intercept is
    cross-checked against the darkfield variance; pixels with negative gain
    or gross intercept mismatch are marked invalid.
    """
    d_e, s_e2 = streaming_moments(dataset.darkfield_series.frames)

    means, variances = [], []
    for level in dataset.levels:
        m, v = streaming_moments(level.frames)
        if m.shape != d_e.shape:
            raise ValueError("level dimensions do not match the darkfield series")
        means.append(m - d_e)
        variances.append(v)
    x = np.stack(means)       # (n_levels, h, w)
    y = np.stack(variances)

    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    sxx = ((x - x_mean) ** 2).sum(axis=0)
    if np.any(np.ptp(x, axis=0) <= 0):
        raise ValueError("level means are degenerate; regression is rank deficient")
    sxy = ((x - x_mean) * (y - y_mean)).sum(axis=0)
    gain = sxy / sxx
    intercept = y_mean - gain * x_mean

    # Intercept standard error from the regression residuals; the mismatch
    # check should only reject pixels whose deviation is gross AND not
    # explainable by the intercept's own sampling noise.
    n_levels = x.shape[0]
    rss = ((y - (intercept + gain * x)) ** 2).sum(axis=0)
    dof = max(n_levels - 2, 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        se_intercept = np.sqrt((rss / dof) * (1.0 / n_levels + x_mean**2 / sxx))
        mismatch = np.abs(intercept - s_e2) / np.where(s_e2 > 0, s_e2, np.nan)
    gross = (mismatch > INTERCEPT_MISMATCH_LIMIT) & (
        np.abs(intercept - s_e2) > 3.0 * se_intercept)
    valid = (gain > 0) & ~gross
    finite_mismatch = mismatch[np.isfinite(mismatch)]
    max_mismatch = float(finite_mismatch.max()) if finite_mismatch.size else 0.0

    # Non-positive slopes are already flagged invalid; floor them so the
    # per-pixel map still satisfies the calibration type's constraints.
    tiny = np.finfo(np.float64).tiny
    calib = DetectorCalibration(gain=np.maximum(gain, tiny),
                                darkfield=d_e, darkfield_var=s_e2)
    diag = NoiseFitDiagnostics(valid=BinaryMask(valid), intercept=intercept,
                               max_intercept_mismatch=max_mismatch,
                               n_levels=len(dataset.levels))
    return calib, diag


def scalar_calibration(calib: DetectorCalibration, valid: BinaryMask | None = None,
                       psf_sigma: float = 0.0) -> DetectorCalibration:
    """Reduce per-pixel maps to a scalar calibration by the median over
    valid pixels."""
    def reduce_field(value):
        arr = np.asarray(value, dtype=np.float64)
        if arr.ndim == 0:
            return float(arr)
        if valid is not None:
            arr = arr[valid.data]
        return float(np.median(arr))

    return DetectorCalibration(
        gain=reduce_field(calib.gain),
        darkfield=reduce_field(calib.darkfield),
        darkfield_var=reduce_field(calib.darkfield_var),
        psf_sigma=psf_sigma,
    )


def fit_flux_coefficient(levels, d_e: float) -> FluxFit:
    """Regression through the origin of de-offset mean intensity on exposure.

    `levels` is a sequence of (exposure_ms, mean_intensity) pairs with at
    least 2 distinct exposures.
    """
    pts = [(float(t), float(y)) for t, y in levels]
    if len(pts) < 2:
        raise ValueError("need at least 2 points")
    ts = np.array([t for t, _ in pts])
    ys = np.array([y for _, y in pts]) - d_e
    if np.unique(ts).size < 2:
        raise ValueError("need at least 2 distinct exposures")
    k = float((ts * ys).sum() / (ts * ts).sum())
    residual_rms = float(np.sqrt(np.mean((ys - k * ts) ** 2)))
    return FluxFit(k=k, residual_rms=residual_rms, n_points=len(pts))


def _autocovariance(data: np.ndarray, window: int):
    """Empirical covariance between the central pixel and neighbors at all
    offsets within the window radius, averaged over positions."""
    centered = data - data.mean()
    h, w = centered.shape
    offsets, covs = [], []
    for dy in range(-window, window + 1):
        for dx in range(-window, window + 1):
            a = centered[max(0, dy):h + min(0, dy), max(0, dx):w + min(0, dx)]
            b = centered[max(0, -dy):h + min(0, -dy), max(0, -dx):w + min(0, -dx)]
            offsets.append((dx, dy))
            covs.append(float((a * b).mean()))
    return offsets, np.array(covs)


def estimate_psf_sigma(flat_noisy: ImageGrid, window: int = 4) -> float:
    """PSF width from flatfield autocovariance.

    Gaussian-blurred white noise has covariance C(r) proportional to
    exp(-r^2 / (4 sigma^2)); a weighted log-linear fit over the r >= 1
    offsets recovers the kernel sigma.  Returns 0 when the off-center
    covariance is indistinguishable from zero.
    """
    if window < 3:
        raise ValueError("window radius must be >= 3")
    data = flat_noisy.data
    offsets, covs = _autocovariance(data, window)
    r2 = np.array([dx * dx + dy * dy for dx, dy in offsets], dtype=np.float64)
    c0 = covs[r2 == 0][0]
    if c0 <= 0:
        return 0.0

    off = r2 > 0
    # Significance floor: covariance standard error is about C(0)/sqrt(N).
    se = c0 / np.sqrt(data.size)
    if not np.any(covs[off] > 3 * se):
        return 0.0

    use = off & (covs > 3 * se)
    if use.sum() < 2:
        return 0.0
    # log C = const - r^2 / (4 sigma^2), weighted by covariance magnitude so
    # the noisy far tail does not dominate.
    weights = covs[use]
    a = np.stack([np.ones(use.sum()), -r2[use]], axis=1)
    b = np.log(covs[use])
    wa = a * weights[:, None]
    wb = b * weights
    coef, *_ = np.linalg.lstsq(wa, wb, rcond=None)
    slope = coef[1]               # 1 / (4 sigma^2)
    if slope <= 0:
        raise ValueError("non-positive fitted covariance width")
    return float(np.sqrt(1.0 / (4.0 * slope)))
