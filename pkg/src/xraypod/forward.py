"""Noiseless dual-energy forward model: exponential attenuation projection,
spectrum-weighted effective attenuation, log correction, quotient image,
contrast, analytic noise propagation, and the throughput constraint.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .imgcore import BinaryMask, ImageGrid
from .phantom import PhantomSpec

DEFAULT_DENOM_FLOOR = 0.05
DEFAULT_EPSILON_FRACTION = 1.0e-6


@dataclass(frozen=True)
class SpectrumModel:
    """Beam spectrum and detector response on a common energy grid."""

    energies: np.ndarray             # keV, strictly increasing
    phi: np.ndarray                  # relative beam weights >= 0
    detector_sensitivity: np.ndarray # D(E) >= 0
    energy_gain: np.ndarray          # g(E) >= 0

    def __post_init__(self):
        arrays = {}
        for name in ("energies", "phi", "detector_sensitivity", "energy_gain"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            arr.flags.writeable = False
            arrays[name] = arr
            object.__setattr__(self, name, arr)
        n = arrays["energies"].size
        if n < 2 or any(a.size != n for a in arrays.values()):
            raise ValueError("spectrum arrays must share a length >= 2")
        if np.any(np.diff(arrays["energies"]) <= 0):
            raise ValueError("energies must be strictly increasing")
        for name in ("phi", "detector_sensitivity", "energy_gain"):
            if np.any(arrays[name] < 0):
                raise ValueError(f"{name} must be non-negative")
        if not np.any(arrays["phi"] > 0):
            raise ValueError("phi must not be all zero")

    @classmethod
    def from_csv(cls, path) -> "SpectrumModel":
        """Columns: energy_keV, phi, sensitivity, gain."""
        rows = []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append((float(row["energy_keV"]), float(row["phi"]),
                             float(row["sensitivity"]), float(row["gain"])))
        if not rows:
            raise ValueError(f"{path}: empty spectrum file")
        cols = np.array(rows).T
        return cls(cols[0], cols[1], cols[2], cols[3])


@dataclass(frozen=True)
class ChannelSettings:
    """One energy channel's acquisition state."""

    label: str
    flux_coefficient: float            # intensity units per ms
    exposure_ms: float
    effective_mu: dict                 # material name -> mu (1/mm)

    def __post_init__(self):
        if not self.flux_coefficient > 0:
            raise ValueError("flux_coefficient must be > 0")
        if not self.exposure_ms > 0:
            raise ValueError("exposure_ms must be > 0")

    @property
    def i0(self) -> float:
        """Incident intensity: flux coefficient times exposure."""
        return self.flux_coefficient * self.exposure_ms

    def at_exposure(self, exposure_ms: float) -> "ChannelSettings":
        return replace(self, exposure_ms=exposure_ms)

    def rescaled(self, current_ratio: float = 1.0, pixel_ratio: float = 1.0,
                 distance_ratio: float = 1.0) -> "ChannelSettings":
        """Relative flux scaling: i0 is proportional to current and pixel
        area, inversely proportional to squared source distance."""
        factor = current_ratio * pixel_ratio**2 / distance_ratio**2
        return replace(self, flux_coefficient=self.flux_coefficient * factor)

    def mu_for(self, material_name: str) -> float:
        if material_name not in self.effective_mu:
            raise KeyError(f"channel {self.label!r} has no mu for material {material_name!r}")
        return float(self.effective_mu[material_name])


@dataclass(frozen=True)
class ContrastParams:
    """Scalar contrast inputs: thickness ratio alpha, attenuation ratio beta,
    and the quotient values of the two materials."""

    alpha: float
    beta: float
    r_f: float
    r_m: float

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not self.beta > 0:
            raise ValueError("beta must be > 0")


def max_exposure(pixel_size_mm: float, belt_speed_mm_per_ms: float,
                 safety_factor: float = 1.0) -> float:
    """Exposure-time budget for a moving belt: safety_factor * a / v (ms)."""
    if not pixel_size_mm > 0 or not belt_speed_mm_per_ms > 0:
        raise ValueError("pixel size and belt speed must be positive")
    if not 0 < safety_factor <= 1:
        raise ValueError("safety_factor must be in (0, 1]")
    return safety_factor * pixel_size_mm / belt_speed_mm_per_ms


def effective_mu(spectrum: SpectrumModel, curve) -> float:
    """Spectrum- and detector-weighted effective attenuation (1/mm).

    Trapezoidal quadrature of g*D*phi*mu over the spectrum grid, normalized
    by the quadrature of g*D*phi so a monochromatic spectrum returns the
    curve value exactly.  The curve must cover the spectrum's energy range.
    """
    curve = np.asarray(curve, dtype=np.float64)
    if curve.ndim != 2 or curve.shape[1] != 2 or curve.shape[0] < 2:
        raise ValueError("curve must be an (n, 2) array of (energy, mu) with n >= 2")
    e_curve, mu_curve = curve[:, 0], curve[:, 1]
    if np.any(np.diff(e_curve) <= 0):
        raise ValueError("curve energies must be strictly increasing")
    e = spectrum.energies
    if e[0] < e_curve[0] or e[-1] > e_curve[-1]:
        raise ValueError("attenuation curve does not cover the spectrum energy range")
    mu_e = np.interp(e, e_curve, mu_curve)
    weight = spectrum.energy_gain * spectrum.detector_sensitivity * spectrum.phi
    denom = np.trapezoid(weight, e)
    if denom <= 0:
        raise ValueError("spectrum has zero total weight")
    return float(np.trapezoid(weight * mu_e, e) / denom)


def project(phantom: PhantomSpec, channel: ChannelSettings) -> ImageGrid:
    """Noiseless expected intensity: i0 * exp(-mu_m L_m - mu_f L_f)."""
    mu_m = channel.mu_for(phantom.main_material.name)
    mu_f = channel.mu_for(phantom.fo_material.name)
    optical_depth = mu_m * phantom.main_thickness.data + mu_f * phantom.fo_thickness.data
    return phantom.main_thickness.with_data(channel.i0 * np.exp(-optical_depth))


def log_correct(img: ImageGrid, i0: float, epsilon: float | None = None) -> ImageGrid:
    """Log-corrected image M = -log(max(I, epsilon) / i0).

    epsilon defaults to 1e-6 * i0; it floors non-positive noisy intensities.
    """
    if not i0 > 0:
        raise ValueError("i0 must be > 0")
    if epsilon is None:
        epsilon = DEFAULT_EPSILON_FRACTION * i0
    if not epsilon > 0:
        raise ValueError("epsilon must be > 0")
    return img.with_data(-np.log(np.maximum(img.data, epsilon) / i0))


def quotient(m_a: ImageGrid, m_b: ImageGrid,
             denom_floor: float = DEFAULT_DENOM_FLOOR) -> tuple[ImageGrid, BinaryMask]:
    """Quotient image R = M_a / M_b where the denominator is above the floor.

    Pixels below the floor are marked invalid and set to 0 in R.
    """
    if (m_a.height, m_a.width) != (m_b.height, m_b.width):
        raise ValueError("quotient inputs must share dimensions")
    if not denom_floor > 0:
        raise ValueError("denom_floor must be > 0")
    valid = m_b.data >= denom_floor
    r = np.zeros_like(m_a.data)
    np.divide(m_a.data, m_b.data, out=r, where=valid)
    return m_a.with_data(r), BinaryMask(valid)


def delta_r(p: ContrastParams) -> float:
    """Quotient contrast of an inclusion: alpha*beta*(R_f - R_m)/(alpha*beta + 1)."""
    ab = p.alpha * p.beta
    return ab * (p.r_f - p.r_m) / (ab + 1.0)


def quotient_baseline(channel_a: ChannelSettings, channel_b: ChannelSettings,
                      material_name: str) -> float:
    """Quotient value of a homogeneous material: mu_a / mu_b."""
    return channel_a.mu_for(material_name) / channel_b.mu_for(material_name)


def contrast_map(phantom: PhantomSpec, channel_a: ChannelSettings,
                 channel_b: ChannelSettings) -> ImageGrid:
    """Per-pixel noiseless contrast of the inclusion against the main
    material; zero outside the main object."""
    lm = phantom.main_thickness.data
    lf = phantom.fo_thickness.data
    mu_m_b = channel_b.mu_for(phantom.main_material.name)
    mu_f_b = channel_b.mu_for(phantom.fo_material.name)
    r_m = quotient_baseline(channel_a, channel_b, phantom.main_material.name)
    r_f = quotient_baseline(channel_a, channel_b, phantom.fo_material.name)
    beta = mu_f_b / mu_m_b
    inside = lm > 0
    alpha = np.zeros_like(lm)
    np.divide(lf, lm, out=alpha, where=inside)
    ab = alpha * beta
    dr = np.where(inside, ab * (r_f - r_m) / (ab + 1.0), 0.0)
    return phantom.main_thickness.with_data(dr)


def sample_contrast(dr_map: ImageGrid, gt_mask: BinaryMask,
                    aggregator: str = "mean", q: float = 50.0) -> float:
    """Scalar contrast label of a sample: |contrast| aggregated over the
    ground-truth pixels (mean by default, percentile(q) optionally)."""
    if not gt_mask.matches(dr_map):
        raise ValueError("mask dimensions do not match the contrast map")
    if gt_mask.count == 0:
        raise ValueError("ground-truth mask is empty")
    values = np.abs(dr_map.data[gt_mask.data])
    if aggregator == "mean":
        return float(values.mean())
    if aggregator == "percentile":
        return float(np.percentile(values, q))
    raise ValueError(f"unknown aggregator {aggregator!r}")


def propagate_variance(intensity, gain, darkfield_var):
    """Variance of the log-corrected image at expected intensity I:
    var_M = (g*I + sigma_e^2) / I^2.  Accepts scalars or arrays."""
    intensity = np.asarray(intensity, dtype=np.float64)
    if np.any(intensity <= 0):
        raise ValueError("expected intensity must be positive")
    var_m = (np.asarray(gain) * intensity + np.asarray(darkfield_var)) / intensity**2
    return var_m if var_m.ndim else float(var_m)


def quotient_variance(m_a, m_b, var_m_a, var_m_b):
    """First-order variance of R = M_a / M_b:
    var_R = (var_M_a + R^2 * var_M_b) / M_b^2."""
    m_a = np.asarray(m_a, dtype=np.float64)
    m_b = np.asarray(m_b, dtype=np.float64)
    r = m_a / m_b
    var_r = (np.asarray(var_m_a) + r**2 * np.asarray(var_m_b)) / m_b**2
    return var_r if var_r.ndim else float(var_r)
