"""Parametric synthetic specimens: a semi-ellipsoid main object with an
embedded cylindrical rod inclusion, expressed as per-pixel thickness maps.

Parallel-beam convention: the stored thickness maps ARE the line integrals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .imgcore import BinaryMask, ImageGrid, SeedSpec, derive_stream


@dataclass(frozen=True)
class MaterialRef:
    """A homogeneous material, described either by per-channel effective
    attenuation or by an energy-resolved attenuation curve (or both)."""

    name: str
    effective_mu: dict | None = None          # channel label -> mu (1/mm)
    attenuation_curve: tuple | None = None    # ((energy_keV, mu_1_per_mm), ...)

    def __post_init__(self):
        if self.effective_mu is None and self.attenuation_curve is None:
            raise ValueError(f"material {self.name!r} needs effective_mu or attenuation_curve")
        if self.effective_mu is not None:
            for label, mu in self.effective_mu.items():
                if not mu > 0:
                    raise ValueError(f"material {self.name!r}: mu[{label!r}] must be > 0")
        if self.attenuation_curve is not None:
            curve = tuple((float(e), float(m)) for e, m in self.attenuation_curve)
            energies = [e for e, _ in curve]
            if len(curve) < 2:
                raise ValueError("attenuation_curve needs at least 2 points")
            if any(e2 <= e1 for e1, e2 in zip(energies, energies[1:])):
                raise ValueError("attenuation_curve energies must be strictly increasing")
            if any(m <= 0 for _, m in curve):
                raise ValueError("attenuation_curve mu values must be > 0")
            object.__setattr__(self, "attenuation_curve", curve)

    def mu_for(self, channel_label: str) -> float:
        if self.effective_mu is None or channel_label not in self.effective_mu:
            raise KeyError(f"material {self.name!r} has no effective mu for channel {channel_label!r}")
        return float(self.effective_mu[channel_label])


# Synthetic default materials (not measured values): chosen so the quotient
# of the inclusion differs from the main material, giving nonzero contrast.
DEFAULT_MAIN_MATERIAL = MaterialRef("meat", effective_mu={"high": 0.020, "low": 0.025})
DEFAULT_FO_MATERIAL = MaterialRef("bone", effective_mu={"high": 0.060, "low": 0.045})


@dataclass(frozen=True)
class PhantomSpec:
    """Ground-truth specimen: thickness maps (mm) for main object and
    foreign inclusion, plus their materials."""

    main_thickness: ImageGrid
    fo_thickness: ImageGrid
    main_material: MaterialRef
    fo_material: MaterialRef

    def __post_init__(self):
        lm, lf = self.main_thickness, self.fo_thickness
        if (lm.height, lm.width) != (lf.height, lf.width):
            raise ValueError("thickness maps must share dimensions")
        if lm.pitch_mm != lf.pitch_mm:
            raise ValueError("thickness maps must share pixel pitch")
        if np.any(lm.data < 0) or np.any(lf.data < 0):
            raise ValueError("thickness maps must be non-negative")
        if np.any((lf.data > 0) & (lm.data <= 0)):
            raise ValueError("foreign object must be embedded in the main object")

    @property
    def gt_mask(self) -> BinaryMask:
        """Ground-truth foreign-object mask: pixels with positive inclusion thickness."""
        return BinaryMask(self.fo_thickness.data > 0)

    @property
    def has_fo(self) -> bool:
        return bool(np.any(self.fo_thickness.data > 0))


@dataclass(frozen=True)
class PhantomRecipe:
    """Shape parameters of the specimen plus symmetric jitter ranges.

    Lengths in mm, centers in pixel coordinates (x, y), orientation in rad.
    Jitter draws are uniform in +/- the given half-range.
    """

    main_axes_mm: tuple = (30.0, 20.0, 10.0)       # a, b, c of the semi-ellipsoid
    main_center_px: tuple = (64.0, 48.0)
    rod_length_mm: float = 10.0
    rod_diameter_mm: float = 2.0
    rod_orientation_rad: float = 0.0
    rod_center_px: tuple = (64.0, 48.0)
    center_jitter_px: float = 0.0
    diameter_jitter_mm: float = 0.0
    length_jitter_mm: float = 0.0
    orientation_jitter_rad: float = 0.0

    def __post_init__(self):
        if any(not ax > 0 for ax in self.main_axes_mm):
            raise ValueError("main_axes_mm must all be positive")
        if not self.rod_length_mm > 0 or not self.rod_diameter_mm > 0:
            raise ValueError("rod dimensions must be positive")
        if min(self.center_jitter_px, self.diameter_jitter_mm,
               self.length_jitter_mm, self.orientation_jitter_rad) < 0:
            raise ValueError("jitter ranges must be non-negative")


def _pixel_coords_mm(width, height, center_px, pitch_mm):
    xs = (np.arange(width) - center_px[0]) * pitch_mm
    ys = (np.arange(height) - center_px[1]) * pitch_mm
    return np.meshgrid(xs, ys)


def _ellipsoid_thickness(width, height, pitch_mm, axes_mm, center_px):
    a, b, c = axes_mm
    x, y = _pixel_coords_mm(width, height, center_px, pitch_mm)
    arg = 1.0 - (x / a) ** 2 - (y / b) ** 2
    return 2.0 * c * np.sqrt(np.maximum(arg, 0.0))


def _rod_thickness(width, height, pitch_mm, length_mm, diameter_mm, orientation_rad, center_px):
    # Chord length through a cylinder lying in the image plane.
    x, y = _pixel_coords_mm(width, height, center_px, pitch_mm)
    ca, sa = np.cos(orientation_rad), np.sin(orientation_rad)
    axial = x * ca + y * sa
    perp = -x * sa + y * ca
    r = diameter_mm / 2.0
    chord = 2.0 * np.sqrt(np.maximum(r**2 - perp**2, 0.0))
    chord[np.abs(axial) > length_mm / 2.0] = 0.0
    return chord


def build_phantom(recipe: PhantomRecipe, width: int, height: int, pitch_mm: float,
                  seed: SeedSpec,
                  main_material: MaterialRef = DEFAULT_MAIN_MATERIAL,
                  fo_material: MaterialRef = DEFAULT_FO_MATERIAL,
                  include_fo: bool = True) -> PhantomSpec:
    """Rasterize the recipe onto a grid, applying deterministic jitter.

    Raises ValueError if the (jittered) inclusion ends up entirely outside
    the main-object support.
    """
    rng = derive_stream(seed.sub("phantom-jitter"))
    # Fixed draw order so outputs depend only on the seed, not on which
    # jitters are enabled.
    draws = rng.uniform(-1.0, 1.0, size=5)
    cx = recipe.rod_center_px[0] + draws[0] * recipe.center_jitter_px
    cy = recipe.rod_center_px[1] + draws[1] * recipe.center_jitter_px
    diameter = recipe.rod_diameter_mm + draws[2] * recipe.diameter_jitter_mm
    length = recipe.rod_length_mm + draws[3] * recipe.length_jitter_mm
    orientation = recipe.rod_orientation_rad + draws[4] * recipe.orientation_jitter_rad
    if diameter <= 0 or length <= 0:
        raise ValueError("jitter produced a non-positive rod dimension")

    lm = _ellipsoid_thickness(width, height, pitch_mm, recipe.main_axes_mm, recipe.main_center_px)
    if include_fo:
        lf = _rod_thickness(width, height, pitch_mm, length, diameter, orientation, (cx, cy))
        lf[lm <= 0] = 0.0
        if not np.any(lf > 0):
            raise ValueError("foreign object lies entirely outside the main-object support")
    else:
        lf = np.zeros_like(lm)

    return PhantomSpec(
        main_thickness=ImageGrid(lm, pitch_mm),
        fo_thickness=ImageGrid(lf, pitch_mm),
        main_material=main_material,
        fo_material=fo_material,
    )


def thickness_line_integral(spec: PhantomSpec, pixel: tuple) -> tuple:
    """(L_m, L_f) in mm at an integer pixel (x, y)."""
    x, y = pixel
    if not (0 <= x < spec.main_thickness.width and 0 <= y < spec.main_thickness.height):
        raise IndexError(f"pixel {pixel} out of bounds")
    return float(spec.main_thickness.data[y, x]), float(spec.fo_thickness.data[y, x])


def semi_ellipsoid_volume(axes_mm) -> float:
    """Analytic volume of the rasterized main object: integral of
    2c*sqrt(1 - x^2/a^2 - y^2/b^2) over the ellipse."""
    a, b, c = axes_mm
    return (2.0 / 3.0) * np.pi * a * b * (2.0 * c)
