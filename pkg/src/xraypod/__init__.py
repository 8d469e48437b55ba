"""Calibrated X-ray image generation and probability-of-detection analysis."""

from .imgcore import BinaryMask, ImageGrid, SeedSpec, derive_stream, read_image, write_image
from .noisegen import DetectorCalibration
from .phantom import MaterialRef, PhantomRecipe, PhantomSpec, build_phantom
from .pod import PodFit, PodInterval, PodSample, fit_pod

__all__ = [
    "BinaryMask",
    "DetectorCalibration",
    "ImageGrid",
    "MaterialRef",
    "PhantomRecipe",
    "PhantomSpec",
    "PodFit",
    "PodInterval",
    "PodSample",
    "SeedSpec",
    "build_phantom",
    "derive_stream",
    "fit_pod",
    "read_image",
    "write_image",
]

__version__ = "0.1.0"
