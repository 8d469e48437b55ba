"""Foreign-object detection on dual-energy pairs: flatfield correction,
a quotient-threshold baseline detector, the segmentation-to-detection
conversion rule, and a file-based protocol for external detectors.
"""

from __future__ import annotations

import json
import shlex
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import forward
from .imgcore import BinaryMask, ImageGrid, read_mask, read_sidecar
from .noisegen import DetectorCalibration, variance_of_log

RECALL_DETECTION_THRESHOLD = 0.10   # detected iff recall strictly exceeds this

_EIGHT_CONNECTED = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class DualImage:
    """A dual-energy acquisition, either raw intensities or log-corrected."""

    channel_a: ImageGrid
    channel_b: ImageGrid
    stage: str                       # "raw" | "corrected"
    exposure_ms: float = 0.0
    label_a: str = "a"
    label_b: str = "b"
    i0_a: float = 0.0                # incident intensities, set on correction
    i0_b: float = 0.0

    def __post_init__(self):
        if self.stage not in ("raw", "corrected"):
            raise ValueError(f"unknown stage {self.stage!r}")
        a, b = self.channel_a, self.channel_b
        if (a.height, a.width) != (b.height, b.width):
            raise ValueError("channel dimensions differ")


@dataclass(frozen=True)
class DetectorConfig:
    """Baseline quotient-threshold detector parameters."""

    z_threshold: float = 3.0
    min_area: int = 4
    denom_floor: float = forward.DEFAULT_DENOM_FLOOR
    object_mask_threshold: float = 0.1    # on the corrected low-attenuation channel

    def __post_init__(self):
        if not self.z_threshold > 0:
            raise ValueError("z_threshold must be > 0")
        if self.min_area < 1:
            raise ValueError("min_area must be >= 1")


@dataclass(frozen=True)
class DetectionOutcome:
    """Per-sample detection result feeding the POD fit."""

    sample_id: str
    contrast: float
    fo_present: bool
    detected: bool
    recall: float
    false_positive: bool


def correct_pair(raw: DualImage, i0_a: float, i0_b: float,
                 calib: DetectorCalibration, epsilon: float | None = None) -> DualImage:
    """Log-correct both channels: M = -log(max(y - d_e, eps) / i0)."""
    if raw.stage != "raw":
        raise ValueError("correct_pair expects a raw pair")
    if not i0_a > 0 or not i0_b > 0:
        raise ValueError("incident intensities must be positive")
    d_e = np.asarray(calib.darkfield)

    def correct(img: ImageGrid, i0: float) -> ImageGrid:
        de_offset = img.with_data(np.maximum(img.data - d_e, 0.0))
        return forward.log_correct(de_offset, i0, epsilon)

    return DualImage(
        channel_a=correct(raw.channel_a, i0_a),
        channel_b=correct(raw.channel_b, i0_b),
        stage="corrected",
        exposure_ms=raw.exposure_ms,
        label_a=raw.label_a,
        label_b=raw.label_b,
        i0_a=i0_a,
        i0_b=i0_b,
    )


def baseline_segment(pair: DualImage, cfg: DetectorConfig,
                     calib: DetectorCalibration) -> BinaryMask:
    """Quotient-threshold segmentation.

    The main-material quotient baseline is the median over the object; a
    pixel is a candidate when its quotient deviates from the baseline by
    more than z times the propagated noise level; candidates form the
    prediction only in 8-connected clusters of at least min_area pixels.
    """
    if pair.stage != "corrected":
        raise ValueError("baseline_segment expects a corrected pair")
    m_a, m_b = pair.channel_a, pair.channel_b
    object_mask = m_b.data >= cfg.object_mask_threshold
    if not np.any(object_mask):
        raise ValueError("object mask is empty")

    r_img, valid = forward.quotient(m_a, m_b, cfg.denom_floor)
    usable = object_mask & valid.data
    if not np.any(usable):
        raise ValueError("no usable object pixels above the denominator floor")
    r_m = float(np.median(r_img.data[usable]))

    # Noise on R via the expected intensities implied by the corrected images.
    i_a = pair.i0_a * np.exp(-m_a.data)
    i_b = pair.i0_b * np.exp(-m_b.data)
    var_a = variance_of_log(i_a, calib)
    var_b = variance_of_log(i_b, calib)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma_r = np.sqrt(forward.quotient_variance(m_a.data, np.where(usable, m_b.data, 1.0),
                                                    var_a, var_b))
    candidates = usable & (np.abs(r_img.data - r_m) > cfg.z_threshold * sigma_r)

    labels, n = ndimage.label(candidates, structure=_EIGHT_CONNECTED)
    if n == 0:
        return BinaryMask(np.zeros_like(candidates))
    areas = ndimage.sum_labels(candidates, labels, index=np.arange(1, n + 1))
    keep = np.flatnonzero(areas >= cfg.min_area) + 1
    return BinaryMask(np.isin(labels, keep))


def to_outcome(predicted: BinaryMask, ground_truth: BinaryMask, contrast: float,
               sample_id: str = "") -> DetectionOutcome:
    """Convert a segmentation into a detection outcome.

    With a foreign object present: detected iff recall strictly exceeds 10%.
    Without one: any predicted pixel is a false positive.
    """
    if (predicted.height, predicted.width) != (ground_truth.height, ground_truth.width):
        raise ValueError("mask dimensions differ")
    gt_count = ground_truth.count
    if gt_count > 0:
        overlap = int((predicted.data & ground_truth.data).sum())
        recall = overlap / gt_count
        return DetectionOutcome(sample_id=sample_id, contrast=contrast, fo_present=True,
                                detected=recall > RECALL_DETECTION_THRESHOLD,
                                recall=recall, false_positive=False)
    return DetectionOutcome(sample_id=sample_id, contrast=contrast, fo_present=False,
                            detected=False, recall=0.0,
                            false_positive=predicted.count > 0)


def load_detect_manifest(manifest_path) -> dict:
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    if "samples" not in manifest or not isinstance(manifest["samples"], list):
        raise ValueError(f"{manifest_path}: manifest lacks a 'samples' list")
    for sample in manifest["samples"]:
        for key in ("id", "channel_a", "channel_b", "out_mask"):
            if key not in sample:
                raise ValueError(f"{manifest_path}: sample entry missing {key!r}")
    return manifest


def run_external_detector(manifest_path, command_template: str) -> list[BinaryMask]:
    """Invoke an external segmentation program once for a whole dataset.

    The command receives the manifest path ("{manifest}" placeholder, or
    appended as the final argument) and must write one mask per sample at
    the declared out_mask path.  Masks are validated against the input
    dimensions; failures name the offending sample.
    """
    manifest_path = Path(manifest_path)
    manifest = load_detect_manifest(manifest_path)
    argv = shlex.split(command_template)
    if any("{manifest}" in arg for arg in argv):
        argv = [arg.replace("{manifest}", str(manifest_path)) for arg in argv]
    else:
        argv.append(str(manifest_path))
    proc = subprocess.run(argv, capture_output=True, text=True)
    if proc.returncode != 0:
        raise RuntimeError(
            f"external detector exited with status {proc.returncode}: {proc.stderr.strip()}")

    masks = []
    base = manifest_path.parent
    for sample in manifest["samples"]:
        out_path = Path(sample["out_mask"])
        if not out_path.is_absolute():
            out_path = base / out_path
        try:
            mask = read_mask(out_path)
        except (FileNotFoundError, ValueError) as exc:
            raise RuntimeError(f"sample {sample['id']!r}: invalid output mask: {exc}") from exc
        ref_path = Path(sample["channel_a"])
        if not ref_path.is_absolute():
            ref_path = base / ref_path
        meta = read_sidecar(ref_path)
        if (mask.height, mask.width) != (meta["height"], meta["width"]):
            raise RuntimeError(
                f"sample {sample['id']!r}: mask is {mask.width}x{mask.height}, "
                f"input is {meta['width']}x{meta['height']}")
        masks.append(mask)
    return masks
