"""Shared fixtures and config builders for the test suite."""

import numpy as np
import pytest

from xraypod.imgcore import ImageGrid, SeedSpec

# One line per acceptance criterion, printed in the terminal summary.
ACCEPTANCE_RESULTS = []


def record_acceptance(label, ok, detail=""):
    verdict = "PASS" if ok else "FAIL"
    line = f"[{verdict}] {label}" + (f": {detail}" if detail else "")
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture
def seed():
    return SeedSpec(424242)


def flat_grid(value, shape=(32, 32), pitch_mm=1.0):
    return ImageGrid(np.full(shape, float(value)), pitch_mm)


def pipeline_config(output_dir, *, seed=424242, n_fo=20, n_clean=4,
                    exposures=(1000.0, 100.0), workers=1,
                    resamples=200, diameter_range=(0.22, 7.0)):
    """Small end-to-end experiment config sharing the tuned geometry."""
    return {
        "seed": seed,
        "output_dir": str(output_dir),
        "grid": {"width": 192, "height": 144, "pitch_mm": 0.3},
        "calibration": {"gain": 1.5, "darkfield": 100.0,
                        "darkfield_var": 25.0, "psf_sigma": 0.0},
        "channels": {
            "a": {"label": "high", "k": 400.0,
                  "mu": {"meat": 0.020, "bone": 0.060}},
            "b": {"label": "low", "k": 400.0,
                  "mu": {"meat": 0.025, "bone": 0.045}},
        },
        "materials": {"main": "meat", "fo": "bone"},
        "phantom": {
            "recipe": {
                "main_axes_mm": [26.0, 19.0, 8.0],
                "main_center_px": [96.0, 72.0],
                "rod_length_mm": 8.0,
                "rod_diameter_mm": 2.0,
                "rod_orientation_rad": 0.6,
                "rod_center_px": [96.0, 72.0],
                "center_jitter_px": 15.0,
                "length_jitter_mm": 3.0,
                "orientation_jitter_rad": 3.1,
            },
            "n_fo": n_fo,
            "n_clean": n_clean,
            "diameter_range_mm": list(diameter_range),
        },
        "exposures_ms": list(exposures),
        "detector": {"type": "baseline"},
        "bootstrap_resamples": resamples,
        "workers": workers,
    }
