"""Deterministic SVG plots: POD curves with sample rug and interval bands,
sweep overlays, and the threshold-vs-exposure summary.

Each SVG gets its data table appended as an XML comment so the artifact is
self-contained and diffable.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "xraypod"

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from . import pod  # noqa: E402


def _save(fig, path, table_lines):
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    with open(path, "a") as fh:
        fh.write("<!--\ndata:\n")
        for line in table_lines:
            fh.write(line + "\n")
        fh.write("-->\n")


def plot_pod_curve(path, fit: pod.PodFit, samples, target_entries):
    contrasts = np.array([s.contrast for s in samples])
    outcomes = np.array([1.0 if s.success else 0.0 for s in samples])
    grid = np.linspace(0.0, contrasts.max() * 1.2, 200)
    probs = pod.pod_curve(fit, grid)

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(grid, probs, color="tab:blue", label="fitted POD")
    # Sample rug: successes on top, failures at the bottom.
    ax.plot(contrasts[outcomes > 0.5], np.full(int(outcomes.sum()), 1.02), "|",
            color="tab:green", alpha=0.5, markersize=8)
    ax.plot(contrasts[outcomes < 0.5], np.full(int((1 - outcomes).sum()), -0.02), "|",
            color="tab:red", alpha=0.5, markersize=8)
    for entry in target_entries:
        ax.axhline(entry["target"], color="gray", linestyle=":", linewidth=0.8)
        ax.axvspan(entry["ci_low"], entry["ci_high"], color="tab:blue", alpha=0.15)
        ax.axvline(entry["point"], color="tab:blue", linestyle="--", linewidth=0.8)
    ax.set_xlabel("contrast")
    ax.set_ylabel("probability of detection")
    ax.set_ylim(-0.06, 1.06)
    ax.legend(loc="lower right")
    lines = ["contrast,pod"] + [f"{c!r},{p!r}" for c, p in zip(grid, probs)]
    _save(fig, path, lines)


def plot_sweep_curves(path, reports, target):
    fig, ax = plt.subplots(figsize=(6, 4))
    max_c = max(3.0 * (r["targets"][0]["point"] if r["targets"] else 0.2) for r in reports)
    grid = np.linspace(0.0, max(max_c, 1e-3), 200)
    lines = ["exposure_ms,c0,c1"]
    for r in reports:
        fit = pod.PodFit(c0=r["c0"], c1=r["c1"], cov=np.zeros((2, 2)), n=r["n_samples"],
                         converged=r["converged"], separation=r["separation"],
                         log_likelihood=r["log_likelihood"])
        probs = pod.pod_curve(fit, grid)
        ax.plot(grid, probs, label=f"{r['exposure_ms']:g} ms")
        lines.append(f"{r['exposure_ms']!r},{r['c0']!r},{r['c1']!r}")
    ax.axhline(target, color="gray", linestyle=":", linewidth=0.8)
    ax.set_xlabel("contrast")
    ax.set_ylabel("probability of detection")
    ax.set_ylim(0, 1.05)
    ax.legend(loc="lower right")
    _save(fig, path, lines)


def plot_threshold_vs_exposure(path, rows, target):
    exposures = np.array([row["exposure_ms"] for row in rows])
    thresholds = np.array([row["threshold"] for row in rows])
    lows = np.array([row["ci_low"] for row in rows])
    highs = np.array([row["ci_high"] for row in rows])

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.errorbar(exposures, thresholds,
                yerr=[thresholds - lows, highs - thresholds],
                fmt="o-", color="tab:blue", capsize=3)
    ax.set_xscale("log")
    ax.set_xlabel("exposure time (ms)")
    ax.set_ylabel(f"contrast at POD = {target:g}")
    lines = ["exposure_ms,threshold,ci_low,ci_high"]
    lines += [f"{e!r},{t!r},{lo!r},{hi!r}"
              for e, t, lo, hi in zip(exposures, thresholds, lows, highs)]
    _save(fig, path, lines)
