"""Command-line entry point.

Subcommands: calibrate, generate, detect, pod, sweep-report, verify.
Exit codes: 0 success, 2 validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import experiment
from .calib import (CalibrationDataset, FlatfieldSeries, RunningMoments,
                    estimate_psf_sigma, fit_flux_coefficient, fit_noise_params,
                    scalar_calibration)
from .experiment import ConfigError
from .imgcore import ImageGrid, SeedSpec, read_image, write_image

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


def _frame_paths(directory: Path):
    paths = sorted(directory.glob("*.f32"))
    if not paths:
        raise ConfigError(f"no .f32 frames found in {directory}")
    return paths


def _stream_series_moments(directory: Path):
    acc = RunningMoments()
    for path in _frame_paths(directory):
        acc.update(read_image(path).data)
    return acc


def cmd_calibrate(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise ConfigError(f"manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if "darkfield" not in manifest:
        raise ConfigError("calibration manifest missing 'darkfield' series")
    if len(manifest.get("levels", [])) < 3:
        raise ConfigError("calibration manifest needs at least 3 flatfield levels")
    base = manifest_path.parent

    def series_from(entry) -> FlatfieldSeries:
        directory = Path(entry["dir"])
        if not directory.is_absolute():
            directory = base / directory
        frames = tuple(read_image(p) for p in _frame_paths(directory))
        return FlatfieldSeries(frames=frames, exposure_ms=entry.get("exposure_ms", 1.0),
                               tube_label=entry.get("tube", ""),
                               level_id=entry.get("id", directory.name))

    dark = series_from(manifest["darkfield"])
    levels = tuple(series_from(entry) for entry in manifest["levels"])
    dataset = CalibrationDataset(darkfield_series=dark, levels=levels)
    per_pixel, diag = fit_noise_params(dataset)

    psf_sigma = 0.0
    psf_cfg = manifest.get("psf")
    if psf_cfg:
        level = next((lv for lv in levels if lv.level_id == psf_cfg["from_level"]), None)
        if level is None:
            raise ConfigError(f"psf.from_level {psf_cfg['from_level']!r} not among levels")
        psf_sigma = estimate_psf_sigma(level.frames[0],
                                       window=psf_cfg.get("window", 4))

    scalars = scalar_calibration(per_pixel, diag.valid, psf_sigma=psf_sigma)

    flux = None
    exposures = {lv.exposure_ms for lv in levels}
    if len(exposures) >= 2:
        d_e = float(np.median(np.asarray(per_pixel.darkfield)))
        pts = []
        for lv in levels:
            acc = RunningMoments()
            for frame in lv.frames:
                acc.update(frame.data)
            pts.append((lv.exposure_ms, float(acc.mean.mean())))
        fit = fit_flux_coefficient(pts, d_e)
        flux = {"k": fit.k, "residual_rms": fit.residual_rms, "n_points": fit.n_points}

    out_path = Path(args.output)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "gain": scalars.gain,
        "darkfield": scalars.darkfield,
        "darkfield_var": scalars.darkfield_var,
        "psf_sigma": scalars.psf_sigma,
        "flux": flux,
        "n_levels": diag.n_levels,
        "valid_fraction": diag.valid.count / (diag.valid.width * diag.valid.height),
        "max_intercept_mismatch": diag.max_intercept_mismatch,
    }
    out_path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")

    if args.maps:
        maps_dir = Path(args.maps)
        maps_dir.mkdir(parents=True, exist_ok=True)
        pitch = dark.frames[0].pitch_mm
        for name, values in (("gain", per_pixel.gain),
                             ("darkfield", per_pixel.darkfield),
                             ("darkfield_var", per_pixel.darkfield_var)):
            write_image(ImageGrid(np.asarray(values, dtype=np.float64), pitch),
                        maps_dir / name, role="calibration")
    print(f"calibration written to {out_path}")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = experiment.load_config(args.config)
    out = experiment.generate_dataset(cfg, base_dir=Path(args.config).parent)
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = experiment.load_config(args.config)
    calib = experiment.load_calibration(cfg, Path(args.config).parent)
    outputs = experiment.detect_dataset(args.dataset, cfg.detector, calib,
                                        workers=cfg.workers)
    for exposure, path in sorted(outputs.items(), key=lambda kv: -kv[0]):
        print(f"{exposure:g} ms -> {path}")
    return EXIT_OK


def cmd_pod(args) -> int:
    targets = [float(t) for t in args.target] or [0.9]
    report = experiment.pod_report(args.outcomes, targets,
                                   resamples=args.resamples,
                                   seed=SeedSpec(args.seed),
                                   out_prefix=Path(args.output))
    for entry in report["targets"]:
        print(f"POD={entry['target']:g}: contrast {entry['point']:.5f} "
              f"[{entry['ci_low']:.5f}, {entry['ci_high']:.5f}]")
    return EXIT_OK


def cmd_sweep_report(args) -> int:
    summary = experiment.sweep_report(args.reports, args.output,
                                      target=args.target,
                                      query_ms=[float(q) for q in args.query])
    for row in summary["rows"]:
        print(f"{row['exposure_ms']:g} ms: threshold {row['threshold']:.5f}")
    for q in summary["queries"]:
        print(f"{q['exposure_ms']:g} ms (interpolated): {q['threshold']:.5f}")
    return EXIT_OK


def cmd_verify(args) -> int:
    problems = experiment.verify_dataset(args.dataset)
    if problems:
        for problem in problems:
            print(problem, file=sys.stderr)
        raise ConfigError(f"{len(problems)} verification failures")
    print("dataset verified")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xraypod",
        description="Calibrated X-ray image generation and POD analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit detector noise model from a series manifest")
    p.add_argument("manifest")
    p.add_argument("-o", "--output", required=True, help="calibration JSON output")
    p.add_argument("--maps", help="directory for per-pixel parameter maps")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("generate", help="synthesize a dataset from an experiment config")
    p.add_argument("config")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("detect", help="run the configured detector over a dataset")
    p.add_argument("config")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("pod", help="fit a POD curve from an outcomes CSV")
    p.add_argument("outcomes")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.add_argument("--target", action="append", default=[], help="POD target (repeatable)")
    p.add_argument("--resamples", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_pod)

    p = sub.add_parser("sweep-report", help="combine per-exposure POD reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.add_argument("--target", type=float, default=0.9)
    p.add_argument("--query", action="append", default=[],
                   help="interpolate threshold at this exposure (ms, repeatable)")
    p.set_defaults(func=cmd_sweep_report)

    p = sub.add_parser("verify", help="check dataset provenance hashes")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # runtime failures keep a distinct exit code
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
