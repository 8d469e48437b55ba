"""End-to-end experiment pipeline behind the CLI: declarative config,
dataset synthesis across an exposure sweep, detection, POD fitting, and
sweep reports.  All outputs are deterministic given (config, seed) and
independent of the worker count.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import detect as detect_mod
from . import forward, noisegen, pod
from .calib import (CalibrationDataset, FlatfieldSeries, RunningMoments,
                    estimate_psf_sigma, fit_flux_coefficient, fit_noise_params,
                    scalar_calibration)
from .imgcore import (BinaryMask, ImageGrid, SeedSpec, read_image, read_mask,
                      read_sidecar, write_image, write_mask)
from .noisegen import DetectorCalibration
from .phantom import MaterialRef, PhantomRecipe, build_phantom


class ConfigError(ValueError):
    """Invalid experiment config or manifest; maps to CLI exit code 2."""


# ---------------------------------------------------------------------------
# Config

_RECIPE_FIELDS = {f.name for f in dataclasses.fields(PhantomRecipe)}


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str
    grid: dict                   # width, height, pitch_mm
    calibration: dict            # scalars, or {"file": path}
    channels: dict               # {"a": {label, k, mu}, "b": {...}}
    materials: dict              # {"main": name, "fo": name}
    phantom: dict                # {"recipe": {...}, "n_fo", "n_clean", [diameter_range_mm]}
    exposures_ms: tuple
    detector: dict
    pod_targets: tuple = (0.9,)
    bootstrap_resamples: int = 500
    apply_blur: bool = False
    workers: int = 1

    @property
    def seed_spec(self) -> SeedSpec:
        return SeedSpec(self.seed)


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    base_dir = base_dir or Path.cwd()
    for key in ("seed", "output_dir", "grid", "calibration", "channels",
                "materials", "phantom", "exposures_ms", "detector"):
        _require(key in raw, f"config missing required key {key!r}")
    grid = raw["grid"]
    for key in ("width", "height", "pitch_mm"):
        _require(key in grid, f"config grid missing {key!r}")
    _require(grid["width"] > 0 and grid["height"] > 0 and grid["pitch_mm"] > 0,
             "grid dimensions and pitch must be positive")
    _require(len(raw["exposures_ms"]) >= 1, "need at least one exposure")
    _require(all(t > 0 for t in raw["exposures_ms"]), "exposures must be positive")
    for side in ("a", "b"):
        _require(side in raw["channels"], f"channels must define side {side!r}")
        ch = raw["channels"][side]
        for key in ("label", "k", "mu"):
            _require(key in ch, f"channel {side!r} missing {key!r}")
        _require(ch["k"] > 0, f"channel {side!r}: k must be positive")
    for role in ("main", "fo"):
        _require(role in raw["materials"], f"materials must name the {role!r} material")
        name = raw["materials"][role]
        for side in ("a", "b"):
            _require(name in raw["channels"][side]["mu"],
                     f"channel {side!r} lacks mu for material {name!r}")
    ph = raw["phantom"]
    _require("recipe" in ph, "phantom config missing 'recipe'")
    unknown = set(ph["recipe"]) - _RECIPE_FIELDS
    _require(not unknown, f"unknown phantom recipe fields: {sorted(unknown)}")
    _require(ph.get("n_fo", 0) > 0, "phantom n_fo must be positive")
    _require(ph.get("n_clean", 0) >= 0, "phantom n_clean must be non-negative")
    if "diameter_range_mm" in ph:
        lo, hi = ph["diameter_range_mm"]
        _require(0 < lo <= hi, "diameter_range_mm must be an increasing positive pair")
    det = raw["detector"]
    _require(det.get("type") in ("baseline", "external"),
             "detector type must be 'baseline' or 'external'")
    if det["type"] == "external":
        _require("command" in det, "external detector needs a 'command'")
    calib_cfg = raw["calibration"]
    if "file" in calib_cfg:
        path = Path(calib_cfg["file"])
        if not path.is_absolute():
            path = base_dir / path
        _require(path.exists(), f"calibration file not found: {path}")
    else:
        for key in ("gain", "darkfield", "darkfield_var"):
            _require(key in calib_cfg, f"inline calibration missing {key!r}")

    targets = tuple(raw.get("pod_targets", [0.9]))
    _require(all(0 < t < 1 for t in targets), "pod targets must lie in (0, 1)")

    return ExperimentConfig(
        seed=int(raw["seed"]),
        output_dir=raw["output_dir"],
        grid=dict(grid),
        calibration=dict(calib_cfg),
        channels={k: dict(v) for k, v in raw["channels"].items()},
        materials=dict(raw["materials"]),
        phantom=dict(ph),
        exposures_ms=tuple(float(t) for t in raw["exposures_ms"]),
        detector=dict(det),
        pod_targets=targets,
        bootstrap_resamples=int(raw.get("bootstrap_resamples", 500)),
        apply_blur=bool(raw.get("apply_blur", False)),
        workers=max(1, int(raw.get("workers", 1))),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return parse_config(raw, base_dir=path.parent)


def config_hash(cfg: ExperimentConfig) -> str:
    doc = dataclasses.asdict(cfg)
    # Execution details do not affect the generated content.
    doc.pop("output_dir", None)
    doc.pop("workers", None)
    canonical = json.dumps(doc, sort_keys=True, separators=(",", ":"), default=list)
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def load_calibration(cfg: ExperimentConfig, base_dir: Path | None = None) -> DetectorCalibration:
    c = cfg.calibration
    if "file" in c:
        path = Path(c["file"])
        if not path.is_absolute():
            path = (base_dir or Path.cwd()) / path
        doc = json.loads(path.read_text())
        return DetectorCalibration(gain=doc["gain"], darkfield=doc["darkfield"],
                                   darkfield_var=doc["darkfield_var"],
                                   psf_sigma=doc.get("psf_sigma", 0.0))
    return DetectorCalibration(gain=c["gain"], darkfield=c["darkfield"],
                               darkfield_var=c["darkfield_var"],
                               psf_sigma=c.get("psf_sigma", 0.0))


def build_channels(cfg: ExperimentConfig, exposure_ms: float):
    def make(side):
        ch = cfg.channels[side]
        return forward.ChannelSettings(label=ch["label"], flux_coefficient=ch["k"],
                                       exposure_ms=exposure_ms,
                                       effective_mu=dict(ch["mu"]))
    return make("a"), make("b")


def build_materials(cfg: ExperimentConfig):
    def make(role):
        name = cfg.materials[role]
        mu = {cfg.channels[side]["label"]: cfg.channels[side]["mu"][name]
              for side in ("a", "b")}
        return MaterialRef(name, effective_mu=mu)
    return make("main"), make("fo")


# ---------------------------------------------------------------------------
# Generation

def _exposure_dirname(t: float) -> str:
    return str(int(t)) if float(t).is_integer() else repr(float(t))


def _sample_diameter(cfg: ExperimentConfig, index: int) -> float | None:
    if "diameter_range_mm" not in cfg.phantom:
        return None
    lo, hi = cfg.phantom["diameter_range_mm"]
    from .imgcore import derive_stream
    rng = derive_stream(cfg.seed_spec.sub(("diameter", index)))
    return float(np.exp(rng.uniform(np.log(lo), np.log(hi))))


def build_sample_phantom(cfg: ExperimentConfig, sample_id: str, index: int,
                         fo_present: bool):
    main_mat, fo_mat = build_materials(cfg)
    recipe = PhantomRecipe(**{k: tuple(v) if isinstance(v, list) else v
                              for k, v in cfg.phantom["recipe"].items()})
    if fo_present:
        diameter = _sample_diameter(cfg, index)
        if diameter is not None:
            recipe = replace(recipe, rod_diameter_mm=diameter)
    return build_phantom(
        recipe, cfg.grid["width"], cfg.grid["height"], cfg.grid["pitch_mm"],
        cfg.seed_spec.sub(("phantom", sample_id)),
        main_material=main_mat, fo_material=fo_mat, include_fo=fo_present)


def _sample_ids(cfg: ExperimentConfig):
    ids = [(f"fo_{i:04d}", i, True) for i in range(cfg.phantom["n_fo"])]
    ids += [(f"clean_{i:04d}", i, False) for i in range(cfg.phantom.get("n_clean", 0))]
    return ids


def _generate_one(cfg, calib, out_root, exposure_ms, sample_id, index, fo_present):
    phantom_spec = build_sample_phantom(cfg, sample_id, index, fo_present)
    channel_a, channel_b = build_channels(cfg, exposure_ms)
    sample_dir = out_root / _exposure_dirname(exposure_ms) / sample_id
    sample_dir.mkdir(parents=True, exist_ok=True)

    files = {}
    provenance = {"exposure_ms": exposure_ms, "sample_id": sample_id,
                  "master_seed": cfg.seed}
    for name, channel in (("a", channel_a), ("b", channel_b)):
        intensity = forward.project(phantom_spec, channel)
        seed = cfg.seed_spec.sub(("noise", exposure_ms, sample_id, channel.label))
        y = noisegen.sample_noisy(intensity, calib, seed)
        if cfg.apply_blur and calib.psf_sigma > 0:
            y = noisegen.blur(y, calib.psf_sigma)
        extra = dict(provenance, channel=channel.label, i0=channel.i0,
                     stream_index=seed.stream_index)
        write_image(y, sample_dir / name, role="acquisition", extra=extra)
        files[f"{name}"] = None

    dr = forward.contrast_map(phantom_spec, channel_a, channel_b)
    write_image(dr, sample_dir / "dr", role="contrast", extra=provenance)
    write_mask(phantom_spec.gt_mask, sample_dir / "gt",
               pitch_mm=cfg.grid["pitch_mm"], extra=provenance)
    if fo_present:
        contrast = forward.sample_contrast(dr, phantom_spec.gt_mask)
    else:
        contrast = 0.0
    return sample_dir, contrast


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def generate_dataset(cfg: ExperimentConfig, base_dir: Path | None = None) -> Path:
    """Synthesize the full dataset tree and its manifest."""
    calib = load_calibration(cfg, base_dir)
    out_root = Path(cfg.output_dir)
    if not out_root.is_absolute() and base_dir is not None:
        out_root = base_dir / out_root
    out_root.mkdir(parents=True, exist_ok=True)

    samples = _sample_ids(cfg)
    jobs = [(exposure, sid, idx, fo)
            for exposure in cfg.exposures_ms for sid, idx, fo in samples]

    def run(job):
        exposure, sid, idx, fo = job
        _generate_one(cfg, calib, out_root, exposure, sid, idx, fo)
        return job

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            list(pool.map(run, jobs))
    else:
        for job in jobs:
            run(job)

    file_hashes = {}
    for exposure in cfg.exposures_ms:
        for sid, _, _ in samples:
            sample_dir = out_root / _exposure_dirname(exposure) / sid
            for stem in ("a", "b", "gt", "dr"):
                for suffix in (".f32", ".json"):
                    p = sample_dir / (stem + suffix)
                    file_hashes[str(p.relative_to(out_root))] = _sha256_file(p)

    manifest = {
        "config_hash": config_hash(cfg),
        "master_seed": cfg.seed,
        "pitch_mm": cfg.grid["pitch_mm"],
        "channels": {side: {"label": cfg.channels[side]["label"],
                            "k": cfg.channels[side]["k"]}
                     for side in ("a", "b")},
        "calibration": {"gain": float(np.mean(np.asarray(calib.gain))),
                        "darkfield": float(np.mean(np.asarray(calib.darkfield))),
                        "darkfield_var": float(np.mean(np.asarray(calib.darkfield_var))),
                        "psf_sigma": calib.psf_sigma,
                        "hash": calib.content_hash()},
        "exposures_ms": list(cfg.exposures_ms),
        "samples": [{"id": sid, "fo_present": fo} for sid, _, fo in samples],
        "files": file_hashes,
    }
    (out_root / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return out_root


# ---------------------------------------------------------------------------
# Detection

def _load_manifest(dataset_dir: Path) -> dict:
    manifest_path = dataset_dir / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"dataset manifest not found: {manifest_path}")
    return json.loads(manifest_path.read_text())


def _outcome_row(outcome: detect_mod.DetectionOutcome, exposure_ms: float) -> list:
    return [outcome.sample_id, repr(float(exposure_ms)), repr(float(outcome.contrast)),
            int(outcome.fo_present), int(outcome.detected),
            repr(float(outcome.recall)), int(outcome.false_positive)]

OUTCOME_HEADER = ["sample_id", "exposure_ms", "contrast", "fo_present",
                  "detected", "recall", "false_positive"]


def _detect_one_baseline(dataset_dir, exposure, sample, manifest, calib, det_cfg):
    sample_dir = dataset_dir / _exposure_dirname(exposure) / sample["id"]
    y_a = read_image(sample_dir / "a")
    y_b = read_image(sample_dir / "b")
    meta_a = read_sidecar(sample_dir / "a")
    meta_b = read_sidecar(sample_dir / "b")
    raw = detect_mod.DualImage(channel_a=y_a, channel_b=y_b, stage="raw",
                               exposure_ms=exposure,
                               label_a=manifest["channels"]["a"]["label"],
                               label_b=manifest["channels"]["b"]["label"])
    corrected = detect_mod.correct_pair(raw, meta_a["i0"], meta_b["i0"], calib)
    predicted = detect_mod.baseline_segment(corrected, det_cfg, calib)
    return predicted


def _sample_contrast_from_files(dataset_dir, exposure, sample) -> float:
    sample_dir = dataset_dir / _exposure_dirname(exposure) / sample["id"]
    if not sample["fo_present"]:
        return 0.0
    dr = read_image(sample_dir / "dr")
    gt = read_mask(sample_dir / "gt")
    return forward.sample_contrast(dr, gt)


def detect_dataset(dataset_dir, detector_cfg: dict, calib: DetectorCalibration,
                   workers: int = 1) -> dict:
    """Run the configured detector over every exposure; returns
    {exposure_ms: outcomes CSV path}."""
    dataset_dir = Path(dataset_dir)
    manifest = _load_manifest(dataset_dir)
    det_type = detector_cfg.get("type", "baseline")
    outputs = {}
    for exposure in manifest["exposures_ms"]:
        outcomes = []
        if det_type == "baseline":
            det = detect_mod.DetectorConfig(
                z_threshold=detector_cfg.get("z_threshold", 3.0),
                min_area=detector_cfg.get("min_area", 4),
                denom_floor=detector_cfg.get("denom_floor", forward.DEFAULT_DENOM_FLOOR),
                object_mask_threshold=detector_cfg.get("object_mask_threshold", 0.1),
            )

            def run(sample):
                predicted = _detect_one_baseline(dataset_dir, exposure, sample,
                                                 manifest, calib, det)
                gt = read_mask(dataset_dir / _exposure_dirname(exposure)
                               / sample["id"] / "gt")
                contrast = _sample_contrast_from_files(dataset_dir, exposure, sample)
                return detect_mod.to_outcome(predicted, gt, contrast, sample["id"])

            if workers > 1:
                with ThreadPoolExecutor(max_workers=workers) as pool:
                    outcomes = list(pool.map(run, manifest["samples"]))
            else:
                outcomes = [run(s) for s in manifest["samples"]]
        elif det_type == "external":
            ext_manifest = write_external_manifest(dataset_dir, exposure, manifest)
            masks = detect_mod.run_external_detector(ext_manifest, detector_cfg["command"])
            for sample, predicted in zip(manifest["samples"], masks):
                gt = read_mask(dataset_dir / _exposure_dirname(exposure)
                               / sample["id"] / "gt")
                contrast = _sample_contrast_from_files(dataset_dir, exposure, sample)
                outcomes.append(detect_mod.to_outcome(predicted, gt, contrast, sample["id"]))
        else:
            raise ConfigError(f"unknown detector type {det_type!r}")

        out_path = dataset_dir / f"outcomes_{_exposure_dirname(exposure)}.csv"
        with open(out_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(OUTCOME_HEADER)
            for outcome in outcomes:
                writer.writerow(_outcome_row(outcome, exposure))
        outputs[exposure] = out_path
    return outputs


def write_external_manifest(dataset_dir: Path, exposure: float, manifest: dict) -> Path:
    """Manifest handed to an external detector for one exposure."""
    exp_dir = _exposure_dirname(exposure)
    doc = {
        "exposure_ms": exposure,
        "calibration": "manifest.json",
        "samples": [
            {
                "id": s["id"],
                "channel_a": f"{exp_dir}/{s['id']}/a.json",
                "channel_b": f"{exp_dir}/{s['id']}/b.json",
                "gt_mask": f"{exp_dir}/{s['id']}/gt.json",
                "out_mask": f"{exp_dir}/{s['id']}/pred.json",
            }
            for s in manifest["samples"]
        ],
    }
    path = dataset_dir / f"detect_manifest_{exp_dir}.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")
    return path


# ---------------------------------------------------------------------------
# POD reports

def read_outcomes(csv_path) -> list[dict]:
    with open(csv_path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigError(f"{csv_path}: empty outcomes file")
    return rows


def pod_report(csv_path, targets, resamples: int, seed: SeedSpec,
               out_prefix: Path | None = None, make_plot: bool = True) -> dict:
    """Fit a POD curve from an outcomes CSV; optionally write the report
    JSON, curve CSV and SVG plot next to out_prefix."""
    rows = read_outcomes(csv_path)
    fo_rows = [r for r in rows if int(r["fo_present"]) == 1]
    clean_rows = [r for r in rows if int(r["fo_present"]) == 0]
    if not fo_rows:
        raise ConfigError(f"{csv_path}: no foreign-object samples to fit")
    samples = [pod.PodSample(contrast=float(r["contrast"]),
                             success=bool(int(r["detected"]))) for r in fo_rows]
    n_success = sum(s.success for s in samples)
    if n_success == 0 or n_success == len(samples):
        raise ConfigError(
            f"{csv_path}: all outcomes are "
            f"{'successes' if n_success else 'failures'}; cannot fit a POD curve")
    fit = pod.fit_pod(samples)
    fp_rate = (sum(int(r["false_positive"]) for r in clean_rows) / len(clean_rows)
               if clean_rows else None)

    target_entries = []
    for target in targets:
        interval = pod.bootstrap_interval(samples, target, resamples,
                                          seed.sub(("bootstrap", target)))
        target_entries.append({
            "target": target,
            "point": interval.point,
            "ci_low": interval.ci_low,
            "ci_high": interval.ci_high,
            "method": interval.method,
            "resamples": interval.resamples,
            "unstable": interval.unstable,
            "degenerate_fraction": interval.degenerate_fraction,
        })

    exposure = float(fo_rows[0]["exposure_ms"])
    report = {
        "exposure_ms": exposure,
        "n_samples": len(samples),
        "n_success": int(n_success),
        "c0": fit.c0,
        "c1": fit.c1,
        "cov": [[float(v) for v in row] for row in fit.cov],
        "converged": fit.converged,
        "separation": fit.separation,
        "log_likelihood": fit.log_likelihood,
        "false_positive_rate": fp_rate,
        "targets": target_entries,
    }

    if out_prefix is not None:
        out_prefix = Path(out_prefix)
        out_prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(f"{out_prefix}.json", "w") as fh:
            json.dump(report, fh, sort_keys=True, indent=1)
            fh.write("\n")
        grid = np.linspace(0.0, max(s.contrast for s in samples) * 1.2, 200)
        probs = pod.pod_curve(fit, grid)
        with open(f"{out_prefix}_curve.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["contrast", "pod"])
            for c, p in zip(grid, probs):
                writer.writerow([repr(float(c)), repr(float(p))])
        if make_plot:
            from .plots import plot_pod_curve
            plot_pod_curve(f"{out_prefix}.svg", fit, samples, target_entries)
    return report


def interpolate_threshold(exposures, thresholds, query_ms: float) -> float:
    """Contrast-at-target interpolated log-linearly in exposure time."""
    exposures = np.asarray(exposures, dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if exposures.size < 2:
        raise ConfigError("interpolation needs at least 2 fitted exposures")
    order = np.argsort(exposures)
    xs, ys = np.log(exposures[order]), thresholds[order]
    if not exposures.min() <= query_ms <= exposures.max():
        raise ConfigError(f"query {query_ms} ms lies outside the fitted sweep")
    return float(np.interp(np.log(query_ms), xs, ys))


def sweep_report(report_paths, out_dir, target: float = 0.9,
                 query_ms=(), make_plots: bool = True) -> dict:
    """Combine per-exposure POD reports into the sweep summary: threshold
    table, monotonicity annotation, overlay and threshold plots."""
    reports = []
    for path in report_paths:
        reports.append(json.loads(Path(path).read_text()))
    if len(reports) < 2:
        raise ConfigError("sweep report needs at least 2 fitted exposures")
    exposures = [r["exposure_ms"] for r in reports]
    if len(set(exposures)) != len(exposures):
        raise ConfigError("duplicate exposures among the reports")
    reports.sort(key=lambda r: -r["exposure_ms"])

    rows = []
    for r in reports:
        entry = next((t for t in r["targets"] if t["target"] == target), None)
        if entry is None:
            raise ConfigError(
                f"report for {r['exposure_ms']} ms lacks target {target}")
        rows.append({
            "exposure_ms": r["exposure_ms"],
            "threshold": entry["point"],
            "ci_low": entry["ci_low"],
            "ci_high": entry["ci_high"],
        })

    thresholds = [row["threshold"] for row in rows]
    monotone = all(t2 > t1 for t1, t2 in zip(thresholds, thresholds[1:]))

    queries = [{"exposure_ms": q,
                "threshold": interpolate_threshold([r["exposure_ms"] for r in rows],
                                                   thresholds, q)}
               for q in query_ms]

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "sweep.csv"
    with open(table_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["exposure_ms", "threshold", "ci_low", "ci_high"])
        for row in rows:
            writer.writerow([repr(float(row["exposure_ms"])), repr(float(row["threshold"])),
                             repr(float(row["ci_low"])), repr(float(row["ci_high"]))])

    summary = {
        "target": target,
        "rows": rows,
        "monotone_decreasing_exposure_increases_threshold": monotone,
        "queries": queries,
        "reports": [{"exposure_ms": r["exposure_ms"], "c0": r["c0"], "c1": r["c1"],
                     "false_positive_rate": r["false_positive_rate"]} for r in reports],
    }
    with open(out_dir / "sweep_report.json", "w") as fh:
        json.dump(summary, fh, sort_keys=True, indent=1)
        fh.write("\n")

    if make_plots:
        from .plots import plot_sweep_curves, plot_threshold_vs_exposure
        plot_sweep_curves(out_dir / "sweep_curves.svg", reports, target)
        plot_threshold_vs_exposure(out_dir / "sweep_threshold.svg", rows, target)
    return summary


# ---------------------------------------------------------------------------
# Verification

def verify_dataset(dataset_dir) -> list[str]:
    """Re-derive the stored file hashes; returns a list of mismatch
    descriptions (empty when everything checks out)."""
    dataset_dir = Path(dataset_dir)
    manifest = _load_manifest(dataset_dir)
    problems = []
    for rel, expected in manifest["files"].items():
        path = dataset_dir / rel
        if not path.exists():
            problems.append(f"missing file: {rel}")
            continue
        actual = _sha256_file(path)
        if actual != expected:
            problems.append(f"hash mismatch: {rel}")
    return problems
