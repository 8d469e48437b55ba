"""End-to-end pipeline and command-line tests: config validation, dataset
generation, detection, POD reports, sweep summaries, and exit codes."""

import csv
import json
import xml.etree.ElementTree as ET
from pathlib import Path

import numpy as np
import pytest

from conftest import pipeline_config
from xraypod import cli, experiment
from xraypod.experiment import (ConfigError, config_hash, detect_dataset,
                                generate_dataset, interpolate_threshold,
                                load_calibration, parse_config, pod_report,
                                sweep_report, verify_dataset)
from xraypod.imgcore import ImageGrid, SeedSpec, read_sidecar, write_image
from xraypod.noisegen import DetectorCalibration, sample_noisy
from xraypod.pod import simulate_samples
from xraypod.imgcore import derive_stream


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One small generated + detected dataset shared by the read-only tests."""
    root = tmp_path_factory.mktemp("pipeline")
    raw = pipeline_config(root / "data", n_fo=48, n_clean=6,
                          exposures=(1000.0, 100.0), resamples=100)
    cfg = parse_config(raw)
    dataset = generate_dataset(cfg)
    calib = load_calibration(cfg)
    outcome_paths = detect_dataset(dataset, cfg.detector, calib)
    return {"cfg": cfg, "dataset": dataset, "outcomes": outcome_paths,
            "root": root}


class TestConfigValidation:
    def test_missing_key(self, tmp_path):
        raw = pipeline_config(tmp_path)
        del raw["channels"]
        with pytest.raises(ConfigError, match="channels"):
            parse_config(raw)

    def test_bad_detector_type(self, tmp_path):
        raw = pipeline_config(tmp_path)
        raw["detector"] = {"type": "quantum"}
        with pytest.raises(ConfigError, match="detector"):
            parse_config(raw)

    def test_material_mu_required(self, tmp_path):
        raw = pipeline_config(tmp_path)
        raw["materials"]["fo"] = "titanium"
        with pytest.raises(ConfigError, match="titanium"):
            parse_config(raw)

    def test_unknown_recipe_field(self, tmp_path):
        raw = pipeline_config(tmp_path)
        raw["phantom"]["recipe"]["wobble"] = 1.0
        with pytest.raises(ConfigError, match="wobble"):
            parse_config(raw)

    def test_missing_calibration_file(self, tmp_path):
        raw = pipeline_config(tmp_path)
        raw["calibration"] = {"file": str(tmp_path / "nope.json")}
        with pytest.raises(ConfigError, match="not found"):
            parse_config(raw)

    def test_hash_ignores_execution_details(self, tmp_path):
        a = parse_config(pipeline_config(tmp_path / "a", workers=1))
        b = parse_config(pipeline_config(tmp_path / "b", workers=8))
        assert config_hash(a) == config_hash(b)
        c = parse_config(pipeline_config(tmp_path / "c", seed=7))
        assert config_hash(a) != config_hash(c)


class TestGenerateDataset:
    def test_layout(self, pipeline):
        dataset = pipeline["dataset"]
        for exposure in ("1000", "100"):
            for sid in ("fo_0000", "fo_0047", "clean_0005"):
                d = dataset / exposure / sid
                for stem in ("a", "b", "gt", "dr"):
                    assert (d / f"{stem}.f32").exists()
                    assert (d / f"{stem}.json").exists()
        assert (dataset / "manifest.json").exists()

    def test_manifest_contents(self, pipeline):
        manifest = json.loads((pipeline["dataset"] / "manifest.json").read_text())
        assert manifest["master_seed"] == 424242
        assert len(manifest["samples"]) == 54
        assert len(manifest["files"]) == 2 * 54 * 8
        assert manifest["config_hash"] == config_hash(pipeline["cfg"])

    def test_exposure_linearity_outside_object(self, pipeline):
        # Flatfield region: mean tracks k * t + darkfield.
        from xraypod.imgcore import read_image
        means = {}
        for exposure in (1000.0, 100.0):
            img = read_image(pipeline["dataset"] / str(int(exposure))
                             / "fo_0000" / "a")
            means[exposure] = img.data[:8, :8].mean()  # corner, outside object
        assert means[1000.0] == pytest.approx(400.0 * 1000 + 100.0, rel=0.01)
        assert means[100.0] == pytest.approx(400.0 * 100 + 100.0, rel=0.01)

    def test_sidecar_provenance(self, pipeline):
        meta = read_sidecar(pipeline["dataset"] / "100" / "fo_0001" / "a")
        assert meta["master_seed"] == 424242
        assert meta["i0"] == pytest.approx(400.0 * 100)
        assert meta["channel"] == "high"

    def test_reproducible_directory(self, tmp_path):
        for name in ("one", "two"):
            cfg = parse_config(pipeline_config(tmp_path / name, n_fo=3,
                                               n_clean=1, exposures=(100.0,)))
            generate_dataset(cfg)
        # The manifest pins a hash of every file, so identical manifests
        # mean identical directory contents.
        m1 = (tmp_path / "one" / "manifest.json").read_bytes()
        m2 = (tmp_path / "two" / "manifest.json").read_bytes()
        assert m1 == m2
        rel = "100/fo_0000/a.f32"
        assert ((tmp_path / "one" / rel).read_bytes()
                == (tmp_path / "two" / rel).read_bytes())

    def test_verify_clean_and_corrupted(self, tmp_path):
        cfg = parse_config(pipeline_config(tmp_path / "v", n_fo=2, n_clean=0,
                                           exposures=(100.0,)))
        dataset = generate_dataset(cfg)
        assert verify_dataset(dataset) == []
        victim = dataset / "100" / "fo_0000" / "a.f32"
        data = bytearray(victim.read_bytes())
        data[0] ^= 0xFF
        victim.write_bytes(bytes(data))
        problems = verify_dataset(dataset)
        assert len(problems) == 1 and "a.f32" in problems[0]


class TestDetectDataset:
    def test_outcome_rows(self, pipeline):
        for path in pipeline["outcomes"].values():
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            assert len(rows) == 54
            fo_rows = [r for r in rows if r["fo_present"] == "1"]
            assert len(fo_rows) == 48
            for r in fo_rows:
                assert float(r["contrast"]) > 0

    def test_more_detections_at_long_exposure(self, pipeline):
        counts = {}
        for exposure, path in pipeline["outcomes"].items():
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
            counts[exposure] = sum(int(r["detected"]) for r in rows)
        assert counts[1000.0] >= counts[100.0]

    def test_external_gt_copy_detector(self, tmp_path):
        cfg_raw = pipeline_config(tmp_path / "ext", n_fo=3, n_clean=1,
                                  exposures=(100.0,))
        stub = tmp_path / "stub.py"
        stub.write_text(
            "import json, shutil, sys\n"
            "from pathlib import Path\n"
            "manifest = json.loads(Path(sys.argv[1]).read_text())\n"
            "base = Path(sys.argv[1]).parent\n"
            "for s in manifest['samples']:\n"
            "    for ext in ('.json', '.f32'):\n"
            "        shutil.copy((base / s['gt_mask']).with_suffix(ext),\n"
            "                    (base / s['out_mask']).with_suffix(ext))\n")
        cfg_raw["detector"] = {"type": "external",
                               "command": f"python3 {stub} {{manifest}}"}
        cfg = parse_config(cfg_raw)
        dataset = generate_dataset(cfg)
        outputs = detect_dataset(dataset, cfg.detector, load_calibration(cfg))
        with open(outputs[100.0], newline="") as fh:
            rows = list(csv.DictReader(fh))
        for r in rows:
            if r["fo_present"] == "1":
                assert float(r["recall"]) == 1.0 and r["detected"] == "1"
            else:
                assert r["false_positive"] == "0"


def synthetic_outcomes(path, n=400, exposure=100.0, seed=SeedSpec(5)):
    """Outcomes CSV drawn from a known detection curve."""
    x = derive_stream(seed.sub("x")).uniform(0.0, 0.4, n)
    samples = simulate_samples(-2.0, 20.0, x, seed)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(experiment.OUTCOME_HEADER)
        for i, s in enumerate(samples):
            writer.writerow([f"fo_{i:04d}", repr(exposure), repr(s.contrast),
                             1, int(s.success), repr(1.0 if s.success else 0.0), 0])
        writer.writerow(["clean_0000", repr(exposure), repr(0.0), 0, 0,
                         repr(0.0), 0])
    return path


class TestPodReport:
    def test_report_contents(self, tmp_path):
        csv_path = synthetic_outcomes(tmp_path / "o.csv")
        report = pod_report(csv_path, [0.9], resamples=150, seed=SeedSpec(3),
                            out_prefix=tmp_path / "pod")
        assert report["exposure_ms"] == 100.0
        assert report["false_positive_rate"] == 0.0
        entry = report["targets"][0]
        assert entry["point"] == pytest.approx(0.141702, abs=0.02)
        assert entry["ci_low"] < entry["point"] < entry["ci_high"]
        assert (tmp_path / "pod.json").exists()
        assert (tmp_path / "pod_curve.csv").exists()

    def test_svg_valid_and_deterministic(self, tmp_path):
        csv_path = synthetic_outcomes(tmp_path / "o.csv")
        for name in ("p1", "p2"):
            pod_report(csv_path, [0.9], resamples=50, seed=SeedSpec(3),
                       out_prefix=tmp_path / name)
        svg1 = (tmp_path / "p1.svg").read_bytes()
        svg2 = (tmp_path / "p2.svg").read_bytes()
        assert svg1 == svg2
        root = ET.fromstring(svg1)
        assert root.tag.endswith("svg")
        assert b"<path" in svg1

    def test_all_success_rejected(self, tmp_path):
        path = tmp_path / "all.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(experiment.OUTCOME_HEADER)
            for i in range(20):
                writer.writerow([f"fo_{i:04d}", "100.0", repr(0.1 + 0.01 * i),
                                 1, 1, "1.0", 0])
        with pytest.raises(ConfigError, match="successes"):
            pod_report(path, [0.9], resamples=10, seed=SeedSpec(0),
                       out_prefix=None, make_plot=False)


class TestSweepReport:
    def make_reports(self, tmp_path):
        paths = []
        for exposure, seed in ((100.0, 11), (50.0, 12), (1000.0, 13)):
            csv_path = synthetic_outcomes(tmp_path / f"o{int(exposure)}.csv",
                                          exposure=exposure, seed=SeedSpec(seed))
            pod_report(csv_path, [0.9], resamples=80, seed=SeedSpec(seed),
                       out_prefix=tmp_path / f"pod{int(exposure)}",
                       make_plot=False)
            paths.append(tmp_path / f"pod{int(exposure)}.json")
        return paths

    def test_summary_and_outputs(self, tmp_path):
        paths = self.make_reports(tmp_path)
        summary = sweep_report(paths, tmp_path / "sweep", query_ms=[75.0])
        assert len(summary["rows"]) == 3
        # rows sorted by decreasing exposure
        assert [r["exposure_ms"] for r in summary["rows"]] == [1000.0, 100.0, 50.0]
        assert (tmp_path / "sweep" / "sweep.csv").exists()
        assert (tmp_path / "sweep" / "sweep_report.json").exists()
        assert (tmp_path / "sweep" / "sweep_curves.svg").exists()
        assert (tmp_path / "sweep" / "sweep_threshold.svg").exists()

    def test_single_report_rejected(self, tmp_path):
        paths = self.make_reports(tmp_path)
        with pytest.raises(ConfigError):
            sweep_report(paths[:1], tmp_path / "sweep1")

    def test_interpolation_between_neighbors(self):
        val = interpolate_threshold([1000.0, 100.0, 50.0, 20.0],
                                    [0.02, 0.10, 0.13, 0.18], 75.0)
        assert 0.10 < val < 0.13
        # log-linear interpolation, closed form
        expected = 0.10 + (0.13 - 0.10) * (np.log(100 / 75) / np.log(2.0))
        assert val == pytest.approx(expected, rel=1e-9)

    def test_query_outside_sweep(self):
        with pytest.raises(ConfigError, match="outside"):
            interpolate_threshold([100.0, 50.0], [0.1, 0.13], 10.0)


class TestCliCommands:
    def write_config(self, tmp_path, **kw):
        raw = pipeline_config(tmp_path / "data", n_fo=3, n_clean=1,
                              exposures=(100.0,), **kw)
        path = tmp_path / "config.json"
        path.write_text(json.dumps(raw, indent=1))
        return path

    def test_generate_detect_verify_roundtrip(self, tmp_path, capsys):
        cfg_path = self.write_config(tmp_path)
        assert cli.main(["generate", str(cfg_path)]) == 0
        assert cli.main(["detect", str(cfg_path), str(tmp_path / "data")]) == 0
        assert cli.main(["verify", str(tmp_path / "data")]) == 0
        out = capsys.readouterr().out
        assert "dataset verified" in out
        assert (tmp_path / "data" / "outcomes_100.csv").exists()

    def test_pod_and_sweep_commands(self, tmp_path):
        for exposure, seed in ((100.0, 21), (50.0, 22)):
            synthetic_outcomes(tmp_path / f"o{int(exposure)}.csv",
                               exposure=exposure, seed=SeedSpec(seed))
            code = cli.main(["pod", str(tmp_path / f"o{int(exposure)}.csv"),
                             "-o", str(tmp_path / f"pod{int(exposure)}"),
                             "--resamples", "60", "--seed", str(seed)])
            assert code == 0
        code = cli.main(["sweep-report",
                         str(tmp_path / "pod100.json"),
                         str(tmp_path / "pod50.json"),
                         "-o", str(tmp_path / "sweep"), "--query", "75"])
        assert code == 0
        summary = json.loads((tmp_path / "sweep" / "sweep_report.json").read_text())
        assert summary["queries"][0]["exposure_ms"] == 75.0

    def test_invalid_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{}")
        assert cli.main(["generate", str(bad)]) == 2

    def test_missing_config_exit_code(self, tmp_path):
        assert cli.main(["generate", str(tmp_path / "nope.json")]) == 2

    def test_runtime_failure_exit_code(self, tmp_path):
        assert cli.main(["pod", str(tmp_path / "missing.csv"),
                         "-o", str(tmp_path / "out")]) == 3


class TestCliCalibrate:
    CALIB = DetectorCalibration(gain=1.5, darkfield=100.0, darkfield_var=25.0)

    def write_series(self, directory, intensity, n_frames, seed_base):
        directory.mkdir(parents=True)
        for i in range(n_frames):
            frame = sample_noisy(ImageGrid(np.full((32, 32), intensity)),
                                 self.CALIB, SeedSpec(seed_base, i))
            write_image(frame, directory / f"frame_{i:04d}")

    def write_manifest(self, tmp_path, with_dark=True):
        k = 2.0
        doc = {"levels": []}
        if with_dark:
            self.write_series(tmp_path / "dark", 0.0, 60, 9000)
            doc["darkfield"] = {"dir": "dark", "exposure_ms": 100.0}
        for j, t in enumerate((50.0, 100.0, 200.0)):
            name = f"level_{int(t)}"
            self.write_series(tmp_path / name, k * t, 60, 9100 + j)
            doc["levels"].append({"dir": name, "exposure_ms": t, "id": name})
        path = tmp_path / "calib_manifest.json"
        path.write_text(json.dumps(doc, indent=1))
        return path

    def test_calibrate_round_trip(self, tmp_path):
        manifest = self.write_manifest(tmp_path)
        out = tmp_path / "calibration.json"
        assert cli.main(["calibrate", str(manifest), "-o", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["gain"] == pytest.approx(1.5, rel=0.25)
        assert doc["darkfield"] == pytest.approx(100.0, abs=1.0)
        assert doc["darkfield_var"] == pytest.approx(25.0, rel=0.30)
        assert doc["flux"]["k"] == pytest.approx(2.0, rel=0.05)

    def test_calibrate_deterministic(self, tmp_path):
        manifest = self.write_manifest(tmp_path)
        out1, out2 = tmp_path / "c1.json", tmp_path / "c2.json"
        assert cli.main(["calibrate", str(manifest), "-o", str(out1)]) == 0
        assert cli.main(["calibrate", str(manifest), "-o", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()

    def test_missing_darkfield_exit_code(self, tmp_path):
        manifest = self.write_manifest(tmp_path, with_dark=False)
        assert cli.main(["calibrate", str(manifest),
                         "-o", str(tmp_path / "c.json")]) == 2
