import json

import numpy as np
import pytest

from aerialseg.cli import main
from aerialseg.tilestore import RawCloud, load_manifest, read_tile, save_class_map, write_ply
from aerialseg.tilestore.classmap import DALES_LIKE

TRAINING = {"epochs": 2, "samples_per_epoch": 6, "points_per_sample": 512}
SAMPLER = {"strategy": "constant-density", "radius": 10, "density": 2}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def ply_inputs(tmp_path, rng):
    labels = np.repeat(np.arange(len(DALES_LIKE.entries)), 10)
    cloud = RawCloud(rng.uniform(0, 20, (len(labels), 3)), labels, source_vocab_id="dales")
    (tmp_path / "a.ply").write_bytes(write_ply(cloud))
    save_class_map(DALES_LIKE, tmp_path / "dales.json")
    return tmp_path


@pytest.fixture
def run_config(tiny_bench, tmp_path):
    bench_dir, _ = tiny_bench
    doc = {
        "seed": 11,
        "manifests": str(bench_dir / "manifests"),
        "sampler": SAMPLER,
        "baseline_sampler": {"strategy": "naive", "n_points": 1500},
        "grids": {"one": [SAMPLER]},
        "training": TRAINING,
        "formats": ["json", "csv", "table"],
    }
    path = tmp_path / "run.json"
    path.write_text(json.dumps(doc))
    return path


class TestConvert:
    def test_creates_tile_and_manifest(self, capsys, ply_inputs):
        out = ply_inputs / "out"
        code, stdout, _ = run(capsys, "convert", ply_inputs / "a.ply", "--class-map", ply_inputs / "dales.json",
                              "--dataset-id", "D", "--subset", "s1", "--output", out)
        assert code == 0
        info = json.loads(stdout)
        assert info["points"] == 10 * len(DALES_LIKE.entries)
        manifest = load_manifest(out / "manifests" / "D.json")
        manifest.validate()
        assert [e.subset_tags for e in manifest.tiles] == [["s1"]]
        tile = read_tile(manifest.tile_path(0))
        assert tile.dataset_id == "D" and tile.unified_labels.max() <= 3

    def test_rerun_is_idempotent(self, capsys, ply_inputs):
        out = ply_inputs / "out"
        args = ["convert", ply_inputs / "a.ply", "--class-map", ply_inputs / "dales.json",
                "--dataset-id", "D", "--subset", "s1", "--output", out]
        run(capsys, *args)
        first = {p: p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}
        assert run(capsys, *args)[0] == 0
        assert {p: p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()} == first
        assert len(load_manifest(out / "manifests" / "D.json").tiles) == 1

    def test_unknown_code_fails_naming_it(self, capsys, ply_inputs):
        cloud = RawCloud(np.zeros((3, 3)), [0, 1, 77], source_vocab_id="dales")
        (ply_inputs / "bad.ply").write_bytes(write_ply(cloud))
        code, _, err = run(capsys, "convert", ply_inputs / "bad.ply", "--class-map", ply_inputs / "dales.json",
                           "--dataset-id", "D", "--subset", "s", "--output", ply_inputs / "out")
        assert code == 2
        assert "77" in err and "bad.ply" in err
        assert not (ply_inputs / "out").exists()

    def test_error_json(self, capsys, ply_inputs):
        code, _, err = run(capsys, "convert", ply_inputs / "missing.ply", "--class-map",
                           ply_inputs / "dales.json", "--dataset-id", "D", "--subset", "s", "--error-json")
        assert code == 2
        doc = json.loads(err)
        assert doc["exit_code"] == 2 and "missing.ply" in doc["message"]


class TestSample:
    def test_constant_density_sample_size(self, capsys, tiny_bench, tmp_path):
        _, paths = tiny_bench
        code, stdout, _ = run(capsys, "sample", "--manifest", paths["train"][0], "--strategy", "constant-density",
                              "--radius", 30, "--density", 1, "--count", 3, "--output", tmp_path / "s")
        assert code == 0
        assert json.loads(stdout)["points"] == [2827] * 3
        with np.load(tmp_path / "s" / "sample_0000.npz") as z:
            assert z["positions"].shape == (2827, 3)
        summary = json.loads((tmp_path / "s" / "samples.json").read_text())
        assert summary["sampler"]["density"] == 1.0 and summary["seed"] == 0

    def test_missing_manifest(self, capsys, tmp_path):
        code, _, err = run(capsys, "sample", "--manifest", tmp_path / "nope.json", "--strategy", "naive",
                           "--n-points", 10, "--output", tmp_path / "s")
        assert code == 2 and "nope.json" in err
        assert not (tmp_path / "s").exists()


class TestFitEval:
    def test_fit_eval_report(self, capsys, run_config, tmp_path):
        code, _, _ = run(capsys, "fit", "--config", run_config, "--output", tmp_path / "fit")
        assert code == 0
        model = json.loads((tmp_path / "fit" / "model.json").read_text())
        assert model["meta"]["seed"] == 11
        code, stdout, _ = run(capsys, "eval", "--model", tmp_path / "fit" / "model.json", "--config", run_config,
                              "--output", tmp_path / "eval")
        assert code == 0
        report = json.loads((tmp_path / "eval" / "report.json").read_text())
        assert report["meta"]["seed"] == 11
        assert report["leaves"] and report["tree"]["datasets"]
        assert report["groups"]["lidar"] is not None and report["groups"]["photogrammetry"] is not None
        assert report["overall"] is not None
        assert {l["subset"] for l in report["leaves"]} >= {"sparse", "medium"}
        assert (tmp_path / "eval" / "report.csv").exists() and (tmp_path / "eval" / "report.txt").exists()

        code, table, _ = run(capsys, "report", tmp_path / "eval" / "report.json")
        assert code == 0 and table == (tmp_path / "eval" / "report.txt").read_text()
        assert "Overall Photogrammetry" in table

    def test_missing_manifest_dir_writes_nothing(self, capsys, tmp_path):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"manifests": "nowhere", "sampler": SAMPLER, "output": "out"}))
        code, _, err = run(capsys, "fit", "--config", cfg)
        assert code == 2 and "nowhere" in err
        assert not (tmp_path / "out").exists()

    def test_bad_threads(self, capsys, run_config):
        assert run(capsys, "fit", "--config", run_config, "--threads", 0)[0] == 2


class TestBenchMatrix:
    def test_single_cell_equals_fit_then_eval(self, capsys, run_config, tmp_path):
        code, stdout, _ = run(capsys, "bench-matrix", "--config", run_config, "--output", tmp_path / "bm")
        assert code == 0
        assert "PC over naive" in stdout
        grid = json.loads((tmp_path / "bm" / "one.json").read_text())
        assert grid["columns"] == ["naive N=1500", "r=10 d=2"]
        rows = {r["test_set"]: r["values"] for r in grid["rows"]}
        assert rows["PC over naive"][0] == 100.0

        run(capsys, "fit", "--config", run_config, "--output", tmp_path / "f")
        run(capsys, "eval", "--model", tmp_path / "f" / "model.json", "--config", run_config,
            "--output", tmp_path / "e", "--format", "json")
        cell = tmp_path / "bm" / "cells" / "r_10_d_2"
        assert (cell / "model.json").read_bytes() == (tmp_path / "f" / "model.json").read_bytes()
        assert (cell / "report.json").read_bytes() == (tmp_path / "e" / "report.json").read_bytes()

    def test_requires_baseline(self, capsys, run_config, tmp_path):
        doc = json.loads(run_config.read_text())
        del doc["baseline_sampler"]
        run_config.write_text(json.dumps(doc))
        code, _, err = run(capsys, "bench-matrix", "--config", run_config, "--output", tmp_path / "bm")
        assert code == 2 and "baseline_sampler" in err
        assert not (tmp_path / "bm").exists()
