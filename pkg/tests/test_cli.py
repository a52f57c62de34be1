"""End-to-end command pipeline: generate, featurize, train, eval."""

import json
import os

import numpy as np
import pytest

from driveintent.cli import main

TINY_CONFIG = """
seed: 404
label_noise: true
geometry: {lane_width: 3.5, right_center_y: 0.0, vehicle_length: 4.5, vehicle_width: 1.8}
sensor: {detection_radius: 50.0, pos_noise_std: 0.1, vel_noise_std: 0.1}
profiles: {count: 2}
split: {train_fraction: 0.7}
grid:
  ego_speeds: [16.5, 17.5]
  ego_lanes: [right, left]
  episode_duration: 20.0
  replicates: 1
  patterns:
    - name: cruise
      duration: 12.0
      vehicles:
        - {gap: 45.0, lane: same, speed: {ego: 2.5}}
    - name: brake
      vehicles:
        - {gap: 42.0, lane: same, speed: {ego: 0.0}, final_speed: {ego: -5.0},
           ramp_start: 2.0, ramp_duration: 2.0}
    - name: slow
      vehicles:
        - {gap: 38.0, lane: same, speed: 14.5}
train:
  defaults:
    svm: {lam: 0.0001, epochs: 4}
    rf: {n_trees: 10, max_depth: 8, min_leaf: 5}
    lr: {l2: 0.01, max_iter: 150}
"""


def tree_bytes(root):
    """{relative path: file bytes} for a whole directory tree."""
    out = {}
    for dirpath, _, files in os.walk(root):
        for name in files:
            full = os.path.join(dirpath, name)
            out[os.path.relpath(full, root)] = open(full, "rb").read()
    return out


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One full tiny pipeline run shared by the read-only assertions."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "tiny.yaml"
    cfg.write_text(TINY_CONFIG)
    gen = root / "gen"
    feat = root / "feat"
    train = root / "train"
    ev = root / "eval"
    assert main(["generate", "--config", str(cfg), "--out-dir", str(gen)]) == 0
    assert (
        main(
            [
                "featurize",
                "--config",
                str(cfg),
                "--traces",
                str(gen / "traces"),
                "--out-dir",
                str(feat),
            ]
        )
        == 0
    )
    for algo in ("lr", "rf"):
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(cfg),
                    "--dataset",
                    str(feat),
                    "--algo",
                    algo,
                    "--out-dir",
                    str(train),
                ]
            )
            == 0
        )
    assert (
        main(
            [
                "eval",
                "--config",
                str(cfg),
                "--model",
                str(train / "model_rf.json"),
                "--dataset",
                str(feat),
                "--traces",
                str(gen / "traces"),
                "--out-dir",
                str(ev),
            ]
        )
        == 0
    )
    return {"root": root, "cfg": cfg, "gen": gen, "feat": feat, "train": train, "eval": ev}


class TestGenerate:
    def test_outputs_present(self, pipeline):
        gen = pipeline["gen"]
        assert (gen / "summary.txt").is_file()
        assert (gen / "manifest.json").is_file()
        traces = list((gen / "traces").glob("*.jsonl"))
        # 2 profiles x (3 patterns x 2 speeds x 2 lanes) x 1 replicate
        assert len(traces) == 24

    def test_manifest_records_run_inputs(self, pipeline):
        doc = json.loads((pipeline["gen"] / "manifest.json").read_text())
        assert doc["command"] == "generate"
        assert doc["seed"] == 404
        assert doc["label_noise"] is True
        assert doc["episode_count"] == 24
        assert len(doc["profiles"]) == 2
        assert doc["config"]["grid"]["replicates"] == 1

    def test_rerun_is_byte_identical(self, pipeline):
        other = pipeline["root"] / "gen2"
        assert (
            main(["generate", "--config", str(pipeline["cfg"]), "--out-dir", str(other)])
            == 0
        )
        a = tree_bytes(pipeline["gen"])
        b = tree_bytes(other)
        assert a.keys() == b.keys()
        for rel in a:
            assert a[rel] == b[rel], f"{rel} differs between reruns"

    def test_seed_flag_changes_traces(self, pipeline, tmp_path):
        other = tmp_path / "gen-reseeded"
        assert (
            main(
                [
                    "generate",
                    "--config",
                    str(pipeline["cfg"]),
                    "--seed",
                    "405",
                    "--out-dir",
                    str(other),
                ]
            )
            == 0
        )
        a = tree_bytes(pipeline["gen"])
        b = tree_bytes(other)
        assert any(a[rel] != b[rel] for rel in a if rel in b and rel.endswith(".jsonl"))


class TestFeaturize:
    def test_outputs_present(self, pipeline):
        feat = pipeline["feat"]
        for name in ("train.csv", "test.csv", "normalizer.json", "split.txt",
                      "summary.txt", "manifest.json"):
            assert (feat / name).is_file(), name

    def test_rerun_is_byte_identical(self, pipeline):
        other = pipeline["root"] / "feat2"
        assert (
            main(
                [
                    "featurize",
                    "--config",
                    str(pipeline["cfg"]),
                    "--traces",
                    str(pipeline["gen"] / "traces"),
                    "--out-dir",
                    str(other),
                ]
            )
            == 0
        )
        a = tree_bytes(pipeline["feat"])
        b = tree_bytes(other)
        assert a.keys() == b.keys()
        for rel in a:
            assert a[rel] == b[rel], f"{rel} differs between reruns"

    def test_split_respects_train_fraction(self, pipeline):
        lines = (pipeline["feat"] / "split.txt").read_text().splitlines()
        rows = [l.split("\t") for l in lines[1:] if l.strip()]
        n_train = sum(1 for _, part in rows if part == "train")
        n_test = sum(1 for _, part in rows if part == "test")
        assert n_train + n_test == 24
        assert n_train == round(24 * 0.7)

    def test_missing_traces_dir_is_a_clean_error(self, pipeline, tmp_path, capsys):
        rc = main(
            [
                "featurize",
                "--config",
                str(pipeline["cfg"]),
                "--traces",
                str(tmp_path / "nowhere"),
                "--out-dir",
                str(tmp_path / "out"),
            ]
        )
        assert rc == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_model_files_written(self, pipeline):
        train = pipeline["train"]
        assert (train / "model_lr.json").is_file()
        assert (train / "model_rf.json").is_file()

    def test_unknown_algorithm_lists_choices(self, pipeline, capsys):
        with pytest.raises(SystemExit) as exc:
            main(
                [
                    "train",
                    "--config",
                    str(pipeline["cfg"]),
                    "--dataset",
                    str(pipeline["feat"]),
                    "--algo",
                    "boost",
                ]
            )
        assert exc.value.code == 2
        err = capsys.readouterr().err
        assert "svm" in err and "rf" in err and "lr" in err

    def test_model_meta_holds_training_accuracy(self, pipeline):
        doc = json.loads((pipeline["train"] / "model_rf.json").read_text())
        meta = doc["meta"]
        assert 0.0 <= meta["train_accuracy"] <= 1.0
        assert meta["train_rows"] > 0

    def test_forest_fits_training_data_at_least_as_well_as_test(self, pipeline):
        meta = json.loads((pipeline["train"] / "model_rf.json").read_text())["meta"]
        rows = (pipeline["eval"] / "accuracy.csv").read_text().splitlines()
        cells = dict(zip(rows[0].split(","), rows[1].split(",")))
        assert cells["algo"] == "rf"
        overall = float(cells["overall"])
        assert meta["train_accuracy"] >= overall - 1e-9


class TestEval:
    EXPECTED = (
        "report.txt",
        "accuracy.csv",
        "confusion.csv",
        "timing.csv",
        "timing_samples.csv",
        "transitions.csv",
        "lateral_hist.csv",
        "probability_trace.csv",
        "manifest.json",
    )

    def test_outputs_present(self, pipeline):
        ev = pipeline["eval"]
        for name in self.EXPECTED:
            assert (ev / name).is_file(), name
        pngs = sorted(p.name for p in ev.glob("*.png"))
        assert pngs == [
            "rf_confusion.png",
            "rf_lateral_dev.png",
            "rf_probability_trace.png",
            "rf_timing.png",
        ]

    def test_confusion_rows_sum_to_one(self, pipeline):
        rows = (pipeline["eval"] / "confusion.csv").read_text().splitlines()
        data = [r.split(",") for r in rows[1:]]
        # fraction rows: true mode label then three fractions
        for cells in data:
            frac = np.array([float(v) for v in cells[1:4]])
            if frac.sum() > 0:  # zero-support rows stay all-zero
                assert abs(frac.sum() - 1.0) < 1e-9

    def test_probability_trace_is_a_simplex(self, pipeline):
        rows = (pipeline["eval"] / "probability_trace.csv").read_text().splitlines()
        for line in rows[1:]:
            cells = line.split(",")
            total = float(cells[1]) + float(cells[2]) + float(cells[3])
            assert abs(total - 1.0) < 1e-9

    def test_report_text_sections(self, pipeline):
        text = (pipeline["eval"] / "report.txt").read_text()
        for token in ("overall accuracy", "confusion", "T_P", "dT_LC", "TTC_P"):
            assert token in text, token

    def test_svm_model_skips_probability_outputs(self, pipeline):
        train = pipeline["train"]
        assert (
            main(
                [
                    "train",
                    "--config",
                    str(pipeline["cfg"]),
                    "--dataset",
                    str(pipeline["feat"]),
                    "--algo",
                    "svm",
                    "--out-dir",
                    str(train),
                ]
            )
            == 0
        )
        out = pipeline["root"] / "eval-svm"
        assert (
            main(
                [
                    "eval",
                    "--config",
                    str(pipeline["cfg"]),
                    "--model",
                    str(train / "model_svm.json"),
                    "--dataset",
                    str(pipeline["feat"]),
                    "--traces",
                    str(pipeline["gen"] / "traces"),
                    "--out-dir",
                    str(out),
                ]
            )
            == 0
        )
        assert not (out / "probability_trace.csv").exists()
        assert not (out / "svm_probability_trace.png").exists()
        assert (out / "accuracy.csv").is_file()

    def test_rerun_is_byte_identical(self, pipeline):
        other = pipeline["root"] / "eval2"
        assert (
            main(
                [
                    "eval",
                    "--config",
                    str(pipeline["cfg"]),
                    "--model",
                    str(pipeline["train"] / "model_rf.json"),
                    "--dataset",
                    str(pipeline["feat"]),
                    "--traces",
                    str(pipeline["gen"] / "traces"),
                    "--out-dir",
                    str(other),
                ]
            )
            == 0
        )
        a = tree_bytes(pipeline["eval"])
        b = tree_bytes(other)
        assert a.keys() == b.keys()
        for rel in a:
            assert a[rel] == b[rel], f"{rel} differs between reruns"


class TestErrorsAndOverrides:
    def test_config_missing_section_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("seed: 1\n")
        rc = main(["generate", "--config", str(bad), "--out-dir", str(tmp_path / "o")])
        assert rc == 1
        err = capsys.readouterr().err
        assert "error:" in err and "geometry" in err or "grid" in err

    def test_out_dir_env_override(self, pipeline, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv("DRIVEINTENT_OUT_DIR", str(tmp_path))
        monkeypatch.chdir(tmp_path)
        assert main(["generate", "--config", str(pipeline["cfg"])]) == 0
        assert (tmp_path / "generate" / "summary.txt").is_file()
        assert not (tmp_path / "runs").exists()

    def test_explicit_out_dir_beats_env(self, pipeline, tmp_path, monkeypatch):
        monkeypatch.setenv("DRIVEINTENT_OUT_DIR", str(tmp_path / "env"))
        explicit = tmp_path / "explicit"
        assert (
            main(
                [
                    "generate",
                    "--config",
                    str(pipeline["cfg"]),
                    "--out-dir",
                    str(explicit),
                ]
            )
            == 0
        )
        assert (explicit / "summary.txt").is_file()
        assert not (tmp_path / "env").exists()

    def test_label_noise_flag_overrides_config(self, pipeline, tmp_path):
        off = tmp_path / "no-noise"
        assert (
            main(
                [
                    "generate",
                    "--config",
                    str(pipeline["cfg"]),
                    "--no-label-noise",
                    "--out-dir",
                    str(off),
                ]
            )
            == 0
        )
        doc = json.loads((off / "manifest.json").read_text())
        assert doc["label_noise"] is False
        # noiseless labels differ from the noisy batch somewhere
        noisy = tree_bytes(pipeline["gen"] / "traces")
        clean = tree_bytes(off / "traces")
        assert noisy.keys() == clean.keys()
        assert any(noisy[k] != clean[k] for k in noisy)
