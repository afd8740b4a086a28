import json
from pathlib import Path

import numpy as np
import pytest

from motionhmm import dataset as ds
from motionhmm.cli import main

SMALL_MODEL = ["--states", "3", "--iterations", "3"]
FEATS = ["--features", "joint_pos", "--no-normalize", "--no-smooth"]


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(["synth", "--classes", "3", "--sequences", "6", "--length", "30", "--dim", "3",
                 "--states", "3", "--separation", "3", "--seed", "1", "--out", str(out)])
    assert code == 0
    return out


def manifest(d: Path) -> str:
    return str(d / "manifest.json")


class TestSynthCommand:
    def test_file_count(self, tmp_path):
        assert main(["synth", "--classes", "3", "--sequences", "20", "--length", "10", "--out", str(tmp_path)]) == 0
        assert len(list(tmp_path.glob("*.csv"))) == 60
        assert len(json.loads((tmp_path / "manifest.json").read_text())) == 60

    def test_explicit_combos(self, tmp_path):
        combos = json.dumps([["walk"], ["walk", "fast"]])
        assert main(["synth", "--classes", combos, "--sequences", "2", "--length", "10", "--out", str(tmp_path)]) == 0
        assert ds.load(tmp_path / "manifest.json").vocabulary.labels == ("fast", "walk")

    def test_bad_classes(self, tmp_path):
        assert main(["synth", "--classes", "[1,", "--out", str(tmp_path)]) == 2


class TestDatasetCommand:
    def test_validate(self, synth_dir, capsys):
        assert main(["dataset", "validate", manifest(synth_dir)]) == 0
        assert "18 samples" in capsys.readouterr().out

    def test_missing_file_exit_one(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        assert main(["dataset", "validate", str(missing)]) == 1
        assert str(missing) in capsys.readouterr().err

    def test_invalid_exit_two(self, tmp_path):
        (tmp_path / "m.json").write_text("{}")
        assert main(["dataset", "validate", str(tmp_path / "m.json")]) == 2

    def test_report_counts(self, synth_dir, tmp_path):
        assert main(["dataset", "report", manifest(synth_dir), "--out", str(tmp_path)]) == 0
        lines = [l for l in (tmp_path / "labels.csv").read_text().splitlines() if not l.startswith("#")]
        assert lines == ["label,samples", "label0,6", "label1,6", "label2,6"]
        assert (tmp_path / "labels.png").stat().st_size > 0
        assert (tmp_path / "report.txt").read_text().startswith("samples: 18")

    def test_export_roundtrip(self, synth_dir, tmp_path):
        assert main(["dataset", "export", manifest(synth_dir), "--out", str(tmp_path / "a.json")]) == 0
        assert ds.load(tmp_path / "a.json") == ds.load(manifest(synth_dir))


class TestTrainClassify:
    def test_roundtrip(self, synth_dir, tmp_path, capsys):
        bundle = tmp_path / "bundle"
        assert main(["train", "multilabel", "--dataset", manifest(synth_dir), *FEATS, *SMALL_MODEL,
                     "--decision", "max", "--out", str(bundle)]) == 0
        motion = synth_dir / "synth_c01_s000.csv"
        capsys.readouterr()
        assert main(["classify", "--bundle", str(bundle), "--motion", str(motion), "--json"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["labels"] == ["label1"]
        assert len(doc["loglikelihoods"]) == 3

    def test_fhmm_accepted(self, synth_dir, tmp_path):
        assert main(["train", "powerset", "--dataset", manifest(synth_dir), *FEATS, "--model", "fhmm",
                     "--chains", "2", "--states", "2", "--iterations", "2", "--out", str(tmp_path / "b")]) == 0

    def test_chains_with_hmm_is_usage_error(self, synth_dir, tmp_path):
        assert main(["train", "powerset", "--dataset", manifest(synth_dir), *FEATS, "--chains", "2",
                     "--out", str(tmp_path / "b")]) == 2

    def test_conflicting_delta(self, synth_dir, tmp_path):
        assert main(["train", "powerset", "--dataset", manifest(synth_dir), *FEATS, "--topology",
                     "left_to_right:1", "--delta", "2", "--out", str(tmp_path / "b")]) == 2

    def test_unknown_channel_exit_two(self, synth_dir, tmp_path):
        bundle = tmp_path / "bundle"
        assert main(["train", "powerset", "--dataset", manifest(synth_dir), *FEATS, *SMALL_MODEL,
                     "--out", str(bundle)]) == 0
        other = ds.MotionRecord("x", 100.0, (("marker_pos", 3),), np.zeros((5, 3)))
        ds.write_motion(other, tmp_path / "x.csv")
        assert main(["classify", "--bundle", str(bundle), "--motion", str(tmp_path / "x.csv")]) == 2

    def test_missing_bundle_exit_one(self, tmp_path, synth_dir):
        assert main(["classify", "--bundle", str(tmp_path / "none"), "--motion",
                     str(synth_dir / "synth_c00_s000.csv")]) == 1

    def test_unknown_feature_exit_two(self, synth_dir, tmp_path):
        assert main(["train", "powerset", "--dataset", manifest(synth_dir), "--features", "bogus",
                     "--out", str(tmp_path / "b")]) == 2

    def test_bad_flag_exit_two(self):
        assert main(["train", "--nope"]) == 2


def _csv_body(path: Path) -> list[str]:
    return path.read_text().splitlines()


class TestEval:
    def test_outputs(self, synth_dir, tmp_path):
        out = tmp_path / "eval"
        assert main(["eval", "kfold", "--system", "powerset", "--dataset", manifest(synth_dir), *FEATS,
                     *SMALL_MODEL, "--seed", "3", "--out", str(out)]) == 0
        lines = _csv_body(out / "results.csv")
        assert lines[0].startswith("# motionhmm: ") and lines[0].endswith("eval kfold")
        assert lines[1] == "# seed: 3"
        assert lines[2].startswith("# config: {")
        assert lines[3] == ("feature_set,system,model,topology,states,chains,decision,"
                            "f1,precision,recall,total_accuracy")
        for name in ("per_label.csv", "per_class.csv", "folds.csv", "results.txt", "f1.png"):
            assert (out / name).exists()


class TestGridSearch:
    def test_rows(self, synth_dir, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"axes": {"penalty": ["l1", "l2"], "C": [1e-3, 1.0]}}))
        out = tmp_path / "g"
        assert main(["grid-search", "--dataset", manifest(synth_dir), "--grid", str(grid), *FEATS,
                     *SMALL_MODEL, "--out", str(out)]) == 0
        rows = [l for l in _csv_body(out / "grid.csv") if not l.startswith("#")]
        assert len(rows) == 1 + 4
        assert (out / "grid.png").exists()

    def test_unknown_axis(self, synth_dir, tmp_path):
        grid = tmp_path / "grid.json"
        grid.write_text(json.dumps({"bogus": [1, 2]}))
        assert main(["grid-search", "--dataset", manifest(synth_dir), "--grid", str(grid), *FEATS,
                     "--out", str(tmp_path / "g")]) == 2


class TestSelectFeatures:
    def test_trace(self, tmp_path):
        from motionhmm.synth import selection_fixture

        data = selection_fixture(sequences=6, length=20)
        path = ds.write_manifest(data, tmp_path / "sel")
        out = tmp_path / "out"
        assert main(["select-features", "--dataset", str(path), "--features",
                     "root_pos,com_pos,marker_pos", "--no-normalize", "--no-smooth",
                     "--states", "2", "--iterations", "2", "--out", str(out)]) == 0
        rows = [l for l in _csv_body(out / "trace.csv") if not l.startswith("#")]
        assert rows[0] == "round,score,dimension,dropped_feature"
        assert len(rows) == 1 + 3
        assert [r.split(",")[2] for r in rows[1:]] == ["9", "6", "3"]
        assert (out / "trace.png").exists() and (out / "trace.txt").exists()


class TestThreadsEnv:
    def test_env_default(self, synth_dir, monkeypatch, capsys):
        monkeypatch.setenv("MOTIONHMM_THREADS", "2")
        assert main(["dataset", "validate", manifest(synth_dir)]) == 0
        monkeypatch.setenv("MOTIONHMM_THREADS", "many")
        assert main(["dataset", "validate", manifest(synth_dir)]) == 2

    def test_zero_threads(self, synth_dir):
        assert main(["--threads", "0", "dataset", "validate", manifest(synth_dir)]) == 2
