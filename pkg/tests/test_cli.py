"""End-to-end command-line checks on a small synthetic corpus."""

import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from stedq.cli import cli

BIN_WEIGHTS = "0.1,0.2,0.3,0.2,0.2"


def _run(args, expect=0):
    result = CliRunner().invoke(cli, args, catch_exceptions=False)
    assert result.exit_code == expect, result.output
    return result


def _dir_bytes(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes()
            for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """synth + split + train, shared by the read-only command tests."""
    root = tmp_path_factory.mktemp("corpus")
    _run(["synth", "--n", "200", "--seed", "3", "--size", "16",
          "--bin-weights", BIN_WEIGHTS, "--out", str(root / "data")])
    _run(["split", "--manifest", str(root / "data" / "manifest.csv"),
          "--seed", "1", "--out", str(root / "split")])
    _run(["train", "--split-dir", str(root / "split"),
          "--channels", "2,2,2,2,2,2", "--dense", "4,1", "--pool-stride", "1",
          "--batch-size", "32", "--max-epochs", "3", "--seed", "0",
          "--out", str(root / "run")])
    return root


class TestSynth:
    def test_same_seed_byte_identical_directories(self, tmp_path):
        for name in ("a", "b"):
            _run(["synth", "--n", "40", "--seed", "7", "--size", "16",
                  "--out", str(tmp_path / name)])
        a = _dir_bytes(tmp_path / "a" / "images")
        b = _dir_bytes(tmp_path / "b" / "images")
        assert a == b
        assert (tmp_path / "a" / "manifest.csv").read_bytes() == \
               (tmp_path / "b" / "manifest.csv").read_bytes()

    def test_emits_run_manifest(self, corpus):
        manifest = json.loads((corpus / "data" / "run_manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["results"]["n_items"] == 200


class TestSplit:
    def test_sizes_and_manifest(self, corpus):
        manifest = json.loads((corpus / "split" / "run_manifest.json").read_text())
        assert manifest["results"]["sizes"] == {"train": 160, "validation": 20, "test": 20}
        for name in ("train", "validation", "test"):
            assert (corpus / "split" / f"{name}.csv").exists()

    def test_split_manifests_are_loadable(self, corpus):
        from stedq.data import load_dataset
        items = load_dataset(corpus / "split" / "test.csv")
        assert len(items) == 20


class TestTrain:
    def test_outputs_exist(self, corpus):
        run = corpus / "run"
        for name in ("checkpoint.ckpt", "history.csv", "learning_curve.png",
                     "run_manifest.json"):
            assert (run / name).exists()

    def test_history_schema(self, corpus):
        with open(corpus / "run" / "history.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["epoch", "train_rmse", "val_rmse"]
        assert len(rows) - 1 == 3  # max_epochs

    def test_eval_matches_manifest_test_rmse(self, corpus):
        manifest = json.loads((corpus / "run" / "run_manifest.json").read_text())
        result = _run(["eval", "--checkpoint", str(corpus / "run" / "checkpoint.ckpt"),
                       "--manifest", str(corpus / "split" / "test.csv")])
        reported = float(result.output.split()[-1])
        assert reported == pytest.approx(manifest["results"]["test_rmse"], abs=1e-6)


class TestPredictAndBaseline:
    def test_predict_schema(self, corpus, tmp_path):
        out = tmp_path / "scores.csv"
        _run(["predict", "--checkpoint", str(corpus / "run" / "checkpoint.ckpt"),
              "--manifest", str(corpus / "split" / "test.csv"), "--out", str(out)])
        with open(out) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["path", "prediction"]
        assert len(rows) - 1 == 20
        assert all(0.0 <= float(r[1]) <= 1.0 for r in rows[1:])

    def test_baseline_draws_from_training_labels(self, corpus, tmp_path):
        out = tmp_path / "baseline.csv"
        _run(["baseline", "--train-manifest", str(corpus / "split" / "train.csv"),
              "--n", "50", "--seed", "2", "--out", str(out)])
        draws = [float(line) for line in out.read_text().splitlines()[1:]]
        from stedq.data import load_manifest_rows
        labels = {s for _p, s in load_manifest_rows(corpus / "split" / "train.csv")}
        assert len(draws) == 50
        assert all(d in labels for d in draws)


@pytest.fixture(scope="module")
def study_dir(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("study")
    _run(["simulate-study", "--checkpoint", str(corpus / "run" / "checkpoint.ckpt"),
          "--split-dir", str(corpus / "split"), "--testers", "3",
          "--seed", "5", "--out", str(out / "study")])
    return out / "study"


class TestStudyPipeline:
    def test_report_csv_schema(self, study_dir):
        with open(study_dir / "report.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["bin", "system", "mean_confusion", "std_confusion",
                           "mean_domination", "std_domination", "n_testers"]
        systems = {r[1] for r in rows[1:]}
        assert systems == {"network", "random"}
        assert len(rows) - 1 == 10  # 5 bins x 2 systems

    def test_choices_csv_schema(self, study_dir):
        for system in ("network", "random"):
            with open(study_dir / f"choices_{system}.csv") as fh:
                rows = list(csv.reader(fh))
            assert rows[0] == ["bin", "T", "P", "E"]
            assert len(rows) - 1 == 5

    def test_journals_written(self, study_dir):
        journals = list((study_dir / "journals").glob("*.jsonl"))
        assert len(journals) == 6  # 3 testers x 2 systems

    def test_report_command_renders_figures(self, study_dir, corpus, tmp_path):
        out = tmp_path / "report"
        _run(["report", "--study-dir", str(study_dir),
              "--history", str(corpus / "run" / "history.csv"),
              "--train-manifest", str(corpus / "split" / "train.csv"),
              "--out", str(out)])
        for name in ("report.csv", "choices_network.csv", "choices_random.csv",
                     "confusion_by_bin.png", "domination_by_bin.png",
                     "choices_network.png", "choices_random.png",
                     "learning_curve.png", "label_distribution.png",
                     "run_manifest.json"):
            assert (out / name).exists(), name

    def test_report_csv_identical_to_simulate_study(self, study_dir, tmp_path):
        out = tmp_path / "report2"
        _run(["report", "--study-dir", str(study_dir), "--out", str(out)])
        assert (out / "report.csv").read_bytes() == (study_dir / "report.csv").read_bytes()

    def test_same_seed_reproduces_study_csvs(self, corpus, tmp_path):
        for name in ("s1", "s2"):
            _run(["simulate-study", "--checkpoint", str(corpus / "run" / "checkpoint.ckpt"),
                  "--split-dir", str(corpus / "split"), "--testers", "2",
                  "--seed", "9", "--out", str(tmp_path / name)])
        for csv_name in ("report.csv", "choices_network.csv", "choices_random.csv"):
            assert (tmp_path / "s1" / csv_name).read_bytes() == \
                   (tmp_path / "s2" / csv_name).read_bytes()


class TestExitCodes:
    def test_missing_manifest_is_data_error(self, tmp_path):
        result = CliRunner().invoke(cli, ["split", "--manifest",
                                          str(tmp_path / "nope.csv"),
                                          "--out", str(tmp_path / "out")])
        assert result.exit_code == 3
        assert "error:" in result.output

    def test_bad_flag_is_usage_error(self):
        result = CliRunner().invoke(cli, ["synth", "--n", "not-a-number", "--out", "x"])
        assert result.exit_code == 2

    def test_unreadable_checkpoint_is_data_error(self, tmp_path):
        bogus = tmp_path / "bogus.ckpt"
        bogus.write_bytes(b"not a checkpoint at all, padded to be long enough")
        result = CliRunner().invoke(cli, ["eval", "--checkpoint", str(bogus),
                                          "--manifest", str(tmp_path / "m.csv")])
        assert result.exit_code == 3

    def test_divergence_maps_to_exit_four(self):
        import click

        from stedq.cli import guarded
        from stedq.errors import TrainingDivergedError

        @click.command()
        @guarded
        def boom():
            raise TrainingDivergedError("loss became non-finite", last_finite_epoch=2)

        result = CliRunner().invoke(boom, [])
        assert result.exit_code == 4
