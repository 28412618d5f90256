"""End-to-end CLI runs on a tiny bundle, exit codes, overwrite guards."""

import filecmp
import json
import shutil
from pathlib import Path

import pandas as pd
import pytest

from icurisk.cli import main

TINY = ["--n-patients", "100", "--seed", "3", "--los-median", "36",
        "--target-rate", "0.06"]


@pytest.fixture(scope="module")
def bundle(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("bundle")
    assert main(["synth", "--out", str(out)] + TINY) == 0
    return out


@pytest.fixture(scope="module")
def trained(bundle, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("train")
    code = main(["train", "--data", str(bundle), "--out", str(out),
                 "--mode", "structured_only", "--split-seed", "2",
                 "--max-epochs", "2", "--batches-per-epoch", "2",
                 "--batch-size", "64", "--warmup-epochs", "1"])
    assert code == 0
    return out


class TestSynth:
    def test_same_seed_identical_bundles(self, bundle, tmp_path):
        again = tmp_path / "again"
        assert main(["synth", "--out", str(again)] + TINY) == 0
        for name in ("icustays.csv", "chartevents.csv", "embeddings.csv",
                     "manifest.csv", "manifest_labels.csv"):
            assert filecmp.cmp(bundle / name, again / name, shallow=False), name

    def test_refuses_overwrite_without_force(self, bundle):
        assert main(["synth", "--out", str(bundle)] + TINY) == 3

    def test_force_overwrites(self, bundle, tmp_path):
        target = tmp_path / "f"
        shutil.copytree(bundle, target)
        assert main(["synth", "--out", str(target), "--force"] + TINY) == 0

    def test_resolved_config_written(self, bundle):
        text = (bundle / "config_resolved.txt").read_text()
        assert "tool.version=" in text
        assert "synth.seed=3" in text


class TestIngest:
    def test_outputs(self, bundle, tmp_path):
        out = tmp_path / "ingest"
        assert main(["ingest", "--data", str(bundle), "--out", str(out)]) == 0
        stays = pd.read_csv(out / "cohort_stays.csv")
        summary = json.loads((out / "summary.json").read_text())
        assert summary["n_retained"] == len(stays) > 0
        assert summary["n_malformed_rows"] == 0
        assert (out / "exclusion_log.csv").exists()

    def test_missing_data_dir_exit_code(self, tmp_path):
        assert main(["ingest", "--data", str(tmp_path / "nope"),
                     "--out", str(tmp_path / "o")]) == 5

    def test_schema_error_exit_code(self, bundle, tmp_path):
        broken = tmp_path / "broken"
        shutil.copytree(bundle, broken)
        frame = pd.read_csv(broken / "chartevents.csv")
        frame.drop(columns=["charttime"]).to_csv(broken / "chartevents.csv",
                                                 index=False)
        assert main(["ingest", "--data", str(broken),
                     "--out", str(tmp_path / "o2")]) == 2


class TestFeaturizeAndSample:
    def test_featurize_outputs(self, bundle, tmp_path):
        out = tmp_path / "features"
        assert main(["featurize", "--data", str(bundle), "--out", str(out),
                     "--split-seed", "2"]) == 0
        assert (out / "normalizer.json").exists()
        grids = list((out / "grids").glob("*.grid"))
        assert len(grids) > 0

    def test_sample_outputs_and_restartability(self, bundle, tmp_path):
        out1 = tmp_path / "s1"
        out2 = tmp_path / "s2"
        for out in (out1, out2):
            assert main(["sample", "--data", str(bundle), "--out", str(out),
                         "--split-seed", "2"]) == 0
        assert filecmp.cmp(out1 / "split_manifest.csv",
                           out2 / "split_manifest.csv", shallow=False)
        assert filecmp.cmp(out1 / "sample_audit.csv",
                           out2 / "sample_audit.csv", shallow=False)
        audit = pd.read_csv(out1 / "sample_audit.csv")
        assert set(audit.columns) == {"stay_id", "t", "label", "has_note",
                                      "missing_frac"}


class TestTrainEvaluate:
    def test_checkpoint_and_history(self, trained):
        assert (trained / "checkpoint.bin").exists()
        history = pd.read_csv(trained / "history.csv")
        assert list(history.columns) == ["epoch", "train_loss", "val_auroc",
                                         "val_auprc", "lr", "seconds"]
        assert len(history) == 2

    def test_structured_only_ignores_embeddings(self, bundle, trained,
                                                tmp_path):
        """Zeroing the embedding file leaves structured_only scores
        unchanged."""
        out1 = tmp_path / "e1"
        assert main(["evaluate", "--data", str(bundle),
                     "--checkpoint", str(trained / "checkpoint.bin"),
                     "--out", str(out1), "--split-seed", "2"]) == 0
        mutated = tmp_path / "mutated"
        shutil.copytree(bundle, mutated)
        emb = pd.read_csv(mutated / "embeddings.csv")
        emb.loc[:, [c for c in emb.columns if c.startswith("e")]] = 0.0
        emb.to_csv(mutated / "embeddings.csv", index=False)
        out2 = tmp_path / "e2"
        assert main(["evaluate", "--data", str(mutated),
                     "--checkpoint", str(trained / "checkpoint.bin"),
                     "--out", str(out2), "--split-seed", "2"]) == 0
        s1 = pd.read_csv(out1 / "scores_test.csv")
        s2 = pd.read_csv(out2 / "scores_test.csv")
        assert s1["score"].equals(s2["score"])

    def test_evaluate_report_shape(self, bundle, trained, tmp_path):
        out = tmp_path / "eval"
        assert main(["evaluate", "--data", str(bundle),
                     "--checkpoint", str(trained / "checkpoint.bin"),
                     "--out", str(out), "--split-seed", "2"]) == 0
        report = json.loads((out / "report.json").read_text())
        for split in ("val", "test"):
            for key in ("auroc", "auprc", "brier", "ece", "threshold", "f1",
                        "precision", "recall", "specificity", "n", "n_pos"):
                assert key in report[split]
        strata = report["missingness_strata_test"]
        assert [s["name"] for s in strata][-1] == "overall"
        assert sum(s["n"] for s in strata[:-1]) == strata[-1]["n"]

    def test_logreg_mode(self, bundle, tmp_path):
        out = tmp_path / "lr"
        assert main(["train", "--data", str(bundle), "--out", str(out),
                     "--mode", "logreg", "--split-seed", "2",
                     "--logreg-max-iter", "50"]) == 0
        ev = tmp_path / "lr_eval"
        assert main(["evaluate", "--data", str(bundle),
                     "--checkpoint", str(out / "checkpoint.bin"),
                     "--out", str(ev), "--split-seed", "2"]) == 0
        assert (ev / "scores_test.csv").exists()


class TestCalibrateReport:
    def test_calibrate_and_report(self, bundle, trained, tmp_path):
        ev = tmp_path / "ev"
        assert main(["evaluate", "--data", str(bundle),
                     "--checkpoint", str(trained / "checkpoint.bin"),
                     "--out", str(ev), "--split-seed", "2"]) == 0
        cal = tmp_path / "cal"
        assert main(["calibrate",
                     "--calibration-scores", str(ev / "scores_val.csv"),
                     "--scores", str(ev / "scores_test.csv"),
                     "--out", str(cal)]) == 0
        T = float((cal / "temperature.txt").read_text())
        assert 0.01 <= T <= 10.0
        report = json.loads((cal / "report.json").read_text())
        assert report["before"]["auroc"] == pytest.approx(
            report["after"]["auroc"], abs=1e-12)

        rep = tmp_path / "rep"
        assert main(["report", "--scores", str(ev / "scores_test.csv"),
                     "--history", str(trained / "history.csv"),
                     "--out", str(rep)]) == 0
        for name in ("roc.csv", "pr.csv", "reliability.csv",
                     "training_curve.csv"):
            assert (rep / name).exists()

    def test_missing_scores_exit_code(self, tmp_path):
        assert main(["calibrate", "--calibration-scores",
                     str(tmp_path / "none.csv"),
                     "--scores", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path / "c")]) == 5


class TestConfigFile:
    def test_file_values_used_and_flags_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("synth.n_patients=25\nsynth.seed=9\n")
        out = tmp_path / "from_file"
        assert main(["synth", "--out", str(out), "--config", str(cfg),
                     "--target-rate", "0.05"]) == 0
        manifest = pd.read_csv(out / "manifest.csv")
        patients = pd.read_csv(out / "patients.csv")
        assert len(patients) == 25
        resolved = (out / "config_resolved.txt").read_text()
        assert "synth.seed=9" in resolved
        assert "synth.target_rate=0.05" in resolved

    def test_bad_config_line_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("this is not a key value line\n")
        assert main(["synth", "--out", str(tmp_path / "x"),
                     "--config", str(cfg)]) == 3

    def test_out_dir_env_override(self, tmp_path, monkeypatch):
        out = tmp_path / "from_env"
        monkeypatch.setenv("ICURISK_OUT", str(out))
        assert main(["synth", "--n-patients", "20", "--seed", "1",
                     "--target-rate", "0.05"]) == 0
        assert (out / "icustays.csv").exists()
