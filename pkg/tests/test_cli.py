import json

import numpy as np
import pytest

from brainage import (
    InputOutputError,
    ValidationError,
    read_manifest,
    read_nifti,
    read_predictions,
)
from brainage.cli import DEFAULT_CONFIG, load_config, main

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"

# small enough that every command finishes in seconds
PARAMS8 = {
    "dims": [8, 8, 8],
    "brain_radii": [3.0, 3.0, 3.0],
    "ventricle_base_radius": 0.5,
    "ventricle_growth_per_year": 0.02,
    "noise_sd": 0.02,
}


def write_config(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def stderr_error(capsys):
    err = capsys.readouterr().err.strip().splitlines()[-1]
    return json.loads(err)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def cohort_dir(ws):
    cfg = write_config(ws / "cohort.json",
                       {"phantom": {"n": 12, "params": PARAMS8}})
    out = ws / "cohort"
    assert main(["phantom", "--config", cfg, "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def cnn_run(ws, cohort_dir):
    cfg = write_config(ws / "cnn.json", {
        "architecture": {"num_blocks": 2, "base_feature_maps": 2},
        "train": {"epochs": 2, "restarts": 1, "batch_size": 4},
        "split": {"counts": [8, 2, 2]},
    })
    out = ws / "cnn_run"
    rc = main(["train", "--manifest", str(cohort_dir / "manifest.csv"),
               "--config", cfg, "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def gpr_run(ws, cohort_dir):
    cfg = write_config(ws / "gpr.json", {
        "model": "gpr",
        "split": {"counts": [8, 2, 2]},
    })
    out = ws / "gpr_run"
    rc = main(["train", "--manifest", str(cohort_dir / "manifest.csv"),
               "--config", cfg, "--out", str(out)])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def cnn_predictions(ws, cohort_dir, cnn_run):
    out = ws / "pred_cnn"
    rc = main(["predict", "--manifest", str(cohort_dir / "manifest.csv"),
               "--model", str(cnn_run / "model.bage"), "--out", str(out)])
    assert rc == 0
    return out / "predictions.csv"


class TestPhantomCommand:
    def test_manifest_and_volumes(self, cohort_dir):
        rows = read_manifest(cohort_dir / "manifest.csv")
        assert len(rows) == 12
        for row in rows:
            vol_path = cohort_dir / row.volume_path
            assert vol_path.exists()
            assert row.volume_path.startswith("volumes/")
        first = read_nifti(cohort_dir / rows[0].volume_path)
        assert first.dims == (8, 8, 8)

    def test_stdout_summary(self, ws, capsys):
        cfg = write_config(ws / "tiny.json",
                           {"phantom": {"n": 2, "params": PARAMS8}})
        out = ws / "tiny_cohort"
        assert main(["phantom", "--config", cfg, "--out", str(out)]) == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("phantom: kind=cohort volumes=2")

    def test_twins_kind(self, ws):
        cfg = write_config(ws / "twins.json", {"phantom": {
            "kind": "twins",
            "params": PARAMS8,
            "twins": {"n_mz": 3, "n_dz": 3},
        }})
        out = ws / "twin_cohort_smoke"
        assert main(["phantom", "--config", cfg, "--out", str(out)]) == 0
        rows = read_manifest(out / "manifest.csv")
        assert len(rows) == 12
        assert {r.zygosity for r in rows} == {"MZ", "DZ"}

    def test_bad_kind_exits_2(self, ws, capsys):
        cfg = write_config(ws / "badkind.json", {"phantom": {"kind": "nope"}})
        rc = main(["phantom", "--config", cfg,
                   "--out", str(ws / "badkind_out")])
        assert rc == 2
        err = stderr_error(capsys)
        assert err["error"] == "ValidationError"
        assert err["exit_code"] == 2


class TestTrainCommand:
    def test_cnn_outputs(self, cnn_run):
        assert (cnn_run / "model.bage").read_bytes()[:4] == b"BAGE"
        split_lines = (cnn_run / "split.csv").read_text().splitlines()
        assert split_lines[0] == "subject_id,split"
        assert len(split_lines) == 13
        history_lines = (cnn_run / "history.csv").read_text().splitlines()
        assert history_lines[0] == "epoch,learning_rate,train_mae,val_mae"
        assert len(history_lines) == 3  # 2 epochs
        with open(cnn_run / "training_curves.png", "rb") as fh:
            assert fh.read(8) == PNG_MAGIC

    def test_gpr_outputs(self, gpr_run):
        assert (gpr_run / "model.npz").read_bytes()[:2] == b"PK"
        history_lines = (gpr_run / "history.csv").read_text().splitlines()
        assert len(history_lines) == 2  # single fit row
        assert not (gpr_run / "training_curves.png").exists()

    def test_fixed_seed_runs_are_identical(self, ws, cohort_dir, capsys):
        cfg = write_config(ws / "det.json", {
            "architecture": {"num_blocks": 2, "base_feature_maps": 2},
            "train": {"epochs": 2, "restarts": 1, "batch_size": 4},
            "split": {"counts": [8, 2, 2]},
        })
        outs = []
        for name in ("det_a", "det_b"):
            out = ws / name
            rc = main(["train", "--manifest",
                       str(cohort_dir / "manifest.csv"), "--config", cfg,
                       "--seed", "123", "--out", str(out), "--no-figures"])
            assert rc == 0
            outs.append(out)
        assert capsys.readouterr().out.count("train: model=cnn") == 2
        a, b = outs
        assert (a / "model.bage").read_bytes() == (b / "model.bage").read_bytes()
        assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()

    def test_different_seed_changes_model(self, ws, cohort_dir, cnn_run):
        cfg = write_config(ws / "det2.json", {
            "architecture": {"num_blocks": 2, "base_feature_maps": 2},
            "train": {"epochs": 2, "restarts": 1, "batch_size": 4},
            "split": {"counts": [8, 2, 2]},
        })
        out = ws / "det_other_seed"
        rc = main(["train", "--manifest", str(cohort_dir / "manifest.csv"),
                   "--config", cfg, "--seed", "77", "--out", str(out),
                   "--no-figures"])
        assert rc == 0
        assert (out / "model.bage").read_bytes() != \
            (cnn_run / "model.bage").read_bytes()

    def test_infeasible_counts_exit_2(self, ws, cohort_dir, capsys):
        cfg = write_config(ws / "badsplit.json",
                           {"split": {"counts": [5, 1, 1]}})
        rc = main(["train", "--manifest", str(cohort_dir / "manifest.csv"),
                   "--config", cfg, "--out", str(ws / "badsplit_out")])
        assert rc == 2
        assert "sum" in stderr_error(capsys)["message"]

    def test_missing_manifest_exit_4(self, ws, capsys):
        rc = main(["train", "--manifest", str(ws / "absent.csv"),
                   "--out", str(ws / "absent_out")])
        assert rc == 4
        err = stderr_error(capsys)
        assert err["error"] == "InputOutputError"
        assert err["exit_code"] == 4


class TestPredictCommand:
    def test_cnn_predictions(self, cohort_dir, cnn_predictions):
        records = read_predictions(cnn_predictions)
        rows = read_manifest(cohort_dir / "manifest.csv")
        assert [r.subject_id for r in records] == \
            [r.subject_id for r in rows]
        for rec in records:
            assert rec.brain_pad == pytest.approx(
                rec.predicted_age - rec.chronological_age, abs=1e-9)

    def test_gpr_predictions(self, ws, cohort_dir, gpr_run, capsys):
        out = ws / "pred_gpr"
        rc = main(["predict", "--manifest", str(cohort_dir / "manifest.csv"),
                   "--model", str(gpr_run / "model.npz"), "--out", str(out)])
        assert rc == 0
        assert "predict: model=gpr n=12" in capsys.readouterr().out
        assert len(read_predictions(out / "predictions.csv")) == 12

    def test_garbage_model_exit_2(self, ws, cohort_dir, capsys):
        bad = ws / "junk.model"
        bad.write_bytes(b"JUNKDATA" * 4)
        rc = main(["predict", "--manifest", str(cohort_dir / "manifest.csv"),
                   "--model", str(bad), "--out", str(ws / "junk_out")])
        assert rc == 2
        assert stderr_error(capsys)["error"] == "FormatError"

    def test_missing_model_exit_4(self, ws, cohort_dir, capsys):
        rc = main(["predict", "--manifest", str(cohort_dir / "manifest.csv"),
                   "--model", str(ws / "ghost.bage"),
                   "--out", str(ws / "ghost_out")])
        assert rc == 4
        assert stderr_error(capsys)["error"] == "InputOutputError"


class TestEvaluateCommand:
    def test_metrics_and_figure(self, ws, cnn_predictions, capsys):
        out = ws / "eval"
        rc = main(["evaluate", "--predictions", str(cnn_predictions),
                   "--out", str(out)])
        assert rc == 0
        line = capsys.readouterr().out.strip()
        assert line.startswith("evaluate: n=12 mae=")
        with open(out / "predicted_vs_age.png", "rb") as fh:
            assert fh.read(8) == PNG_MAGIC

        table = dict(
            row.split(",")[:2]
            for row in (out / "metrics.csv").read_text().splitlines()[1:]
        )
        records = read_predictions(cnn_predictions)
        preds = np.array([r.predicted_age for r in records])
        ages = np.array([r.chronological_age for r in records])
        assert float(table["mae"]) == pytest.approx(
            np.mean(np.abs(preds - ages)), abs=1e-9)
        assert float(table["mean_baseline_mae"]) == pytest.approx(
            np.mean(np.abs(ages - ages.mean())), abs=1e-9)
        assert int(table["n"]) == 12

    def test_no_figures_flag(self, ws, cnn_predictions):
        out = ws / "eval_nofig"
        rc = main(["evaluate", "--predictions", str(cnn_predictions),
                   "--out", str(out), "--no-figures"])
        assert rc == 0
        assert (out / "metrics.csv").exists()
        assert not (out / "predicted_vs_age.png").exists()

    def test_missing_predictions_exit_4(self, ws, capsys):
        rc = main(["evaluate", "--predictions", str(ws / "none.csv"),
                   "--out", str(ws / "eval_none")])
        assert rc == 4
        assert stderr_error(capsys)["exit_code"] == 4


@pytest.fixture(scope="module")
def twin_flow(ws, gpr_run):
    cfg = write_config(ws / "twin_flow.json", {"phantom": {
        "kind": "twins",
        "params": PARAMS8,
        "twins": {"n_mz": 6, "n_dz": 6, "age_range": [30.0, 70.0]},
    }})
    cohort = ws / "twin_cohort"
    assert main(["phantom", "--config", cfg, "--out", str(cohort)]) == 0
    pred = ws / "twin_pred"
    rc = main(["predict", "--manifest", str(cohort / "manifest.csv"),
               "--model", str(gpr_run / "model.npz"), "--out", str(pred)])
    assert rc == 0
    return cohort / "manifest.csv", pred / "predictions.csv"


class TestHeritabilityCommand:
    def test_outputs(self, ws, twin_flow, capsys):
        manifest, predictions = twin_flow
        cfg = write_config(ws / "her.json", {"heritability": {"bootstrap": 0}})
        out = ws / "her"
        rc = main(["heritability", "--manifest", str(manifest),
                   "--predictions", str(predictions), "--config", cfg,
                   "--out", str(out)])
        assert rc == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0].startswith("heritability[unadjusted]: selected=")
        assert lines[1].startswith("heritability[age_corrected]: selected=")

        rows = (out / "heritability.csv").read_text().splitlines()
        assert rows[0].startswith("panel,fit,model,")
        assert len(rows) == 5  # 2 panels x (selected, forced_ae)
        cells = [r.split(",") for r in rows[1:]]
        assert {c[0] for c in cells} == {"unadjusted", "age_corrected"}
        forced = [c for c in cells if c[1] == "forced_ae"]
        assert all(c[2] == "AE" for c in forced)
        with open(out / "variance_components.png", "rb") as fh:
            assert fh.read(8) == PNG_MAGIC

    def test_manifest_without_pairs_exit_2(self, ws, cohort_dir,
                                           cnn_predictions, capsys):
        rc = main(["heritability",
                   "--manifest", str(cohort_dir / "manifest.csv"),
                   "--predictions", str(cnn_predictions),
                   "--out", str(ws / "her_nopairs")])
        assert rc == 2
        assert "twin" in stderr_error(capsys)["message"]


@pytest.fixture(scope="module")
def rescan_flow(ws, gpr_run):
    cfg = write_config(ws / "rescan_flow.json", {"phantom": {
        "kind": "rescan",
        "n": 6,
        "age_range": [30.0, 70.0],
        "params": PARAMS8,
    }})
    cohort = ws / "rescan_cohort"
    assert main(["phantom", "--config", cfg, "--out", str(cohort)]) == 0
    pred = ws / "rescan_pred"
    rc = main(["predict", "--manifest", str(cohort / "manifest.csv"),
               "--model", str(gpr_run / "model.npz"), "--out", str(pred)])
    assert rc == 0
    return pred / "predictions.csv"


class TestReliabilityCommand:
    def test_outputs(self, ws, rescan_flow, capsys):
        out = ws / "rel"
        rc = main(["reliability", "--predictions", str(rescan_flow),
                   "--out", str(out)])
        assert rc == 0
        assert capsys.readouterr().out.startswith("reliability: icc=")
        table = dict(
            row.split(",")[:2]
            for row in (out / "reliability.csv").read_text().splitlines()[1:]
        )
        assert int(table["n_targets"]) == 6
        assert int(table["n_raters"]) == 2
        assert table["defined"] in ("true", "false")
        with open(out / "session_agreement.png", "rb") as fh:
            assert fh.read(8) == PNG_MAGIC

    def test_missing_session_exit_2(self, ws, cnn_predictions, capsys):
        rc = main(["reliability", "--predictions", str(cnn_predictions),
                   "--out", str(ws / "rel_bad"), "--session-b", "9"])
        assert rc == 2
        assert "sessions" in stderr_error(capsys)["message"]


class TestGradcheckCommand:
    def test_all_fragments_pass(self, capsys):
        assert main(["gradcheck", "--seed", "0"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 6
        assert all(line.startswith("gradcheck ") for line in lines)
        assert all("PASS" in line for line in lines)
        names = {line.split()[1].rstrip(":") for line in lines}
        assert names == {"linear", "batchnorm3d", "conv3d", "maxpool3d",
                         "mae_loss", "two_block_composite"}


class TestLoadConfig:
    def test_defaults_when_no_path(self):
        config = load_config(None)
        assert config == DEFAULT_CONFIG
        assert config is not DEFAULT_CONFIG  # deep copy, not shared

    def test_deep_merge_preserves_siblings(self, tmp_path):
        cfg = write_config(tmp_path / "c.json",
                           {"train": {"epochs": 7}})
        config = load_config(cfg)
        assert config["train"]["epochs"] == 7
        assert config["train"]["momentum"] == 0.9
        assert config["architecture"]["num_blocks"] == 5

    def test_unknown_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"banana": 1})
        with pytest.raises(ValidationError, match="banana"):
            load_config(cfg)

    def test_unknown_nested_key_rejected(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"train": {"epoochs": 7}})
        with pytest.raises(ValidationError, match="train.epoochs"):
            load_config(cfg)

    def test_phantom_params_replaced_wholesale(self, tmp_path):
        cfg = write_config(tmp_path / "c.json",
                           {"phantom": {"params": {"noise_sd": 0.0}}})
        config = load_config(cfg)
        assert config["phantom"]["params"] == {"noise_sd": 0.0}

    def test_scanner_effect_leaf(self, tmp_path):
        cfg = write_config(tmp_path / "c.json",
                           {"phantom": {"scanner_effect": {"gain": 1.1}}})
        config = load_config(cfg)
        assert config["phantom"]["scanner_effect"] == {"gain": 1.1}

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{oops", encoding="utf-8")
        with pytest.raises(ValidationError, match="JSON"):
            load_config(p)

    def test_non_object_json(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", [1, 2, 3])
        with pytest.raises(ValidationError, match="object"):
            load_config(cfg)

    def test_bad_model_value(self, tmp_path):
        cfg = write_config(tmp_path / "c.json", {"model": "svm"})
        with pytest.raises(ValidationError, match="svm"):
            load_config(cfg)

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputOutputError):
            load_config(tmp_path / "absent.json")
