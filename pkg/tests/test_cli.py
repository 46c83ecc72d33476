import json

import numpy as np
import pytest

import fewshotsed.cli as cli
from fewshotsed.cli import (
    ConfigError,
    RunConfig,
    cmd_ablate,
    cmd_evaluate,
    main,
    parse_config,
    render_config,
)
from fewshotsed.fewshot import PredictedEvent, write_predictions
from fewshotsed.synth import make_demo_corpus


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Smallest corpus that exercises the full pipeline: short events keep
    the detection window cheap on CPU."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    return make_demo_corpus(root, seed=1, n_train_events=4, n_eval_files=1, n_query_events=2)


def _config_text(corpus, out_dir, epochs=1, extra=""):
    return (
        f"train_manifest = {corpus.train_manifest}\n"
        f"eval_manifest = {corpus.eval_manifest}\n"
        f"out_dir = {out_dir}\n"
        "run_name = smoke\n"
        "seed = 3\n"
        "batch_size = 16\n"
        f"epochs = {epochs}\n"
        "# a comment line\n" + extra
    )


@pytest.fixture(scope="session")
def smoke_run(tiny_corpus, tmp_path_factory):
    """One 1-epoch pretraining via the CLI, shared by the command tests."""
    out_dir = tmp_path_factory.mktemp("smoke_out")
    config_path = out_dir / "run.cfg"
    config_path.write_text(_config_text(tiny_corpus, out_dir))
    code = main(["pretrain", "--config", str(config_path)])
    assert code == 0
    return {
        "corpus": tiny_corpus,
        "out_dir": out_dir,
        "config_path": config_path,
        "checkpoint": out_dir / "smoke" / "ckpt_final",
    }


class TestConfigParsing:
    def test_round_trip(self, tiny_corpus, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text(
            _config_text(tiny_corpus, tmp_path, extra="disabled_augmentations = noise,gain\n")
        )
        config = parse_config(path)
        assert config.epochs == 1 and config.seed == 3
        assert config.disabled_augmentations == ("noise", "gain")
        rendered = tmp_path / "rendered.cfg"
        rendered.write_text(render_config(config))
        assert parse_config(rendered) == config

    def test_unknown_key(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("learning_rate = 0.1\n")
        with pytest.raises(ConfigError, match="unknown config key"):
            parse_config(path)

    def test_bad_value(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("seed = banana\n")
        with pytest.raises(ConfigError, match="bad value"):
            parse_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="does not exist"):
            parse_config(tmp_path / "absent.cfg")

    def test_module_invariants_checked_at_load(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("crop_min_frac = 0.9\ncrop_max_frac = 0.5\n")
        with pytest.raises(ConfigError):
            parse_config(path)
        path.write_text("regime = everything\n")
        with pytest.raises(ConfigError):
            parse_config(path)

    def test_simclr_epoch_default(self):
        assert RunConfig(objective="simclr").pretrain_config().epochs == 100
        assert RunConfig(objective="simclr", epochs=5).pretrain_config().epochs == 5
        assert RunConfig(objective="ce").pretrain_config().lr0 == 0.0001


class TestPretrainCommand:
    def test_outputs_exist(self, smoke_run):
        run_dir = smoke_run["out_dir"] / "smoke"
        assert (run_dir / "ckpt_final").exists()
        trace = (run_dir / "loss_trace.csv").read_text().splitlines()
        assert trace[0] == "epoch,mean_loss,lr"
        assert len(trace) == 1 + 1  # header + one epoch
        persisted = parse_config(run_dir / "config")
        assert persisted == parse_config(smoke_run["config_path"])

    def test_missing_manifest_names_path(self, tmp_path, capsys):
        config = tmp_path / "run.cfg"
        config.write_text(f"train_manifest = {tmp_path / 'absent.csv'}\n")
        code = main(["pretrain", "--config", str(config)])
        assert code != 0
        assert "absent.csv" in capsys.readouterr().err

    def test_usage_error_exit_code(self, capsys):
        assert main(["pretrain"]) == 1
        assert main(["teleport"]) == 1


class TestDetectCommand:
    def test_detect_and_determinism(self, smoke_run, tmp_path):
        corpus = smoke_run["corpus"]
        outputs = []
        for run in ("a", "b"):
            out = tmp_path / run
            config = tmp_path / f"{run}.cfg"
            config.write_text(_config_text(corpus, out))
            code = main(
                [
                    "detect",
                    "--config",
                    str(config),
                    "--checkpoint",
                    str(smoke_run["checkpoint"]),
                    "--regime",
                    "frozen",
                ]
            )
            assert code == 0
            outputs.append((out / "predictions.csv").read_bytes())
            records = [
                json.loads(line)
                for line in (out / "episodes.jsonl").read_text().splitlines()
            ]
            assert len(records) == 1
            assert {"file_id", "class_name", "window_seconds", "n_positive_patches",
                    "n_negative_patches", "final_train_accuracy"} <= records[0].keys()
        assert outputs[0] == outputs[1]

    def test_events_after_query_start(self, smoke_run, tmp_path):
        corpus = smoke_run["corpus"]
        out = tmp_path / "out"
        config = tmp_path / "run.cfg"
        config.write_text(_config_text(corpus, out))
        assert main(
            ["detect", "--config", str(config), "--checkpoint", str(smoke_run["checkpoint"])]
        ) == 0
        rows = (out / "predictions.csv").read_text().splitlines()[1:]
        records = [json.loads(l) for l in (out / "episodes.jsonl").read_text().splitlines()]
        query_start = {r["file_id"]: r["query_start"] for r in records}
        for row in rows:
            file_id, onset, offset = row.split(",")
            assert float(onset) >= query_start[file_id]
            assert float(offset) > float(onset)

    def test_bad_checkpoint_is_runtime_error(self, smoke_run, tmp_path, capsys):
        corpus = smoke_run["corpus"]
        config = tmp_path / "run.cfg"
        config.write_text(_config_text(corpus, tmp_path))
        broken = tmp_path / "broken_ckpt"
        broken.write_bytes(b"not a checkpoint")
        code = main(
            ["detect", "--config", str(config), "--checkpoint", str(broken)]
        )
        assert code == 2

    def test_invalid_regime_is_usage_error(self, smoke_run, tmp_path):
        config = tmp_path / "run.cfg"
        config.write_text(_config_text(smoke_run["corpus"], tmp_path))
        code = main(
            [
                "detect",
                "--config",
                str(config),
                "--checkpoint",
                str(smoke_run["checkpoint"]),
                "--regime",
                "all-of-them",
            ]
        )
        assert code == 1


class TestEvaluateCommand:
    def test_perfect_predictions_score_100(self, tiny_corpus, tmp_path, capsys):
        from fewshotsed.cli import _detection_targets
        from fewshotsed.corpus import load_manifest
        from fewshotsed.fewshot import support_end

        manifests = load_manifest(tiny_corpus.eval_manifest)
        events = []
        for manifest, file_events, class_name in _detection_targets(manifests):
            query_start = support_end(file_events, class_name)
            events += [
                PredictedEvent(manifest.file_id, e.onset, e.offset)
                for e in file_events
                if e.marker == "POS" and e.onset >= query_start
            ]
        pred_path = tmp_path / "pred.csv"
        write_predictions(events, pred_path)
        code = main(
            [
                "evaluate",
                "--predictions",
                str(pred_path),
                "--manifest",
                str(tiny_corpus.eval_manifest),
                "--out",
                str(tmp_path),
            ]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "100.00" in out
        scores = (tmp_path / "scores.csv").read_text().splitlines()
        assert scores[1].startswith("overall,,100.00,100.00,100.00")

    def test_empty_predictions_zero_f1(self, tiny_corpus, tmp_path):
        pred_path = tmp_path / "pred.csv"
        write_predictions([], pred_path)
        report = cmd_evaluate(pred_path, tiny_corpus.eval_manifest)
        assert report.overall == (0.0, 0.0, 0.0)

    def test_hand_computed_counts(self, tiny_corpus, tmp_path):
        # one exact hit plus one spurious event: tp=1, fp=1, fn = rest
        from fewshotsed.cli import _detection_targets
        from fewshotsed.corpus import load_manifest
        from fewshotsed.fewshot import support_end

        manifests = load_manifest(tiny_corpus.eval_manifest)
        manifest, file_events, class_name = _detection_targets(manifests)[0]
        query_start = support_end(file_events, class_name)
        gts = [
            e for e in file_events if e.marker == "POS" and e.onset >= query_start
        ]
        preds = [
            PredictedEvent(manifest.file_id, gts[0].onset, gts[0].offset),
            PredictedEvent(manifest.file_id, gts[-1].offset + 3.0, gts[-1].offset + 3.5),
        ]
        pred_path = tmp_path / "pred.csv"
        write_predictions(preds, pred_path)
        report = cmd_evaluate(pred_path, tiny_corpus.eval_manifest)
        tp, fn = 1, len(gts) - 1
        pr = 100 * tp / 2
        re = 100 * tp / (tp + fn)
        assert report.overall[0] == pytest.approx(pr)
        assert report.overall[1] == pytest.approx(re)

    def test_unknown_file_id_errors(self, tiny_corpus, tmp_path):
        pred_path = tmp_path / "pred.csv"
        write_predictions([PredictedEvent("ghost.wav", 1.0, 2.0)], pred_path)
        with pytest.raises(ValueError, match="ghost.wav"):
            cmd_evaluate(pred_path, tiny_corpus.eval_manifest)


class TestAblateCommand:
    def test_smoke_grid_shape(self, tiny_corpus, tmp_path):
        config = RunConfig(
            train_manifest=tiny_corpus.train_manifest,
            eval_manifest=tiny_corpus.eval_manifest,
            out_dir=tmp_path,
            seed=0,
            batch_size=16,
            epochs=1,
            ablate_pretrain_runs=1,
            ablate_eval_runs=1,
        )
        rows = cmd_ablate(config)
        assert len(rows) == 8
        assert sum(r.family == "objective" for r in rows) == 3
        assert sum(r.family == "drop" for r in rows) == 5
        labels = {r.label for r in rows}
        assert {"SCL", "CE", "SimCLR", "- Additive noise", "- Time stretch"} <= labels
        for row in rows:
            assert np.isfinite(row.mean_f1)
            assert row.min_f1 <= row.mean_f1 <= row.max_f1
            assert len(row.scores) == 1
        assert (tmp_path / "ablation.csv").exists()

    def test_mean_is_average_of_runs(self, tiny_corpus, tmp_path, monkeypatch):
        monkeypatch.setattr(cli, "ABLATION_CELLS", (("objective", "scl", "SCL"),))
        config = RunConfig(
            train_manifest=tiny_corpus.train_manifest,
            eval_manifest=tiny_corpus.eval_manifest,
            out_dir=tmp_path,
            seed=0,
            batch_size=16,
            epochs=1,
            ablate_pretrain_runs=2,
            ablate_eval_runs=2,
        )
        rows = cmd_ablate(config)
        assert len(rows) == 1
        assert len(rows[0].scores) == 4
        assert rows[0].mean_f1 == pytest.approx(float(np.mean(rows[0].scores)))
        assert rows[0].min_f1 == min(rows[0].scores)
        assert rows[0].max_f1 == max(rows[0].scores)
