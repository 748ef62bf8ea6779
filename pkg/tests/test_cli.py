"""CLI behavior: artifacts, manifests, determinism, exit codes."""

import json

import pytest

from odecast.cli import main


def run(args):
    return main(args)


class TestGenData:
    def test_deterministic_output_files(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            code = run(["gen-data", "--kind", "spiral", "--out", str(out),
                        "--n", "12", "--points", "10", "--seed", "5"])
            assert code == 0
        for name in ("spiral_train.jsonl", "spiral_test.jsonl"):
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_manifest_written(self, tmp_path):
        out = tmp_path / "d"
        run(["gen-data", "--kind", "spiral", "--out", str(out), "--n", "8",
             "--points", "8", "--seed", "1"])
        manifest = json.loads((out / "spiral_train.jsonl.manifest.json").read_text())
        assert manifest["command"] == "gen-data"
        assert manifest["seed"] == 1
        assert "config_sha256" in manifest and len(manifest["config_sha256"]) == 64

    def test_icu_kind(self, tmp_path):
        out = tmp_path / "icu"
        code = run(["gen-data", "--kind", "icu", "--out", str(out), "--n", "6",
                    "--seed", "2"])
        assert code == 0
        assert (out / "icu_train.jsonl").exists()


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    run(["gen-data", "--kind", "spiral", "--out", str(out), "--n", "10",
         "--points", "10", "--seed", "3"])
    return out


@pytest.fixture(scope="module")
def cfg_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(
        "epochs = 2\nbatch_size = 4\nlearning_rate = 0.01\nkl_warmup_epochs = 2\n"
        "latent_dim = 4\nencoder_hidden = 6\ndynamics_hidden = 8, 8\n"
        "decoder_hidden = 6\nclassifier_hidden = 4\npatience = 3\n", encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir, cfg_path):
    out = tmp_path_factory.mktemp("run")
    code = run(["train", "--data", str(data_dir / "spiral_train.jsonl"),
                "--config", str(cfg_path), "--out", str(out)])
    assert code == 0
    return out


class TestTrain:
    def test_produces_checkpoint_report_manifest(self, run_dir):
        assert (run_dir / "model.ckpt").exists()
        report_lines = (run_dir / "report.jsonl").read_text().strip().splitlines()
        assert len(report_lines) == 2
        assert json.loads(report_lines[0])["epoch"] == 1
        manifest = json.loads((run_dir / "model.ckpt.manifest.json").read_text())
        assert manifest["command"] == "train"

    def test_zero_learning_rate_checkpoint_equals_init(self, tmp_path, data_dir, cfg_path):
        import numpy as np
        from odecast.checkpoint import load_checkpoint
        from odecast.model import init_params
        from odecast.training import derive_seed, parse_config_file

        out = tmp_path / "zero"
        code = run(["train", "--data", str(data_dir / "spiral_train.jsonl"),
                    "--config", str(cfg_path), "--override", "learning_rate=0",
                    "--out", str(out)])
        assert code == 0
        trained = load_checkpoint(out / "model.ckpt")
        cfg = parse_config_file(cfg_path)
        reference = init_params(cfg.architecture(2), ["x", "y"],
                                seed=derive_seed(cfg.seed, 11), obs_noise=cfg.obs_noise)
        for name, w in reference.weights.items():
            assert np.array_equal(trained.weights[name], w), name


class TestEval:
    def test_metrics_document(self, tmp_path, run_dir, data_dir):
        out = tmp_path / "metrics.json"
        code = run(["eval", "--checkpoint", str(run_dir / "model.ckpt"),
                    "--data", str(data_dir / "spiral_test.jsonl"), "--out", str(out)])
        assert code == 0
        metrics = json.loads(out.read_text())
        assert metrics["schema"] == "odecast.metrics/1"
        assert set(metrics["recon_mse"]) == {"0.2", "0.4", "0.6", "0.8", "1"}
        assert "checkpoint_hash" in metrics


class TestPredict:
    def test_ensemble_export(self, tmp_path, run_dir, data_dir):
        out = tmp_path / "ensemble.json"
        code = run(["predict", "--checkpoint", str(run_dir / "model.ckpt"),
                    "--data", str(data_dir / "spiral_test.jsonl"), "--index", "0",
                    "--k", "3", "--seed", "4", "--out", str(out)])
        assert code == 0
        doc = json.loads(out.read_text())
        assert doc["schema"] == "odecast.ensemble/1"
        assert doc["k"] == 3
        assert (tmp_path / "ensemble.json.manifest.json").exists()

    def test_out_of_range_index_is_validation_error(self, tmp_path, run_dir, data_dir):
        code = run(["predict", "--checkpoint", str(run_dir / "model.ckpt"),
                    "--data", str(data_dir / "spiral_test.jsonl"), "--index", "99",
                    "--out", str(tmp_path / "x.json")])
        assert code == 1


class TestExitCodes:
    def test_unknown_flag_exits_one(self):
        assert run(["gen-data", "--kind", "spiral", "--out", "/tmp/x", "--bogus"]) == 1

    def test_unknown_subcommand_exits_one(self):
        assert run(["explode"]) == 1

    def test_missing_file_exits_one(self, tmp_path):
        assert run(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                    "--data", str(tmp_path / "none.jsonl"),
                    "--out", str(tmp_path / "m.json")]) == 1

    def test_bad_config_value_exits_one(self, tmp_path, data_dir):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("epochs = -1\n", encoding="utf-8")
        assert run(["train", "--data", str(data_dir / "spiral_train.jsonl"),
                    "--config", str(cfg), "--out", str(tmp_path / "o")]) == 1
