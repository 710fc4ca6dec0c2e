import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from knobrec import cli
from knobrec import model as mdl

SYNTH_CFG = """
seed = 5

[synth]
n_users = 80
n_items = 50
n_factors = 3
interactions_low = 8
interactions_high = 16

[data]
n_val_users = 10
n_test_users = 10

[model]
variant = "beta_vae"
beta = 0.5
supervision_frac = 0.5
h1 = 16
h2 = 16
d_latent = 8

[train]
epochs = 2
batch_size = 20

[eval]
k = 20
n_users = 5
n_steps = 5
n_bins = 5
mig_samples = 10
"""


def run(args):
    return CliRunner().invoke(cli.main, args, catch_exceptions=False)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """prepare + train on a tiny synthetic config, shared across tests."""
    root = tmp_path_factory.mktemp("pipeline")
    cfg = root / "config.toml"
    cfg.write_text(SYNTH_CFG)
    prep = root / "prepared"
    trained = root / "trained"
    r1 = run(["prepare", "--config", str(cfg), "--out", str(prep)])
    assert r1.exit_code == 0, r1.output
    r2 = run(["train", "--config", str(cfg), "--out", str(trained),
              "--data", str(prep)])
    assert r2.exit_code == 0, r2.output
    return cfg, prep, trained


class TestPrepare:
    def test_artifacts_written(self, pipeline):
        _, prep, _ = pipeline
        for name in ("dataset.npz", "split.npz", "factors.npy", "stats.json",
                     "resolved_config.toml", "ratings.csv", "ground_truth.json"):
            assert (prep / name).exists(), name

    def test_stats_consistent(self, pipeline):
        _, prep, _ = pipeline
        stats = json.loads((prep / "stats.json").read_text())
        assert stats["n_users"] == 80
        assert stats["n_val_users"] == 10 and stats["n_test_users"] == 10
        assert len(stats["factor_names"]) == 3

    def test_factors_shape(self, pipeline):
        _, prep, _ = pipeline
        factors = np.load(prep / "factors.npy")
        assert factors.shape == (80, 3)

    def test_real_csv_input(self, tmp_path, pipeline):
        _, prep, _ = pipeline
        cfg = tmp_path / "real.toml"
        cfg.write_text(f"""
seed = 1
[data]
ratings = "{prep / 'ratings.csv'}"
metadata = "{prep / 'items.csv'}"
min_interactions = 1
n_val_users = 5
n_test_users = 5
""")
        res = run(["prepare", "--config", str(cfg), "--out", str(tmp_path / "out")])
        assert res.exit_code == 0, res.output

    def test_missing_input_is_data_error(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text('[data]\nratings = "nope.csv"\nmetadata = "nope2.csv"\n')
        res = run(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert res.exit_code == 2

    def test_seed_override_changes_split(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text(SYNTH_CFG)
        a, b = tmp_path / "a", tmp_path / "b"
        run(["prepare", "--config", str(cfg), "--out", str(a)])
        run(["prepare", "--config", str(cfg), "--out", str(b), "--seed", "99"])
        ra = (a / "resolved_config.toml").read_text()
        rb = (b / "resolved_config.toml").read_text()
        assert "seed = 5" in ra and "seed = 99" in rb


class TestConfigValidation:
    def test_unknown_top_level_key(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("bogus = 1\n")
        res = run(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert res.exit_code == 1
        assert "bogus" in res.output

    def test_unknown_section_key(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("[model]\ndropout = 0.5\n")
        res = run(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert res.exit_code == 1

    def test_malformed_toml(self, tmp_path):
        cfg = tmp_path / "c.toml"
        cfg.write_text("not toml ===\n")
        res = run(["prepare", "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert res.exit_code == 1

    def test_bad_variant_exits_one(self, pipeline, tmp_path):
        cfg_path, prep, _ = pipeline
        cfg = tmp_path / "c.toml"
        cfg.write_text(SYNTH_CFG.replace('variant = "beta_vae"', 'variant = "wat"'))
        res = run(["train", "--config", str(cfg), "--out", str(tmp_path / "o"),
                   "--data", str(prep)])
        assert res.exit_code == 1


class TestTrain:
    def test_checkpoint_loadable(self, pipeline):
        _, _, trained = pipeline
        ckpt = mdl.load_checkpoint(trained / "model.ckpt")
        assert ckpt.params.d_latent == 8
        assert ckpt.loss_config.beta == 0.5
        assert ckpt.loss_config.supervision_frac == 0.5
        assert len(ckpt.factor_names) == 3

    def test_train_report_written(self, pipeline):
        _, _, trained = pipeline
        report = json.loads((trained / "train_report.json").read_text())
        assert len(report["val_ndcg"]) == 2
        assert report["supervised_users"]

    def test_sweep_json(self, pipeline):
        _, _, trained = pipeline
        sweep = json.loads((trained / "sweep.json").read_text())
        assert sweep["best"] == "model.ckpt"
        assert len(sweep["runs"]) == 1

    def test_beta_grid_sweep(self, pipeline, tmp_path):
        cfg_path, prep, _ = pipeline
        cfg = tmp_path / "c.toml"
        cfg.write_text(SYNTH_CFG.replace("[train]\nepochs = 2",
                                         "[train]\nbeta_grid = [0.2, 1.0]\nepochs = 2"))
        out = tmp_path / "swept"
        res = run(["train", "--config", str(cfg), "--out", str(out),
                   "--data", str(prep)])
        assert res.exit_code == 0, res.output
        assert (out / "model_beta0.2.ckpt").exists()
        assert (out / "model_beta1.ckpt").exists()
        sweep = json.loads((out / "sweep.json").read_text())
        assert len(sweep["runs"]) == 2

    def test_deterministic_checkpoints(self, pipeline, tmp_path):
        cfg_path, prep, trained = pipeline
        out = tmp_path / "again"
        res = run(["train", "--config", str(cfg_path), "--out", str(out),
                   "--data", str(prep)])
        assert res.exit_code == 0
        assert (out / "model.ckpt").read_bytes() == \
            (trained / "model.ckpt").read_bytes()

    def test_missing_artifacts_exit_two(self, pipeline, tmp_path):
        cfg_path, _, _ = pipeline
        res = run(["train", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                   "--data", str(tmp_path / "empty")])
        assert res.exit_code == 2


class TestEvaluate:
    def test_report_files(self, pipeline, tmp_path):
        cfg_path, prep, trained = pipeline
        out = tmp_path / "eval"
        res = run(["evaluate", "--config", str(cfg_path), "--out", str(out),
                   "--checkpoint", str(trained / "model.ckpt"), "--data", str(prep)])
        assert res.exit_code == 0, res.output
        report = json.loads((out / "report.json").read_text())
        assert 0.0 <= report["ndcg"] <= 1.0
        assert "mig" in report and "controllability" in report
        md = (out / "report.md").read_text()
        assert "NDCG" in md and "delta_ctrl" in md

    def test_unsupervised_skips_controllability(self, pipeline, tmp_path):
        cfg_path, prep, _ = pipeline
        cfg = tmp_path / "c.toml"
        cfg.write_text(SYNTH_CFG.replace("supervision_frac = 0.5",
                                         "supervision_frac = 0.0"))
        trained = tmp_path / "t"
        run(["train", "--config", str(cfg), "--out", str(trained), "--data", str(prep)])
        out = tmp_path / "e"
        res = run(["evaluate", "--config", str(cfg), "--out", str(out),
                   "--checkpoint", str(trained / "model.ckpt"), "--data", str(prep)])
        assert res.exit_code == 0, res.output
        report = json.loads((out / "report.json").read_text())
        assert "controllability" not in report
        assert "skipped" in res.output

    def test_corrupt_checkpoint_exit_two(self, pipeline, tmp_path):
        cfg_path, prep, trained = pipeline
        bad = tmp_path / "bad.ckpt"
        blob = bytearray((trained / "model.ckpt").read_bytes())
        blob[-1] ^= 0xFF
        bad.write_bytes(bytes(blob))
        res = run(["evaluate", "--config", str(cfg_path), "--out", str(tmp_path / "o"),
                   "--checkpoint", str(bad), "--data", str(prep)])
        assert res.exit_code == 2


class TestResolvedConfig:
    def test_round_trips_through_toml(self, pipeline):
        try:
            import tomllib
        except ImportError:
            import tomli as tomllib
        _, prep, _ = pipeline
        back = tomllib.loads((prep / "resolved_config.toml").read_text())
        assert back["seed"] == 5
        assert back["synth"]["n_users"] == 80
        assert back["model"]["variant"] == "beta_vae"
