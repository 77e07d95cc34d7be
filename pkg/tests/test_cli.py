"""End-to-end tests of the command-line entry point."""

import json
from pathlib import Path
from unittest.mock import patch

import pandas as pd
import pytest

from detext.errors import ConfigError
from detext.main import main
from detext.run_config import RunConfig, load_run_config

CONFIG = """
seed = 5

[data]
dir = "{root}/data"

[output]
dir = "{root}/runs"

[synthetic]
vocab_size = 200
train_queries = 30
dev_queries = 8
test_queries = 8
docs_per_query = 6
num_features = 3
pretrain_sentences = 50

[model]
encoder = "cnn"
word_dim = 8
num_filters = 8
hidden_size = 8
num_merges = 20

[model.transformer]
layers = 1
hidden = 8
heads = 2

[train]
epochs = 1
batch_queries = 10
lr = 0.01

[pretrain]
steps = 2
batch_size = 4
num_merges = 20

[bench]
requests = 4
candidates = 10
warmup = 1
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A generated corpus, a trained CNN model with first pass, and its store."""
    root = tmp_path_factory.mktemp("cli")
    config = root / "run.toml"
    config.write_text(CONFIG.format(root=root.as_posix()))
    assert main(["--config", str(config), "gen"]) == 0
    assert main(["--config", str(config), "train", "--first-pass"]) == 0
    assert main(["--config", str(config), "precompute"]) == 0
    return root, str(config)


def ranked_lines(text):
    return [json.loads(line) for line in text.splitlines() if line.strip()]


class TestRunConfig:
    """TOML loading and validation."""

    def test_defaults(self):
        """No file means every default."""
        config = load_run_config(None)
        assert config == RunConfig()
        assert config.serving.two_pass_k == 300

    def test_bad_toml(self, tmp_path):
        """Syntax errors are config errors."""
        path = tmp_path / "bad.toml"
        path.write_text("[model\n")
        with pytest.raises(ConfigError) as exc_info:
            load_run_config(path)
        assert exc_info.value.exit_code == 2

    def test_unknown_key(self, tmp_path):
        """Misspelled keys are rejected, not ignored."""
        path = tmp_path / "typo.toml"
        path.write_text("[model]\nnum_filter = 3\n")
        with pytest.raises(ConfigError):
            load_run_config(path)

    def test_example_config_is_valid(self):
        """The shipped example config validates."""
        config = load_run_config(Path(__file__).parent.parent / "configs" / "example.toml")
        assert config.model.encoder.value == "cnn"
        assert config.serving.two_pass_k == 300

    def test_seed_reaches_components(self):
        """with_seed routes one seed into model and training."""
        config = RunConfig().with_seed(42)
        assert config.model.seed == 42 and config.train.seed == 42

    def test_override_validates(self):
        """Command-line overrides go through the same validation."""
        with pytest.raises(ConfigError):
            RunConfig().override("train", epochs=-1)
        assert RunConfig().override("train", epochs=None) == RunConfig()


class TestExitCodes:
    """Errors map to exit codes."""

    def test_usage_error(self):
        """A missing subcommand is a usage error."""
        assert main([]) == 2

    def test_missing_config(self, tmp_path):
        """An absent run config exits 2."""
        assert main(["--config", str(tmp_path / "nope.toml"), "gen"]) == 2

    def test_missing_data(self, tmp_path):
        """Training without a corpus exits 3."""
        config = tmp_path / "run.toml"
        config.write_text(f'[data]\ndir = "{(tmp_path / "empty").as_posix()}"\n')
        assert main(["--config", str(config), "--out", str(tmp_path / "runs"), "train"]) == 3

    def test_unexpected_error(self):
        """Anything outside the error hierarchy exits 4."""
        with patch("detext.commands.gen.run", side_effect=RuntimeError("boom")) as run:
            assert main(["--seed", "1", "gen"]) == 4
        run.assert_called_once()

    def test_missing_checkpoint(self, workspace, tmp_path):
        """Evaluating a checkpoint that does not exist exits 4."""
        _, config = workspace
        assert main(["--config", config, "eval", "--checkpoint", str(tmp_path / "none.ckpt")]) == 4


class TestCommands:
    """The full workflow on a tiny corpus."""

    def test_gen_writes_splits(self, workspace):
        """gen writes every split and the pretraining text."""
        root, _ = workspace
        for name in ("train.jsonl", "dev.jsonl", "test.jsonl", "pretrain.txt"):
            assert (root / "data" / name).exists()
        assert len((root / "data" / "train.jsonl").read_text().splitlines()) == 30

    def test_gen_deterministic(self, workspace, tmp_path):
        """The same seed writes the same corpus."""
        root, config = workspace
        assert main(["--config", config, "--out", str(tmp_path / "again"), "gen"]) == 0
        assert (tmp_path / "again" / "test.jsonl").read_bytes() == (root / "data" / "test.jsonl").read_bytes()

    def test_train_artifacts(self, workspace):
        """train writes the model, first pass and their logs."""
        runs = workspace[0] / "runs"
        for name in ("model.ckpt", "first_pass.ckpt", "train_log.csv", "first_pass_log.csv", "store.dtes"):
            assert (runs / name).exists()
        assert list(pd.read_csv(runs / "train_log.csv").columns) == ["step", "epoch", "loss", "dev_ndcg10"]

    def test_eval(self, workspace, capsys):
        """eval prints and saves the metric table."""
        root, config = workspace
        assert main(["--config", config, "eval", "--split", "dev"]) == 0
        assert "ndcg@10" in capsys.readouterr().out
        assert pd.read_csv(root / "runs" / "eval.csv")["queries"].iloc[0] == 8

    def test_rank_precompute_matches_all_decoding(self, workspace, capsys):
        """The store path prints exactly the all-decoding ranking."""
        _, config = workspace
        assert main(["--config", config, "rank", "--mode", "all-decoding", "--limit", "3"]) == 0
        live = ranked_lines(capsys.readouterr().out)
        assert main(["--config", config, "rank", "--mode", "precompute", "--limit", "3"]) == 0
        stored = ranked_lines(capsys.readouterr().out)
        assert live == stored
        assert len(live) == 3 * 6
        assert [r["rank"] for r in live[:6]] == [1, 2, 3, 4, 5, 6]

    def test_rank_two_pass(self, workspace, capsys):
        """Two-pass marks which stage scored each document."""
        _, config = workspace
        assert main(["--config", config, "rank", "--mode", "two-pass", "--k", "2", "--limit", "1"]) == 0
        stages = [r["stage"] for r in ranked_lines(capsys.readouterr().out)]
        assert stages == ["deep", "deep"] + ["first_pass"] * 4

    def test_rank_unknown_query(self, workspace):
        """Filtering to absent queries is a data error."""
        _, config = workspace
        assert main(["--config", config, "rank", "--query-id", "nope"]) == 3

    def test_bench(self, workspace):
        """bench writes a JSON report and its workload."""
        root, config = workspace
        assert main(["--config", config, "bench", "--mode", "precompute"]) == 0
        report = json.loads((root / "runs" / "bench.json").read_text())
        assert report["mode"] == "precompute"
        assert report["requests"] == 4
        assert report["config"]["candidates"] == 10
        assert (root / "runs" / "workload.jsonl").exists()

    def test_ablate(self, workspace, tmp_path):
        """ablate writes one CSV row per variant."""
        _, config = workspace
        assert main(["--config", config, "--out", str(tmp_path), "ablate", "--suite", "interaction"]) == 0
        table = pd.read_csv(tmp_path / "ablation.csv")
        assert list(table["variant"]) == ["cosine", "cosine+hadamard", "cosine+hadamard+concat"]

    def test_pretrain_then_fine_tune(self, workspace, tmp_path):
        """A pretrained encoder file feeds a BERT training run."""
        _, config = workspace
        assert main(["--config", config, "--out", str(tmp_path), "pretrain"]) == 0
        assert len(pd.read_csv(tmp_path / "pretrain_log.csv")) == 2
        assert main(["--config", config, "--out", str(tmp_path), "train", "--encoder", "bert",
                     "--pretrained", str(tmp_path / "encoder.ckpt")]) == 0
        assert (tmp_path / "model.ckpt").exists()
