"""
Run configuration.

One TOML file per experiment, validated into pydantic models before any
work starts. Unknown keys are rejected at every level.
"""

import logging
import tomllib
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.settings import BENCH_WARMUP, DATA_DIR, OUT_DIR, TWO_PASS_K
from detext.data.synthetic import SyntheticSpec
from detext.errors import ConfigError
from detext.models.spec import ModelSpec
from detext.services.experiments import Suite
from detext.services.ranking_service import RankMode
from detext.services.trainer import PretrainConfig, TrainConfig

logger = logging.getLogger(__name__)

# Artifact names inside the output directory
CHECKPOINT_FILE = "model.ckpt"
FIRST_PASS_FILE = "first_pass.ckpt"
ENCODER_FILE = "encoder.ckpt"
TRAIN_LOG_FILE = "train_log.csv"
FIRST_PASS_LOG_FILE = "first_pass_log.csv"
PRETRAIN_LOG_FILE = "pretrain_log.csv"
EVAL_FILE = "eval.csv"
STORE_FILE = "store.dtes"
WORKLOAD_FILE = "workload.jsonl"
BENCH_FILE = "bench.json"
ABLATION_FILE = "ablation.csv"
SPLITS = ("train", "dev", "test")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSection(_Section):
    vocab_size: int = Field(1000, gt=0)
    train_queries: int = Field(2000, gt=0)
    dev_queries: int = Field(200, gt=0)
    test_queries: int = Field(200, gt=0)
    docs_per_query: int = Field(10, gt=0)
    num_source_fields: int = Field(1, gt=0)
    num_target_fields: int = Field(2, gt=0)
    num_features: int = Field(5, gt=0)
    noise: float = Field(0.1, ge=0, lt=1)
    pretrain_sentences: int = Field(2000, ge=0)

    def to_spec(self) -> SyntheticSpec:
        return SyntheticSpec(**self.model_dump(exclude={"pretrain_sentences"}))


class DataSection(_Section):
    dir: str = DATA_DIR
    train: str = "train.jsonl"
    dev: str = "dev.jsonl"
    test: str = "test.jsonl"
    pretrain_corpus: Optional[str] = None   # one sentence per line; defaults to the train texts

    def split_path(self, split: str) -> Path:
        return Path(self.dir) / getattr(self, split)


class OutputSection(_Section):
    dir: str = OUT_DIR


class ServingSection(_Section):
    two_pass_k: int = Field(TWO_PASS_K, ge=0)
    mode: RankMode = RankMode.ALL_DECODING


class BenchSection(_Section):
    requests: int = Field(200, gt=0)
    candidates: int = Field(1000, gt=0)
    repetitions: int = Field(1, gt=0)
    warmup: int = Field(BENCH_WARMUP, ge=0)
    concurrency: int = Field(1, gt=0)


class AblateSection(_Section):
    suites: list[Suite] = Field(default_factory=lambda: [Suite.ENCODERS])


class RunConfig(_Section):
    seed: Optional[int] = None
    model: ModelSpec = ModelSpec()
    train: TrainConfig = TrainConfig()
    pretrain: PretrainConfig = PretrainConfig()
    data: DataSection = DataSection()
    output: OutputSection = OutputSection()
    synthetic: SyntheticSection = SyntheticSection()
    serving: ServingSection = ServingSection()
    bench: BenchSection = BenchSection()
    ablate: AblateSection = AblateSection()

    def with_seed(self, seed: int) -> "RunConfig":
        """Route one seed into every component that draws random numbers."""
        return self.model_copy(update={
            "seed": seed,
            "model": self.model.model_copy(update={"seed": seed}),
            "train": self.train.model_copy(update={"seed": seed}),
        })

    def override(self, section: str, **values) -> "RunConfig":
        """Re-validated copy with command-line values set; None means not given."""
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            return self
        data = self.model_dump()
        data[section] = {**data[section], **given}
        return parse_run_config(data)

    def with_output(self, out: str) -> "RunConfig":
        return self.model_copy(update={"output": OutputSection(dir=out)})

    @property
    def out_dir(self) -> Path:
        return Path(self.output.dir)

    def artifact(self, name: str) -> Path:
        return self.out_dir / name


def _problems(error: ValidationError) -> list[str]:
    return [
        f"{'.'.join(str(part) for part in e['loc']) or '<root>'}: {e['msg']}"
        for e in error.errors()
    ]


def parse_run_config(data: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError("invalid run config", _problems(e)) from e


def load_run_config(path: Optional[Path | str]) -> RunConfig:
    """Read and validate a TOML run config; no path means all defaults."""
    if path is None:
        return RunConfig()
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except FileNotFoundError as e:
        raise ConfigError(f"run config {path} not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"run config {path} is not valid TOML", [str(e)]) from e
    config = parse_run_config(data)
    logger.debug(f"Loaded run config {path}")
    return config
