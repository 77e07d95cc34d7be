"""ablate: paired offline comparisons on the dev split."""

import argparse
import logging

import pandas as pd

from detext.commands.common import ensure_out_dir, load_split
from detext.run_config import ABLATION_FILE, RunConfig
from detext.services.experiments import Suite, run_suite

logger = logging.getLogger(__name__)

NAME = "ablate"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="run ablation suites")
    parser.add_argument("--suite", action="append", choices=[s.value for s in Suite],
                        help="suite to run (repeatable; default from the run config)")


def run(args: argparse.Namespace, config: RunConfig) -> int:
    if args.suite:
        config = config.override("ablate", suites=args.suite)
    train_set = load_split(config, "train")
    dev_set = load_split(config, "dev")

    frames = [
        run_suite(suite, config.model, train_set, dev_set, config.train, config.pretrain)
        for suite in config.ablate.suites
    ]
    table = pd.concat(frames, ignore_index=True)
    out = ensure_out_dir(config)
    table.to_csv(out / ABLATION_FILE, index=False, float_format="%.6f")
    print(table.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    return 0
