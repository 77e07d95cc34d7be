"""bench: latency percentiles of a serving mode over a fixed workload."""

import argparse
import logging
from pathlib import Path

from detext.commands.common import all_documents, ensure_out_dir, load_split
from detext.commands.rank import build_service
from detext.run_config import BENCH_FILE, WORKLOAD_FILE, RunConfig
from detext.services.latency_bench import (
    build_workload,
    latency_bench,
    load_workload,
    make_handler,
    resolve_workload,
    write_workload,
)
from detext.services.ranking_service import RankMode

logger = logging.getLogger(__name__)

NAME = "bench"


def register(subparsers) -> None:
    parser = subparsers.add_parser(NAME, help="measure serving latency percentiles")
    parser.add_argument("--checkpoint")
    parser.add_argument("--mode", choices=[m.value for m in RankMode])
    parser.add_argument("--k", type=int, help="two-pass rescoring depth")
    parser.add_argument("--store")
    parser.add_argument("--first-pass")
    parser.add_argument("--workload", help="JSON-lines workload (default: sampled from the test split)")
    parser.add_argument("--requests", type=int)
    parser.add_argument("--candidates", type=int)
    parser.add_argument("--repetitions", type=int)
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--concurrency", type=int)


def run(args: argparse.Namespace, config: RunConfig) -> int:
    config = config.override("serving", mode=args.mode, two_pass_k=args.k)
    config = config.override("bench", requests=args.requests, candidates=args.candidates,
                             repetitions=args.repetitions, warmup=args.warmup, concurrency=args.concurrency)
    mode = config.serving.mode
    out = ensure_out_dir(config)

    documents = all_documents(config)
    if args.workload:
        records = load_workload(args.workload)
    else:
        records = build_workload(load_split(config, "test"), config.bench.requests,
                                 min(config.bench.candidates, len(documents)), config.seed, documents)
        write_workload(records, out / WORKLOAD_FILE)
    workload = resolve_workload(records, documents)

    service = build_service(config, mode, args.checkpoint, args.store, args.first_pass)
    report = latency_bench(
        workload,
        make_handler(service, mode),
        mode,
        repetitions=config.bench.repetitions,
        warmup=config.bench.warmup,
        concurrency=config.bench.concurrency,
        config={
            "encoder": service.model.spec.encoder.value,
            "candidates": len(workload[0].documents),
            "two_pass_k": config.serving.two_pass_k,
            "workload": str(args.workload or Path(out / WORKLOAD_FILE)),
            "seed": config.seed,
        },
    )
    report.write_json(out / BENCH_FILE)
    print(report.to_table())
    return 0
