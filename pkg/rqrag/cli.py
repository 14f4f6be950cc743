"""
Command line interface for rqrag

Exit codes: 0 success, 1 runtime failure, 2 bad usage, 3 configuration error.
"""

import argparse
import asyncio
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from loguru import logger

from .config import EngineConfig, load_config
from .core import RQRAG
from .evaluation import TASKS, compare_strategies, load_benchmark, render_report, source_resilience, write_report
from .exceptions import ConfigurationError, RQRAGError, UsageError
from .jsonl import read_jsonl, write_json
from .models import RawInstance, RetrievalSource, Strategy


EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="Configuration file path")
    common.add_argument("--seed", type=int, help="Random seed")
    common.add_argument("--source", choices=[s.value for s in RetrievalSource], help="Retrieval source")
    common.add_argument("--strategy", choices=[s.value for s in Strategy], help="Selection strategy")
    common.add_argument("--width", type=int, help="Expansion width")
    common.add_argument("--depth", type=int, help="Exploration depth")
    common.add_argument("--top-k", dest="top_k", type=int, help="Documents per step")
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(prog="rqrag", description="Query-refining retrieval-augmented generation")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    build = sub.add_parser("build-dataset", parents=[common], help="Build search-augmented training data")
    build.add_argument("--pool", help="Task pool (.jsonl)")
    build.add_argument("--retention", help="Comma-separated retention ratios, e.g. 0,0.25,0.5")

    infer = sub.add_parser("infer", parents=[common], help="Answer questions with tree decoding")
    group = infer.add_mutually_exclusive_group()
    group.add_argument("-q", "--question", help="One question")
    group.add_argument("--questions", help="File with one question per line")

    evaluate = sub.add_parser("eval", parents=[common], help="Run a benchmark")
    evaluate.add_argument("--benchmark", help="Benchmark (.jsonl)")
    evaluate.add_argument("--task", default="", help=f"Task name ({', '.join(TASKS)})")

    compare = sub.add_parser("compare-strategies", parents=[common], help="Strategy table across tasks")
    compare.add_argument("--benchmark", action="append", default=[], metavar="TASK=PATH",
                         help="Benchmark per task, repeatable")

    resilience = sub.add_parser("resilience", parents=[common], help="Scores across retrieval sources")
    resilience.add_argument("--rows", help="JSON file mapping source -> per-task scores")
    resilience.add_argument("--benchmark", action="append", default=[], metavar="TASK=PATH",
                            help="Benchmark per task, repeatable")
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    return {
        "seed": args.seed,
        "source": args.source,
        "strategy": args.strategy,
        "width": args.width,
        "depth": args.depth,
        "top_k": args.top_k,
    }


def _task_benchmarks(specs: List[str]) -> Dict[str, str]:
    benchmarks = {}
    for spec in specs:
        task, sep, path = spec.partition("=")
        if not sep or not task or not path:
            raise UsageError(f"expected TASK=PATH, got {spec!r}")
        benchmarks[task] = path
    return benchmarks


def _input_path(path: str) -> Path:
    resolved = Path(path)
    if not resolved.exists():
        raise UsageError(f"input file not found: {path}")
    return resolved


async def _build_dataset(args: argparse.Namespace, config: EngineConfig) -> None:
    if not args.pool:
        raise UsageError("build-dataset needs --pool")
    if args.retention:
        try:
            config.retention = [float(r) for r in args.retention.split(",")]
        except ValueError:
            raise UsageError(f"bad --retention value {args.retention!r}")
        if any(not 0.0 <= r <= 1.0 for r in config.retention):
            raise UsageError("retention ratios must be in [0, 1]")
    raws = [RawInstance.from_dict(record) for record in read_jsonl(_input_path(args.pool))]
    async with RQRAG(config) as rag:
        manifest = await rag.build_dataset(raws)
    print(f"emitted {manifest['emitted']} of {manifest['total']} instances ({manifest['dropped']} dropped)")
    for reason, count in manifest["drops"].items():
        print(f"  dropped {reason}: {count}")


async def _infer(args: argparse.Namespace, config: EngineConfig) -> None:
    if args.question:
        questions = [args.question]
    elif args.questions:
        with open(_input_path(args.questions), "r", encoding="utf-8") as f:
            questions = [line.strip() for line in f if line.strip()]
    else:
        raise UsageError("infer needs --question or --questions")
    async with RQRAG(config) as rag:
        results = await rag.infer_many(questions)
    for result in results:
        if len(results) > 1:
            print(f"Q: {result.question}")
        print(result.answer)
    logger.info(f"trajectory dump written to {config.output_path('trajectories.jsonl')}")


async def _eval(args: argparse.Namespace, config: EngineConfig) -> None:
    benchmark = args.benchmark or config.evaluation.get("benchmark")
    if not benchmark:
        raise UsageError("eval needs --benchmark")
    items = load_benchmark(_input_path(benchmark))
    async with RQRAG(config) as rag:
        report = await rag.evaluate(items, args.task)
    name = args.task or "benchmark"
    await write_report(report, config.output_path(f"report_{name}.json"), config.output_path(f"report_{name}.txt"))
    print(render_report(report), end="")


async def _compare(args: argparse.Namespace, config: EngineConfig) -> None:
    benchmarks = _task_benchmarks(args.benchmark)
    if not benchmarks:
        raise UsageError("compare-strategies needs at least one --benchmark TASK=PATH")
    reports = {}
    async with RQRAG(config) as rag:
        for task, path in benchmarks.items():
            reports[task] = await rag.evaluate(load_benchmark(_input_path(path)), task)
    table = compare_strategies(reports)
    await write_json(config.output_path("compare.json"), {t: r.to_dict() for t, r in reports.items()})
    with open(config.output_path("compare.txt"), "w", encoding="utf-8") as f:
        f.write(table)
    print(table, end="")


async def _resilience(args: argparse.Namespace, config: EngineConfig) -> None:
    if args.rows:
        with open(_input_path(args.rows), "r", encoding="utf-8") as f:
            rows = json.load(f)
    else:
        benchmarks = _task_benchmarks(args.benchmark)
        if not benchmarks:
            raise UsageError("resilience needs --rows or --benchmark TASK=PATH")
        async with RQRAG(config) as rag:
            rows = await rag.resilience_rows({
                task: load_benchmark(_input_path(path)) for task, path in benchmarks.items()
            })
    result = source_resilience(rows)
    await write_json(config.output_path("resilience.json"), {
        "rows": rows,
        "per_source": result.per_source,
        "avg": result.avg,
        "var": result.var,
    })
    print(result.table, end="")


_COMMANDS = {
    "build-dataset": _build_dataset,
    "infer": _infer,
    "eval": _eval,
    "compare-strategies": _compare,
    "resilience": _resilience,
}


def run_command(argv: Optional[List[str]] = None) -> int:
    """Parse argv, run the subcommand and return the exit status"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage and 0 after --help
        return e.code if isinstance(e.code, int) else EXIT_USAGE

    overrides = _overrides(args)
    if args.command == "eval" and args.depth is None and args.task in TASKS:
        overrides["depth"] = TASKS[args.task].max_depth

    try:
        config = load_config(args.config, overrides)
        asyncio.run(_COMMANDS[args.command](args, config))
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"rqrag: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigurationError as e:
        print(f"rqrag: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (RQRAGError, OSError, ValueError) as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        print(f"rqrag: {args.command} failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK
