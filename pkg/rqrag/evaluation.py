"""
Metrics and experiment harnesses: per-strategy benchmark runs, strategy
comparison tables and the retrieval-source resilience report.
"""

import asyncio
import random
import re
import statistics
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Union

import aiofiles
from loguru import logger

from .engine import TreeSearchEngine
from .exceptions import EvaluationError, GoldNotInChoices, RaggedRows, RQRAGError
from .generators.base import BaseGenerator
from .jsonl import read_jsonl, write_json
from .models import BenchmarkItem, ItemResult, Report, SearchConfig, Strategy
from .protocol import DEFAULT_TOKENS, TokenTable
from .retrieval.retrievers import BaseRetriever
from .selection import SelectionConfig, choose_answer, normalize_answer, score


METRICS = ("accuracy", "match", "f1")

_LABEL_RE = re.compile(r"^\(?([A-Z])\)?[.:)]?(?:\s+(.+))?$", re.S)


@dataclass(frozen=True)
class TaskSpec:
    name: str
    size: int
    metric: str
    max_depth: int
    # evaluated on a seeded sample of this size
    sample_size: Optional[int] = None


TASKS: Dict[str, TaskSpec] = {
    "arc_challenge": TaskSpec("arc_challenge", 1172, "accuracy", 2),
    "popqa_longtail": TaskSpec("popqa_longtail", 1399, "match", 2),
    "openbookqa": TaskSpec("openbookqa", 500, "accuracy", 2),
    "hotpotqa": TaskSpec("hotpotqa", 500, "f1", 2, sample_size=500),
    "2wikimultihopqa": TaskSpec("2wikimultihopqa", 500, "f1", 4, sample_size=500),
    "musique": TaskSpec("musique", 500, "f1", 4, sample_size=500),
}


# --- metrics --------------------------------------------------------------

def choice_label(index: int) -> str:
    return chr(ord("A") + index)


def accuracy(pred: str, choices: List[str], gold_choice: str) -> int:
    """
    1 when pred picks gold_choice.

    The prediction counts as a choice label only when it is a bare label
    (``B``, ``(B)``, ``B.``, ``B)``) or a label followed by that same
    choice's text (``B. London``). Anything else is compared with the full
    choice texts after normalization, so ``A dog`` is a text answer.
    """
    if gold_choice not in choices:
        raise GoldNotInChoices(f"gold choice {gold_choice!r} is not among {choices}")
    gold_index = choices.index(gold_choice)

    label = _LABEL_RE.match(pred.strip())
    if label:
        index = ord(label.group(1)) - ord("A")
        rest = label.group(2)
        if index < len(choices) and (rest is None or normalize_answer(rest) == normalize_answer(choices[index])):
            return int(index == gold_index)

    pred_norm = normalize_answer(pred)
    for index, choice in enumerate(choices):
        if pred_norm and pred_norm == normalize_answer(choice):
            return int(index == gold_index)
    return 0


def match_score(pred: str, golds: List[str]) -> int:
    """1 when any normalized gold answer is contained in the normalized prediction"""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_norm = normalize_answer(pred)
    return int(any(g and g in pred_norm for g in (normalize_answer(gold) for gold in golds)))


def _f1_tokens(text: str) -> List[str]:
    return normalize_answer(text, strip_articles=False).split()


def f1(pred: str, gold: str) -> float:
    """Token-overlap F1 with multiset counting"""
    pred_tokens = _f1_tokens(pred)
    gold_tokens = _f1_tokens(gold)
    if not pred_tokens or not gold_tokens:
        return 0.0
    common = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if common == 0:
        return 0.0
    precision = common / len(pred_tokens)
    recall = common / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def max_f1(pred: str, golds: List[str]) -> float:
    return max(f1(pred, g) for g in golds)


def _gold_choice(item: BenchmarkItem) -> str:
    gold = item.gold[0]
    if gold not in item.choices and len(gold) == 1 and gold.isalpha():
        index = ord(gold.upper()) - ord("A")
        if 0 <= index < len(item.choices):
            return item.choices[index]
    return gold


def item_metric(metric: str, pred: str, item: BenchmarkItem) -> float:
    """Accuracy for multiple-choice items, otherwise the task metric"""
    if item.choices:
        return float(accuracy(pred, item.choices, _gold_choice(item)))
    if metric == "f1":
        return max_f1(pred, item.gold)
    return float(match_score(pred, item.gold))


# --- benchmark data -------------------------------------------------------

def load_benchmark(path: Union[str, Path]) -> List[BenchmarkItem]:
    items = [BenchmarkItem.from_dict(record) for record in read_jsonl(path)]
    logger.info(f"loaded {len(items)} benchmark items from {path}")
    return items


def load_ids(path: Union[str, Path]) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.strip() for line in f if line.strip() and not line.startswith("#")]


def subset_by_ids(items: Sequence[BenchmarkItem], ids: Iterable[str]) -> List[BenchmarkItem]:
    """Items whose id is listed, in benchmark order"""
    wanted = set(ids)
    subset = [item for item in items if item.id in wanted]
    missing = wanted - {item.id for item in subset}
    if missing:
        logger.warning(f"{len(missing)} listed ids are not in the benchmark")
    return subset


def sample_items(items: Sequence[BenchmarkItem], size: int, seed: int) -> List[BenchmarkItem]:
    """Seeded fixed-size sample keeping benchmark order"""
    if size >= len(items):
        return list(items)
    chosen = sorted(random.Random(seed).sample(range(len(items)), size))
    return [items[i] for i in chosen]


# --- harness --------------------------------------------------------------

async def evaluate_item(
    item: BenchmarkItem,
    engine: TreeSearchEngine,
    metric: str,
    selection: SelectionConfig,
) -> ItemResult:
    """One search, every strategy applied to the same trajectory set"""
    result = ItemResult(id=item.id)
    try:
        trajectories = await engine.run(item.question, item.candidates)
        scored = []
        for t in trajectories:
            try:
                scored.append(score(t, selection))
            except RQRAGError as e:
                logger.warning(f"item {item.id}: unscorable trajectory skipped: {e}")
        if not scored:
            raise EvaluationError("no scorable trajectory")
        for strategy in Strategy:
            answer = choose_answer(strategy, scored, selection)
            result.answers[strategy.value] = answer
            result.correct[strategy.value] = item_metric(metric, answer, item)
    except RQRAGError as e:
        logger.warning(f"item {item.id} failed: {type(e).__name__}: {e}")
        result.error = f"{type(e).__name__}: {e}"
        result.answers = {}
        result.correct = {s.value: 0.0 for s in Strategy}
        return result

    result.chosen = result.answers[engine.config.strategy.value]
    # best over every trajectory, so it dominates each strategy
    result.upper_bound = max(item_metric(metric, s.answer, item) for s in scored)
    result.trajectories = len(scored)
    return result


def aggregate(results: Sequence[ItemResult], config_hash: str = "", task: str = "", metric: str = "") -> Report:
    n = len(results)
    strategy_scores = {
        s.value: 100.0 * sum(r.correct.get(s.value, 0.0) for r in results) / n
        for s in Strategy
    }
    upper = 100.0 * sum(r.upper_bound for r in results) / n
    return Report(
        per_item=list(results),
        strategy_scores=strategy_scores,
        upper_bound_score=upper,
        config_hash=config_hash,
        task=task,
        metric=metric,
    )


async def run_benchmark(
    items: Sequence[BenchmarkItem],
    config: SearchConfig,
    generator: BaseGenerator,
    retriever: BaseRetriever,
    metric: str = "match",
    selection: Optional[SelectionConfig] = None,
    tokens: TokenTable = DEFAULT_TOKENS,
    workers: int = 4,
    config_hash: str = "",
    task: str = "",
) -> Report:
    """
    Run the search once per item and score all strategies plus the upper bound.

    Failed items are recorded with their error and count as 0.
    """
    if not items:
        raise ValueError("items must be non-empty")
    if metric not in METRICS:
        raise ValueError(f"metric must be one of {METRICS}")
    selection = selection or SelectionConfig()
    engine = TreeSearchEngine(generator, retriever, config, tokens, selection.ppl_scope)
    slots = asyncio.Semaphore(workers)

    async def run(item: BenchmarkItem) -> ItemResult:
        async with slots:
            return await evaluate_item(item, engine, metric, selection)

    results = await asyncio.gather(*(run(item) for item in items))
    report = aggregate(results, config_hash, task, metric)
    failed = sum(1 for r in results if r.error)
    logger.info(
        f"benchmark {task or '-'}: {len(items)} items, {failed} failed, "
        + ", ".join(f"{k}={v:.1f}" for k, v in report.strategy_scores.items())
        + f", upper_bound={report.upper_bound_score:.1f}"
    )
    return report


# --- reports --------------------------------------------------------------

_STRATEGY_COLUMNS = [s.value for s in Strategy] + ["upper_bound"]


def compare_strategies(reports: Dict[str, Report]) -> str:
    """Per-task table of strategy scores and the upper bound"""
    width = max([len("task")] + [len(name) for name in reports])
    header = "task".ljust(width) + "".join(f"{c:>13}" for c in _STRATEGY_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, report in reports.items():
        values = [report.strategy_scores[c] for c in _STRATEGY_COLUMNS[:-1]] + [report.upper_bound_score]
        lines.append(name.ljust(width) + "".join(f"{v:>13.1f}" for v in values))
    return "\n".join(lines) + "\n"


def render_report(report: Report) -> str:
    lines = [
        f"task: {report.task or '-'}",
        f"metric: {report.metric or '-'}",
        f"items: {len(report.per_item)}",
        f"config: {report.config_hash}",
        "",
    ]
    for column in _STRATEGY_COLUMNS[:-1]:
        lines.append(f"{column:<12} {report.strategy_scores[column]:6.1f}")
    lines.append(f"{'upper_bound':<12} {report.upper_bound_score:6.1f}")
    return "\n".join(lines) + "\n"


async def write_report(report: Report, json_path: Union[str, Path], table_path: Union[str, Path]) -> None:
    await write_json(json_path, report.to_dict())
    Path(table_path).parent.mkdir(parents=True, exist_ok=True)
    async with aiofiles.open(table_path, "w", encoding="utf-8") as f:
        await f.write(render_report(report))


@dataclass
class ResilienceResult:
    per_source: Dict[str, float]
    avg: float
    var: float
    table: str


def source_resilience(rows: Dict[str, List[float]]) -> ResilienceResult:
    """
    Spread of results across retrieval sources.

    avg is the mean of per-source means; var is the sample standard
    deviation of those means. Both are rounded to one decimal in the
    table only.
    """
    if len(rows) < 2:
        raise ValueError("need at least two retrieval sources")
    lengths = {len(scores) for scores in rows.values()}
    if len(lengths) != 1 or 0 in lengths:
        raise RaggedRows(f"every source needs the same non-zero number of task scores, got {sorted(lengths)}")

    per_source = {source: statistics.mean(scores) for source, scores in rows.items()}
    avg = statistics.mean(per_source.values())
    var = statistics.stdev(per_source.values())

    n_tasks = lengths.pop()
    width = max(len("source"), *(len(s) for s in rows))
    header = "source".ljust(width) + "".join(f"{'task' + str(i + 1):>9}" for i in range(n_tasks)) + f"{'mean':>9}"
    lines = [header, "-" * len(header)]
    for source, scores in rows.items():
        lines.append(source.ljust(width) + "".join(f"{s:>9.1f}" for s in scores) + f"{per_source[source]:>9.1f}")
    lines.append("")
    lines.append(f"AVG {avg:.1f}  VAR {var:.1f}")
    return ResilienceResult(per_source=per_source, avg=avg, var=var, table="\n".join(lines) + "\n")
