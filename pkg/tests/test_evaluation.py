import asyncio
import json
import random

import pytest

from rqrag.evaluation import (
    TASKS, accuracy, aggregate, compare_strategies, f1, item_metric, load_benchmark, load_ids, match_score,
    max_f1, render_report, run_benchmark, sample_items, source_resilience, subset_by_ids, write_report,
)
from rqrag.exceptions import GoldNotInChoices, RaggedRows, ScriptExhausted
from rqrag.generators.scripted import ScriptedGenerator
from rqrag.models import BenchmarkItem, DecodeParams, Document, ItemResult, RetrievalSource, SearchConfig
from rqrag.retrieval import Bm25Retriever, load_corpus

from tests.helpers import FIXTURES, FunctionGenerator, StubRetriever, completion


CHOICES = ["Paris", "London", "Berlin", "Rome"]
ANIMALS = ["A cat", "A dog", "fish", "bird"]


@pytest.mark.parametrize("pred, choices, gold, expected", [
    ("A", CHOICES, "Paris", 1),
    ("(A)", CHOICES, "Paris", 1),
    ("A.", CHOICES, "Paris", 1),
    ("A)", CHOICES, "Paris", 1),
    ("B", CHOICES, "Paris", 0),
    ("A. Paris", CHOICES, "Paris", 1),
    ("B. London", CHOICES, "Paris", 0),
    ("A. London", CHOICES, "Paris", 0),
    ("B. Paris", CHOICES, "Paris", 0),
    ("paris!", CHOICES, "Paris", 1),
    ("London", CHOICES, "Paris", 0),
    ("The answer is Paris", CHOICES, "Paris", 0),
    ("E", CHOICES, "Paris", 0),
    ("", CHOICES, "Paris", 0),
    ("A dog", ANIMALS, "A dog", 1),
    ("A cat", ANIMALS, "A dog", 0),
    ("B", ANIMALS, "A dog", 1),
    ("B) A dog", ANIMALS, "A dog", 1),
    ("a dog.", ANIMALS, "A dog", 1),
    ("fish", ANIMALS, "A dog", 0),
])
def test_accuracy(pred, choices, gold, expected):
    assert accuracy(pred, choices, gold) == expected


def test_accuracy_requires_gold_among_choices():
    with pytest.raises(GoldNotInChoices):
        accuracy("A", CHOICES, "Madrid")


@pytest.mark.parametrize("pred, golds, expected", [
    ("Paris is the capital", ["Paris"], 1),
    ("It's PARIS.", ["paris"], 1),
    ("London", ["Paris", "Paris, France"], 0),
    ("the Eiffel Tower", ["Eiffel Tower"], 1),
    ("New York City", ["new-york"], 1),
    ("Berlin", ["Berlin Wall"], 0),
])
def test_match_score(pred, golds, expected):
    assert match_score(pred, golds) == expected


@pytest.mark.parametrize("pred, gold, expected", [
    ("the cat sat", "cat sat down", 2 / 3),
    ("Barack Obama", "Obama", 2 / 3),
    ("", "x", 0.0),
    ("Paris", "paris", 1.0),
    ("a a b", "a b b", 2 / 3),
])
def test_f1(pred, gold, expected):
    assert f1(pred, gold) == pytest.approx(expected, abs=1e-9)


def test_max_f1():
    assert max_f1("New York", ["York", "New York City"]) == pytest.approx(0.8)


def test_item_metric():
    mc = BenchmarkItem(id="1", question="q", gold=["B"], choices=CHOICES)
    assert item_metric("accuracy", "London", mc) == 1.0
    assert item_metric("accuracy", "(B)", mc) == 1.0
    open_item = BenchmarkItem(id="2", question="q", gold=["Barack Obama"])
    assert item_metric("f1", "Obama", open_item) == pytest.approx(2 / 3)
    assert item_metric("match", "President Barack Obama", open_item) == 1.0


def test_benchmark_item_needs_gold():
    with pytest.raises(ValueError):
        BenchmarkItem(id="1", question="q", gold=[])
    assert BenchmarkItem.from_dict({"id": 3, "question": "q", "gold": "x"}).gold == ["x"]


def test_task_table():
    assert TASKS["musique"].max_depth == 4
    assert TASKS["hotpotqa"].metric == "f1" and TASKS["hotpotqa"].sample_size == 500
    assert TASKS["popqa_longtail"].metric == "match"
    assert TASKS["arc_challenge"].size == 1172


def test_benchmark_files():
    items = load_benchmark(FIXTURES / "benchmark.jsonl")
    assert [i.id for i in items] == ["q1", "q2"]
    assert load_ids(FIXTURES / "ids.txt") == ["q2"]
    assert [i.id for i in subset_by_ids(items, ["q2", "missing"])] == ["q2"]


def test_sample_items():
    items = [BenchmarkItem(id=str(i), question="q", gold=["g"]) for i in range(20)]
    sample = sample_items(items, 5, seed=1)
    assert len(sample) == 5
    assert [int(i.id) for i in sample] == sorted(int(i.id) for i in sample)
    assert sample == sample_items(items, 5, seed=1)
    assert sample_items(items, 50, seed=1) == items


# --- harness --------------------------------------------------------------

def _config(**overrides):
    return SearchConfig(**{
        "width": 2, "max_depth": 2, "top_k": 2, "source": RetrievalSource.BM25_CORPUS,
        "decode": DecodeParams(max_tokens=64), **overrides,
    })


def test_fixture_benchmark_run():
    report = asyncio.run(run_benchmark(
        load_benchmark(FIXTURES / "benchmark.jsonl"),
        _config(),
        ScriptedGenerator.from_file(FIXTURES / "script.jsonl"),
        Bm25Retriever(load_corpus(FIXTURES / "corpus.jsonl")),
        metric="match",
        task="fixture",
    ))
    q1, q2 = report.per_item
    assert q1.answers == {"ppl": "Ilse Brandt", "confidence": "Ilse Brandt", "ensemble": "Ilse Brandt"}
    assert q1.trajectories == 3
    assert q2.answers["ensemble"] == "Vienna"
    assert q2.trajectories == 3
    assert report.strategy_scores == {"ppl": 100.0, "confidence": 100.0, "ensemble": 100.0}
    assert report.upper_bound_score == 100.0


def _disagreeing_generator():
    def reply(prompt, n):
        return [
            completion("[A_RESPONSE] Paris", [-2.0, -0.5]),
            completion("[A_RESPONSE] Lyon", [-0.1, -0.9]),
            completion("[A_RESPONSE] paris.", [-2.0, -0.6]),
        ]
    return FunctionGenerator(reply)


def test_strategies_disagree_on_one_search():
    item = BenchmarkItem(id="fr", question="What is the capital of France?", gold=["Paris"])
    report = asyncio.run(run_benchmark(
        [item], _config(width=3, max_depth=0), _disagreeing_generator(), StubRetriever(), metric="match",
    ))
    result = report.per_item[0]
    assert result.answers == {"ppl": "Lyon", "confidence": "Paris", "ensemble": "Paris"}
    assert result.chosen == "Paris"
    assert report.strategy_scores == {"ppl": 0.0, "confidence": 100.0, "ensemble": 100.0}
    assert report.upper_bound_score == 100.0


def test_item_errors_are_recorded():
    def reply(prompt, n):
        if "broken" in prompt:
            raise ScriptExhausted("no reply", "function")
        return ["[A_RESPONSE] fine"] * n

    items = [
        BenchmarkItem(id="1", question="a fine question", gold=["fine"]),
        BenchmarkItem(id="2", question="a broken question", gold=["fine"]),
    ]
    report = asyncio.run(run_benchmark(items, _config(max_depth=0), FunctionGenerator(reply), StubRetriever()))
    assert report.per_item[0].error is None
    assert report.per_item[1].error.startswith("ScriptExhausted")
    assert report.per_item[1].correct == {"ppl": 0.0, "confidence": 0.0, "ensemble": 0.0}
    assert report.strategy_scores["ensemble"] == 50.0
    assert report.upper_bound_score == 50.0


def test_candidate_pools_with_shared_locators():
    def reply(prompt, n):
        if prompt.endswith("[A_RESPONSE] "):
            return ["Paris"]
        return ["[S_REWRITE] capital of France"] * n

    items = [
        BenchmarkItem(id="1", question="What is the capital of France?", gold=["Paris"], candidates=[
            Document(title="France", snippet="Paris is the capital of France", locator="wiki/France"),
            Document(title="France", snippet="France is a country in Europe", locator="wiki/France"),
        ]),
        BenchmarkItem(id="2", question="Which city is the French capital?", gold=["Paris"], candidates=[
            Document(title="Paris", snippet="Paris is the capital city", locator="wiki/Paris"),
            Document(title="Lyon", snippet="Lyon is a city in France", locator="wiki/Lyon"),
        ]),
    ]
    report = asyncio.run(run_benchmark(
        items, _config(max_depth=1), FunctionGenerator(reply), Bm25Retriever(), metric="match",
    ))
    for result in report.per_item:
        assert result.error is None
        assert result.answers == {"ppl": "Paris", "confidence": "Paris", "ensemble": "Paris"}
    assert report.strategy_scores == {"ppl": 100.0, "confidence": 100.0, "ensemble": 100.0}


def test_upper_bound_dominates_on_mock_benchmark():
    rng = random.Random(11)
    items, replies = [], {}
    for i in range(200):
        question = f"mock question {i}?"
        items.append(BenchmarkItem(id=str(i), question=question, gold=[f"gold{i}"]))
        branches = [
            completion(f"[A_RESPONSE] wrong{i}", [rng.uniform(-3, 0), rng.uniform(-3, 0)]),
            completion(f"[A_RESPONSE] gold{i}", [rng.uniform(-3, 0), rng.uniform(-3, 0)]),
        ]
        rng.shuffle(branches)
        replies[question + "\n"] = branches

    generator = FunctionGenerator(lambda prompt, n: replies[prompt])
    report = asyncio.run(run_benchmark(items, _config(max_depth=0), generator, StubRetriever(), workers=8))
    assert report.upper_bound_score == 100.0
    for value in report.strategy_scores.values():
        assert value <= report.upper_bound_score
    assert min(report.strategy_scores.values()) < 100.0


def test_run_benchmark_rejects_bad_arguments():
    with pytest.raises(ValueError):
        asyncio.run(run_benchmark([], _config(), _disagreeing_generator(), StubRetriever()))
    item = BenchmarkItem(id="1", question="q", gold=["g"])
    with pytest.raises(ValueError):
        asyncio.run(run_benchmark([item], _config(), _disagreeing_generator(), StubRetriever(), metric="bleu"))


# --- reports --------------------------------------------------------------

def _report(scores, upper, task="t"):
    return aggregate([ItemResult(id="1", correct={k: v / 100 for k, v in scores.items()}, upper_bound=upper / 100)],
                     task=task, metric="match")


def test_report_tables(tmp_path):
    report = _report({"ppl": 0.0, "confidence": 100.0, "ensemble": 100.0}, 100.0, task="popqa_longtail")
    table = render_report(report)
    assert "task: popqa_longtail" in table
    assert "upper_bound   100.0" in table

    compare = compare_strategies({"popqa_longtail": report, "arc": _report({"ppl": 0, "confidence": 0, "ensemble": 0}, 0)})
    lines = compare.splitlines()
    assert lines[0].split() == ["task", "ppl", "confidence", "ensemble", "upper_bound"]
    assert lines[2].split() == ["popqa_longtail", "0.0", "100.0", "100.0", "100.0"]
    assert lines[3].split()[0] == "arc"

    asyncio.run(write_report(report, tmp_path / "r.json", tmp_path / "r.txt"))
    saved = json.loads((tmp_path / "r.json").read_text(encoding="utf-8"))
    assert saved["upper_bound_score"] == 100.0
    assert saved["per_item"][0]["id"] == "1"
    assert (tmp_path / "r.txt").read_text(encoding="utf-8") == table


def test_source_resilience_rows():
    with open(FIXTURES / "resilience_rows.json", "r", encoding="utf-8") as f:
        rows = json.load(f)
    result = source_resilience(rows)
    assert result.per_source["duckduckgo"] == pytest.approx(68.4)
    assert round(result.avg, 1) == 67.6
    assert round(result.var, 1) == 0.7
    assert result.table.rstrip().endswith("AVG 67.6  VAR 0.7")


def test_source_resilience_baseline_rows():
    rows = {"duckduckgo": [67.4, 55.3, 76.4], "wikipedia": [67.3, 54.9, 78.0], "bing": [64.6, 49.0, 76.8]}
    result = source_resilience(rows)
    assert round(result.avg, 1) == 65.5
    assert round(result.var, 1) == 1.8


def test_source_resilience_errors():
    with pytest.raises(RaggedRows):
        source_resilience({"a": [1.0, 2.0], "b": [1.0]})
    with pytest.raises(RaggedRows):
        source_resilience({"a": [], "b": []})
    with pytest.raises(ValueError):
        source_resilience({"a": [1.0]})
