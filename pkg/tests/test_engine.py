import asyncio
import math
import re

import pytest

from rqrag.engine import TreeSearchEngine, dump_trajectories
from rqrag.exceptions import GeneratorError, NoTrajectory, ScriptExhausted, Unsupported
from rqrag.generators.base import split_tokens
from rqrag.generators.scripted import ScriptedGenerator
from rqrag.jsonl import read_jsonl
from rqrag.models import DecodeParams, RefinementAction, SearchConfig, TreeNode, Trajectory
from rqrag.protocol import from_record, structurally_equal, validate
from rqrag.selection import SelectionConfig, score

from tests.helpers import FunctionGenerator, StubRetriever, after, completion, root_prompt, trajectory_json


QUESTION = "Where was the author of Dune born?"

# width 2 / depth 2 hand tree:
#   root -> R1 "Dune novel author" -> Oakland | R2 "Frank Herbert birthplace" -> (forced) Tacoma, Washington
#        -> D1 "Who wrote Dune?"   -> D2 "Where was Frank Herbert born?" -> (forced) Tacoma | Tacoma
DUNE_ROUTES = [
    (root_prompt(QUESTION), ["[S_REWRITE] Dune novel author", "[S_DECOMPOSE] Who wrote Dune?"]),
    (after("Dune novel author"), ["[A_RESPONSE] Oakland", "[S_REWRITE] Frank Herbert birthplace"]),
    (after("Who wrote Dune?"), ["[S_DECOMPOSE] Where was Frank Herbert born?", "[A_RESPONSE] Tacoma"]),
    (after("Frank Herbert birthplace", forced=True), ["Tacoma, Washington"]),
    (after("Where was Frank Herbert born?", forced=True), ["Tacoma"]),
]


def routed(routes):
    """reply callable answering the first route whose regex is found in the prompt"""
    compiled = [(re.compile(pattern, re.DOTALL), replies) for pattern, replies in routes]

    def reply(prompt, n):
        for pattern, replies in compiled:
            if pattern.search(prompt):
                return replies
        raise ScriptExhausted(f"no route for prompt ending {prompt[-60:]!r}", "function")
    return reply


def scripted(routes):
    return ScriptedGenerator([{"prompt": p, "choices": c} for p, c in routes])


def make_engine(generator, retriever=None, **overrides):
    config = SearchConfig(**{"width": 2, "max_depth": 2, "top_k": 2, "decode": DecodeParams(max_tokens=64), **overrides})
    return TreeSearchEngine(generator, retriever or StubRetriever(), config)


def run(engine, question=QUESTION):
    return asyncio.run(engine.run(question))


def test_hand_enumerated_tree():
    generator = FunctionGenerator(routed(DUNE_ROUTES))
    retriever = StubRetriever()
    trajectories = run(make_engine(generator, retriever))

    assert [t.final_answer for t in trajectories] == ["Oakland", "Tacoma, Washington", "Tacoma", "Tacoma"]
    assert [[s.action for s in t.steps] for t in trajectories] == [
        [RefinementAction.REWRITE],
        [RefinementAction.REWRITE, RefinementAction.REWRITE],
        [RefinementAction.DECOMPOSE, RefinementAction.DECOMPOSE],
        [RefinementAction.DECOMPOSE],
    ]
    assert len(generator.prompts) == 5
    assert sorted(retriever.queries) == sorted([
        "Dune novel author", "Who wrote Dune?", "Frank Herbert birthplace", "Where was Frank Herbert born?",
    ])
    assert len(trajectories) <= 2 ** 2 + 2

    oakland = trajectories[0]
    assert oakland.answer_start == 5
    assert oakland.answer_log_probs == [-1.0]
    assert score(oakland).confidence == pytest.approx(-1.0)
    assert [d.rank for d in oakland.steps[0].documents] == [1, 2]

    forced = trajectories[1]
    assert forced.answer_start == 8
    assert [tok for tok, _ in forced.generated_tokens[forced.answer_start:]] == ["Tacoma,", " Washington"]

    for t in trajectories:
        assert validate(t, make_engine(generator).config) == []


def test_scripted_generator_gives_same_tree():
    by_function = run(make_engine(FunctionGenerator(routed(DUNE_ROUTES))))
    by_script = run(make_engine(scripted(DUNE_ROUTES)))
    assert trajectory_json(by_function) == trajectory_json(by_script)


def test_serial_and_concurrent_runs_are_identical():
    serial = run(make_engine(FunctionGenerator(routed(DUNE_ROUTES)), concurrency=1))
    concurrent = run(make_engine(FunctionGenerator(routed(DUNE_ROUTES)), concurrency=8))
    assert trajectory_json(serial) == trajectory_json(concurrent)


def test_call_budget_aborts_branches_not_the_run():
    trajectories = run(make_engine(FunctionGenerator(routed(DUNE_ROUTES)), call_budget=2))
    assert [t.final_answer for t in trajectories] == ["Oakland"]

    with pytest.raises(NoTrajectory):
        run(make_engine(FunctionGenerator(routed(DUNE_ROUTES)), call_budget=1))


def test_failed_retrieval_excludes_branch():
    retriever = StubRetriever(fail_on=["Who wrote Dune?"])
    trajectories = run(make_engine(FunctionGenerator(routed(DUNE_ROUTES)), retriever))
    assert [t.final_answer for t in trajectories] == ["Oakland", "Tacoma, Washington"]


def test_duplicate_continuations_collapse():
    generator = FunctionGenerator(routed([(root_prompt("Capital of France?"), ["[A_RESPONSE] Paris"] * 2)]))
    trajectories = run(make_engine(generator), "Capital of France?")
    assert len(trajectories) == 1
    assert trajectories[0].steps == []
    assert trajectories[0].final_answer == "Paris"


def test_depth_zero_keeps_direct_answers_only():
    retriever = StubRetriever()
    generator = FunctionGenerator(routed([(root_prompt("Q?"), ["[S_REWRITE] better q", "[A_RESPONSE] Paris"])]))
    trajectories = run(make_engine(generator, retriever, max_depth=0), "Q?")
    assert [t.final_answer for t in trajectories] == ["Paris"]
    assert retriever.queries == []


def test_depth_zero_forces_an_answer_when_none_sampled():
    routes = [
        (r"\[A_RESPONSE\] \Z", ["Paris"]),
        (root_prompt("Q?"), ["[S_REWRITE] one", "[S_DECOMPOSE] two"]),
    ]
    trajectories = run(make_engine(FunctionGenerator(routed(routes)), max_depth=0), "Q?")
    assert [t.final_answer for t in trajectories] == ["Paris"]
    assert trajectories[0].answer_start == 0


def test_unparseable_continuation_is_dropped():
    generator = FunctionGenerator(routed([(root_prompt("Q?"), ["I think Paris", "[A_RESPONSE] Paris"])]))
    trajectories = run(make_engine(generator), "Q?")
    assert [t.final_answer for t in trajectories] == ["Paris"]


def test_root_failure_propagates():
    with pytest.raises(GeneratorError):
        run(make_engine(FunctionGenerator(routed([]))), "Q?")
    with pytest.raises(ValueError):
        run(make_engine(FunctionGenerator(routed([]))), "   ")


def test_expand_rejects_terminal_node():
    engine = make_engine(FunctionGenerator(routed(DUNE_ROUTES)))
    node = TreeNode(partial=Trajectory(input=QUESTION, final_answer="x"), terminal=True)
    with pytest.raises(ValueError):
        asyncio.run(engine.expand(node))


def test_expand_returns_children_in_output_order():
    engine = make_engine(FunctionGenerator(routed(DUNE_ROUTES)))
    children = asyncio.run(engine.expand(TreeNode(partial=Trajectory(input=QUESTION))))
    assert [c.partial.steps[-1].refined_query for c in children] == ["Dune novel author", "Who wrote Dune?"]
    assert all(c.depth == 1 and not c.terminal for c in children)


class ScoringGenerator(FunctionGenerator):
    async def score_continuation(self, prompt, target):
        self.scored.append(target)
        return [-3.0] * len(split_tokens(target))


def test_full_scope_scores_evidence():
    generator = ScoringGenerator(routed(DUNE_ROUTES))
    generator.scored = []
    engine = TreeSearchEngine(generator, StubRetriever(), make_engine(generator).config, ppl_scope="full")
    trajectories = asyncio.run(engine.run(QUESTION))

    assert len(generator.scored) == 4
    assert all(target.startswith("[R_EVIDENCE]\n") for target in generator.scored)
    oakland = trajectories[0]
    assert oakland.evidence_log_probs and set(oakland.evidence_log_probs) == {-3.0}
    assert score(oakland).ppl == pytest.approx(math.e)
    assert score(oakland, SelectionConfig(ppl_scope="full")).ppl > math.e


def test_scripted_generator_scores_fixed_targets():
    generator = scripted(DUNE_ROUTES)
    engine = TreeSearchEngine(generator, StubRetriever(), make_engine(generator).config, ppl_scope="full")
    trajectories = asyncio.run(engine.run(QUESTION))
    assert all(t.evidence_log_probs for t in trajectories)


def test_full_scope_requires_scoring_support():
    generator = FunctionGenerator(routed(DUNE_ROUTES))
    engine = TreeSearchEngine(generator, StubRetriever(), make_engine(generator).config, ppl_scope="full")
    with pytest.raises(Unsupported):
        asyncio.run(engine.run(QUESTION))


def test_stop_sequences_include_control_tokens():
    params = make_engine(FunctionGenerator(routed([]))).decode_params
    assert params.stop_sequences[:2] == ["[R_EVIDENCE]", "[EOS]"]


def test_answer_stops_at_end_token():
    generator = FunctionGenerator(routed([(root_prompt("Q?"), [completion("[A_RESPONSE] Paris\n[EOS] trailing")])]))
    trajectories = run(make_engine(generator, width=1), "Q?")
    assert trajectories[0].final_answer == "Paris"


def test_dump_trajectories(tmp_path):
    trajectories = run(make_engine(FunctionGenerator(routed(DUNE_ROUTES))))
    scored = [score(t) for t in trajectories]
    path = tmp_path / "dump.jsonl"
    asyncio.run(dump_trajectories(scored, path))
    records = read_jsonl(path)
    assert len(records) == 4
    for original, record in zip(scored, records):
        assert structurally_equal(from_record(record).trajectory, original.trajectory)


def test_call_bound():
    assert SearchConfig(width=2, max_depth=2).call_bound() == 11
    assert SearchConfig(width=1, max_depth=3).call_bound() == 5
