import random

import pytest

from rqrag.exceptions import (
    InvariantViolation, MalformedContinuation, MissingAnswer, UnknownToken, UnterminatedEvidence,
)
from rqrag.models import Document, RefinementAction, ScoredTrajectory, SearchConfig, SearchStep, Trajectory
from rqrag.protocol import (
    DEFAULT_TOKENS, TokenTable, escape, from_record, parse, parse_action, render, render_evidence,
    render_prefix, structurally_equal, to_record, unescape, validate,
)


def _one_step() -> Trajectory:
    return Trajectory(
        input="Who wrote Dune?",
        steps=[SearchStep(1, RefinementAction.REWRITE, "Dune novel author", [
            Document(title="Dune (novel)", snippet="Dune is a 1965 novel by Frank Herbert.", locator="https://example.org/dune"),
        ])],
        final_answer="Frank Herbert",
    )


def test_render_without_steps():
    t = Trajectory(input="Hello", final_answer="Hi there")
    assert render(t) == "Hello\n[A_RESPONSE] Hi there\n[EOS]"


def test_render_one_rewrite_step():
    assert render(_one_step()) == (
        "Who wrote Dune?\n"
        "[S_REWRITE] Dune novel author\n"
        "[R_EVIDENCE]\n"
        "Title: Dune (novel)\n"
        "Snippet: Dune is a 1965 novel by Frank Herbert.\n"
        "Source: https://example.org/dune\n"
        "[/R_EVIDENCE]\n"
        "[A_RESPONSE] Frank Herbert\n"
        "[EOS]"
    )


def test_render_prefix_and_evidence_block():
    t = _one_step()
    prefix = render_prefix(t)
    assert render(t).startswith(prefix)
    assert prefix.endswith("[/R_EVIDENCE]\n")
    assert prefix.endswith(render_evidence(t.steps[0].documents))


def test_render_rejects_answer_step_and_empty_query():
    t = Trajectory(input="q", steps=[SearchStep(1, RefinementAction.ANSWER, "x")], final_answer="a")
    with pytest.raises(InvariantViolation):
        render(t)
    t = Trajectory(input="q", steps=[SearchStep(1, RefinementAction.REWRITE, "")], final_answer="a")
    with pytest.raises(InvariantViolation):
        render(t)


def test_parse_zero_step_render():
    t = parse(render(Trajectory(input="Hello", final_answer="Hi there")))
    assert t.steps == []
    assert t.final_answer == "Hi there"
    assert t.generated_tokens == [] and t.answer_start == 0


def test_parse_one_step_round_trip():
    t = _one_step()
    parsed = parse(render(t))
    assert structurally_equal(parsed, t)
    assert parsed.steps[0].documents[0].rank == 1


@pytest.mark.parametrize("text, error", [
    ("Q\n[S_REWRITE] q\n[R_EVIDENCE]\nTitle: t\nSnippet: s\n[A_RESPONSE] a\n[EOS]", UnterminatedEvidence),
    ("Q\n[EOS]", MissingAnswer),
    ("Q\n[S_EXPAND] q\n[A_RESPONSE] a\n[EOS]", UnknownToken),
])
def test_parse_malformed(text, error):
    with pytest.raises(error):
        parse(text)


def test_escaped_tokens_stay_payload():
    t = Trajectory(
        input="Explain [A_RESPONSE] and [EOS]\nplease",
        steps=[SearchStep(1, RefinementAction.DECOMPOSE, "what is [R_EVIDENCE]?", [
            Document(title="[/R_EVIDENCE]", snippet="a \\ backslash\nand [X_Y] token"),
        ])],
        final_answer="[S_REWRITE] is a token",
    )
    rendered = render(t)
    assert rendered.count("[R_EVIDENCE]") - rendered.count("\\[R_EVIDENCE]") == 1
    assert structurally_equal(parse(rendered), t)


def _random_text(rng: random.Random, allow_empty: bool = False) -> str:
    pieces = [
        "a", "b", "Z", " ", "  ", "\n", "\r", "\\", "\\n", "[", "]", "/", "_", "é", "—", "---",
        "[A_RESPONSE]", "[EOS]", "[R_EVIDENCE]", "[/R_EVIDENCE]", "[S_REWRITE]", "[FOO]", "[/BAR_1]",
        "[lower]", "Title: ", "Snippet: ", "\\[EOS]",
    ]
    n = rng.randint(0 if allow_empty else 1, 8)
    return "".join(rng.choice(pieces) for _ in range(n))


def _random_trajectory(rng: random.Random) -> Trajectory:
    steps = []
    for turn in range(1, rng.randint(0, 4) + 1):
        documents = [
            Document(
                title=_random_text(rng, allow_empty=True),
                snippet=_random_text(rng),
                locator=_random_text(rng, allow_empty=True) if rng.random() < 0.7 else "",
                rank=rank,
            )
            for rank in range(1, rng.randint(0, 3) + 1)
        ]
        action = rng.choice([RefinementAction.REWRITE, RefinementAction.DECOMPOSE, RefinementAction.DISAMBIGUATE])
        steps.append(SearchStep(turn, action, _random_text(rng), documents))
    return Trajectory(input=_random_text(rng), steps=steps, final_answer=_random_text(rng, allow_empty=True))


def test_round_trip_random_trajectories():
    rng = random.Random(1234)
    for _ in range(1000):
        t = _random_trajectory(rng)
        assert structurally_equal(parse(render(t)), t), render(t)


def test_escape_unescape_inverse():
    rng = random.Random(99)
    for _ in range(500):
        s = _random_text(rng, allow_empty=True)
        escaped = escape(s)
        assert "\n" not in escaped
        assert unescape(escaped) == s
        assert escape(unescape(escaped)) == escaped


def test_validate():
    config = SearchConfig(max_depth=2, top_k=3)
    assert validate(_one_step(), config) == []

    deep = Trajectory(
        input="q",
        steps=[SearchStep(i, RefinementAction.DECOMPOSE, f"hop {i}") for i in range(1, 4)],
        final_answer="a",
    )
    violations = validate(deep, config)
    assert len(violations) == 1 and "depth" in violations[0]

    docs = [Document(title=f"t{i}", snippet="s", rank=i) for i in range(1, 5)]
    wide = Trajectory(input="q", steps=[SearchStep(1, RefinementAction.REWRITE, "q", docs)], final_answer="a")
    violations = validate(wide, config)
    assert len(violations) == 1 and "top-k" in violations[0]


def test_validate_reports_invariants():
    t = Trajectory(
        input="q",
        steps=[SearchStep(2, RefinementAction.REWRITE, "q", [Document(title="t", snippet="", rank=2)])],
        final_answer="a",
        generated_tokens=[("x", 0.5)],
        answer_start=3,
    )
    violations = validate(t)
    assert any("consecutive" in v for v in violations)
    assert any("empty snippet" in v for v in violations)
    assert any("ranks" in v for v in violations)
    assert any("answer_start" in v for v in violations)
    assert any("positive" in v for v in violations)


def test_parse_action():
    assert parse_action("[S_REWRITE] Dune novel author") == (RefinementAction.REWRITE, "Dune novel author", 12)
    action, payload, offset = parse_action(" [A_RESPONSE] Paris")
    assert (action, payload) == (RefinementAction.ANSWER, "Paris")
    assert " [A_RESPONSE] Paris"[offset:] == "Paris"

    for bad in ("Paris", "[R_EVIDENCE] x", "[A_RESPONSE]   "):
        with pytest.raises(MalformedContinuation):
            parse_action(bad)
    with pytest.raises(UnknownToken):
        parse_action("[S_EXPAND] x")


def test_custom_token_table():
    table = TokenTable(answer="[ANSWER]", end="[END]")
    t = Trajectory(input="q", final_answer="a")
    assert render(t, table) == "q\n[ANSWER] a\n[END]"
    assert structurally_equal(parse(render(t, table), table), t)

    with pytest.raises(ValueError):
        TokenTable(answer="[EOS]")
    with pytest.raises(ValueError):
        TokenTable.from_dict({"reply": "[R]"})
    assert TokenTable.from_dict(None) == DEFAULT_TOKENS


def test_angle_bracket_token_table_round_trip():
    table = TokenTable(
        rewrite="<rw>", decompose="<dc>", disambiguate="<da>", answer="<ans>",
        evidence_open="<ev>", evidence_close="</ev>", end="<eos>",
    )
    assert escape("what is <ans> here", table) == "what is \\<ans> here"
    assert unescape(escape("what is <ans> here", table)) == "what is <ans> here"

    t = Trajectory(
        input="what is <ans> here",
        steps=[SearchStep(1, RefinementAction.REWRITE, "find <ev> and </ev>", [
            Document(title="<eos> title", snippet="snippet with <rw>", locator="loc-1"),
        ])],
        final_answer="say <ans>",
    )
    parsed = parse(render(t, table), table)
    assert structurally_equal(parsed, t)
    assert parsed.input == "what is <ans> here"
    assert parsed.steps[0].documents[0].title == "<eos> title"


def test_dump_record_round_trip():
    scored = ScoredTrajectory(trajectory=_one_step(), ppl=1.5, confidence=-0.2, answer_norm="frank herbert")
    record = to_record(scored)
    assert set(record) == {"question", "steps", "answer", "ppl", "confidence"}
    back = from_record(record)
    assert structurally_equal(back.trajectory, scored.trajectory)
    assert (back.ppl, back.confidence, back.answer_norm) == (1.5, -0.2, "frank herbert")
