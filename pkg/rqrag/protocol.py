"""
Control-token grammar and the mapping between structured trajectories and
their flat serialized form.

Serialized layout (one item per line, payloads escaped to a single line)::

    <input>
    [S_REWRITE] <query>
    [R_EVIDENCE]
    Title: <title>
    Snippet: <snippet>
    Source: <locator>
    ---
    Title: ...
    [/R_EVIDENCE]
    [A_RESPONSE] <answer>
    [EOS]
"""

import re
from dataclasses import dataclass, fields
from functools import lru_cache
from typing import Any, Dict, List, Optional, Tuple

from .exceptions import (
    InvariantViolation, MalformedContinuation, MissingAnswer, ProtocolError,
    UnknownToken, UnterminatedEvidence,
)
from .models import Document, RefinementAction, ScoredTrajectory, SearchConfig, SearchStep, Trajectory
from .selection import normalize_answer


# Anything shaped like a control token is reserved and escaped inside payloads.
CONTROL_SHAPE = r"\[/?[A-Z][A-Z0-9_]*\]"

DOC_DELIMITER = "---"
TITLE_PREFIX = "Title: "
SNIPPET_PREFIX = "Snippet: "
SOURCE_PREFIX = "Source: "


@dataclass(frozen=True)
class TokenTable:
    """Surface forms of the control tokens"""
    rewrite: str = "[S_REWRITE]"
    decompose: str = "[S_DECOMPOSE]"
    disambiguate: str = "[S_DISAMBIGUATE]"
    answer: str = "[A_RESPONSE]"
    evidence_open: str = "[R_EVIDENCE]"
    evidence_close: str = "[/R_EVIDENCE]"
    end: str = "[EOS]"

    def __post_init__(self):
        values = [getattr(self, f.name) for f in fields(self)]
        if any(not v for v in values):
            raise ValueError("control tokens must be non-empty")
        if len(set(values)) != len(values):
            raise ValueError("control tokens must be distinct")

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, str]]) -> "TokenTable":
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown token table keys: {sorted(unknown)}")
        return cls(**data)

    def all(self) -> List[str]:
        return [getattr(self, f.name) for f in fields(self)]

    def action_token(self, action: RefinementAction) -> str:
        return {
            RefinementAction.REWRITE: self.rewrite,
            RefinementAction.DECOMPOSE: self.decompose,
            RefinementAction.DISAMBIGUATE: self.disambiguate,
            RefinementAction.ANSWER: self.answer,
        }[action]

    def action_for(self, token: str) -> Optional[RefinementAction]:
        for action in RefinementAction:
            if self.action_token(action) == token:
                return action
        return None


DEFAULT_TOKENS = TokenTable()


@lru_cache(maxsize=32)
def _patterns(table: TokenTable) -> Tuple["re.Pattern", "re.Pattern"]:
    known = "|".join(re.escape(t) for t in sorted(table.all(), key=len, reverse=True))
    reserved = f"{known}|{CONTROL_SHAPE}"
    escape_re = re.compile(rf"\\|\n|\r|{reserved}")
    # escapes are consumed first so an escaped token is never seen as a token
    scan_re = re.compile(rf"\\[\s\S]|(?P<tok>{reserved})")
    return escape_re, scan_re


# backslash + any other character stands for that character
_UNESCAPE_RE = re.compile(r"\\([\s\S])")
_UNESCAPE_MAP = {"n": "\n", "r": "\r"}


def escape(text: str, table: TokenTable = DEFAULT_TOKENS) -> str:
    """Make payload text single-line and free of control tokens"""
    escape_re, _ = _patterns(table)

    def repl(m: "re.Match") -> str:
        s = m.group(0)
        if s == "\\":
            return "\\\\"
        if s == "\n":
            return "\\n"
        if s == "\r":
            return "\\r"
        return "\\" + s

    return escape_re.sub(repl, text)


def unescape(text: str) -> str:
    return _UNESCAPE_RE.sub(lambda m: _UNESCAPE_MAP.get(m.group(1), m.group(1)), text)


def _segments(text: str, table: TokenTable) -> List[Tuple[Optional[str], str]]:
    """
    Split text at unescaped control tokens.

    Returns [(None, leading_text), (token, following_text), ...]; raises
    UnknownToken for reserved-shape tokens missing from the table.
    """
    _, scan_re = _patterns(table)
    known = set(table.all())
    segments: List[Tuple[Optional[str], str]] = []
    current: Optional[str] = None
    start = 0
    for m in scan_re.finditer(text):
        tok = m.group("tok")
        if tok is None:
            continue
        if tok not in known:
            raise UnknownToken(tok)
        segments.append((current, text[start:m.start()]))
        current = tok
        start = m.end()
    segments.append((current, text[start:]))
    return segments


# --- render ---------------------------------------------------------------

def _check_renderable(trajectory: Trajectory) -> None:
    for step in trajectory.steps:
        if step.action == RefinementAction.ANSWER:
            raise InvariantViolation(f"step {step.turn} carries the terminal answer action")
        if not step.refined_query:
            raise InvariantViolation(f"step {step.turn} has an empty refined query")


def _evidence_lines(documents: List[Document], table: TokenTable) -> List[str]:
    lines = [table.evidence_open]
    for i, doc in enumerate(documents):
        if i:
            lines.append(DOC_DELIMITER)
        lines.append(TITLE_PREFIX + escape(doc.title, table))
        lines.append(SNIPPET_PREFIX + escape(doc.snippet, table))
        if doc.locator:
            lines.append(SOURCE_PREFIX + escape(doc.locator, table))
    lines.append(table.evidence_close)
    return lines


def _render_lines(trajectory: Trajectory, table: TokenTable) -> List[str]:
    _check_renderable(trajectory)
    lines = [escape(trajectory.input, table)]
    for step in trajectory.steps:
        lines.append(f"{table.action_token(step.action)} {escape(step.refined_query, table)}")
        lines.extend(_evidence_lines(step.documents, table))
    return lines


def render(trajectory: Trajectory, table: TokenTable = DEFAULT_TOKENS) -> str:
    lines = _render_lines(trajectory, table)
    lines.append(f"{table.answer} {escape(trajectory.final_answer, table)}")
    lines.append(table.end)
    return "\n".join(lines)


def render_prefix(trajectory: Trajectory, table: TokenTable = DEFAULT_TOKENS) -> str:
    """Render input and steps only; the generator continues from here"""
    return "\n".join(_render_lines(trajectory, table)) + "\n"


def render_evidence(documents: List[Document], table: TokenTable = DEFAULT_TOKENS) -> str:
    """The evidence block exactly as it appears inside a rendered trajectory"""
    return "\n".join(_evidence_lines(documents, table)) + "\n"


# --- parse ----------------------------------------------------------------

def _strip_payload(text: str) -> str:
    if text.startswith(" "):
        text = text[1:]
    if text.endswith("\n"):
        text = text[:-1]
    return text


def _parse_documents(block: str) -> List[Document]:
    block = block.strip("\n")
    if not block:
        return []
    documents: List[Document] = []
    groups: List[List[str]] = [[]]
    for line in block.split("\n"):
        if line == DOC_DELIMITER:
            groups.append([])
        else:
            groups[-1].append(line)
    for rank, group in enumerate(groups, 1):
        if len(group) not in (2, 3) or not group[0].startswith(TITLE_PREFIX) \
                or not group[1].startswith(SNIPPET_PREFIX):
            raise ProtocolError(f"malformed document #{rank} in evidence block")
        locator = ""
        if len(group) == 3:
            if not group[2].startswith(SOURCE_PREFIX):
                raise ProtocolError(f"malformed source line in document #{rank}")
            locator = unescape(group[2][len(SOURCE_PREFIX):])
        documents.append(Document(
            title=unescape(group[0][len(TITLE_PREFIX):]),
            snippet=unescape(group[1][len(SNIPPET_PREFIX):]),
            locator=locator,
            rank=rank,
        ))
    return documents


def parse(serialized: str, table: TokenTable = DEFAULT_TOKENS) -> Trajectory:
    """
    Inverse of render. Serialized text carries no probabilities, so the
    result has an empty token list and answer_start 0.
    """
    segments = _segments(serialized, table)
    head_text = segments[0][1]
    trajectory = Trajectory(input=unescape(head_text[:-1] if head_text.endswith("\n") else head_text))

    i = 1
    answered = False
    while i < len(segments):
        token, text = segments[i]
        action = table.action_for(token)
        if token == table.end:
            if not answered:
                raise MissingAnswer("end token reached before the answer token")
            if text.strip():
                raise ProtocolError("text after the end token")
            i += 1
            continue
        if answered:
            raise ProtocolError(f"unexpected {token} after the answer")
        if action == RefinementAction.ANSWER:
            trajectory.final_answer = unescape(_strip_payload(text))
            answered = True
            i += 1
            continue
        if action is None:
            if token == table.evidence_open:
                raise ProtocolError("evidence block without a refinement action")
            raise ProtocolError(f"unexpected {token}")

        query = unescape(_strip_payload(text))
        if i + 1 >= len(segments) or segments[i + 1][0] != table.evidence_open:
            raise ProtocolError(f"refinement {token} is not followed by an evidence block")
        block = segments[i + 1][1]
        if i + 2 >= len(segments) or segments[i + 2][0] != table.evidence_close:
            raise UnterminatedEvidence(f"evidence block of turn {len(trajectory.steps) + 1} is not closed")
        if segments[i + 2][1].strip():
            raise ProtocolError("free text between evidence and the next control token")
        trajectory.steps.append(SearchStep(
            turn=len(trajectory.steps) + 1,
            action=action,
            refined_query=query,
            documents=_parse_documents(block),
        ))
        i += 3

    if not answered:
        raise MissingAnswer("no answer token in serialized trajectory")
    return trajectory


def parse_action(continuation: str, table: TokenTable = DEFAULT_TOKENS) -> Tuple[RefinementAction, str, int]:
    """
    Parse one generator continuation.

    Returns (action, payload, payload_offset) where payload_offset is the
    character index in ``continuation`` at which the payload starts.
    """
    segments = _segments(continuation, table)
    if segments[0][1].strip():
        raise MalformedContinuation("continuation does not start with a control token")
    if len(segments) < 2:
        raise MalformedContinuation("continuation carries no control token")
    token, text = segments[1]
    action = table.action_for(token)
    if action is None:
        raise MalformedContinuation(f"continuation starts with non-action token {token}")
    payload = unescape(text.strip())
    if not payload:
        raise MalformedContinuation(f"empty payload after {token}")
    token_end = len(segments[0][1]) + len(token)
    offset = token_end + (len(text) - len(text.lstrip()))
    return action, payload, offset


# --- validate -------------------------------------------------------------

def validate(trajectory: Trajectory, config: Optional[SearchConfig] = None) -> List[str]:
    """Return a description of every violated invariant; empty when valid"""
    violations: List[str] = []
    for expected_turn, step in enumerate(trajectory.steps, 1):
        if step.turn != expected_turn:
            violations.append(f"step turns must be consecutive from 1 (found {step.turn} at position {expected_turn})")
        if step.action == RefinementAction.ANSWER:
            violations.append(f"step {step.turn}: answer is terminal and cannot be a search step")
        if not step.refined_query:
            violations.append(f"step {step.turn}: empty refined query")
        previous_rank = 0
        for doc in step.documents:
            if not doc.snippet:
                violations.append(f"step {step.turn}: document '{doc.title}' has an empty snippet")
            if doc.rank < 1:
                violations.append(f"step {step.turn}: document rank {doc.rank} < 1")
            if (previous_rank == 0 and doc.rank != 1) or (previous_rank and doc.rank <= previous_rank):
                violations.append(f"step {step.turn}: document ranks must increase strictly from 1")
            previous_rank = doc.rank
        if config is not None and len(step.documents) > config.top_k:
            violations.append(f"step {step.turn}: {len(step.documents)} documents exceed top-k {config.top_k}")
    if config is not None and len(trajectory.steps) > config.max_depth:
        violations.append(f"depth {len(trajectory.steps)} exceeds max depth {config.max_depth}")
    if not 0 <= trajectory.answer_start <= len(trajectory.generated_tokens):
        violations.append(f"answer_start {trajectory.answer_start} outside generated tokens")
    if any(lp > 0 for _, lp in trajectory.generated_tokens):
        violations.append("positive log-probability in generated tokens")
    return violations


def structurally_equal(a: Trajectory, b: Trajectory) -> bool:
    """Equality ignoring log-probabilities and retrieval scores"""
    return _structure(a) == _structure(b)


def _structure(t: Trajectory) -> Any:
    return (
        t.input,
        t.final_answer,
        [
            (s.turn, s.action, s.refined_query, [(d.title, d.snippet, d.locator, d.rank) for d in s.documents])
            for s in t.steps
        ],
    )


# --- dump records ---------------------------------------------------------

def to_record(scored: ScoredTrajectory) -> Dict[str, Any]:
    """Line record of the trajectory dump: question, steps, answer, scores"""
    t = scored.trajectory
    return {
        "question": t.input,
        "steps": [s.to_dict() for s in t.steps],
        "answer": t.final_answer,
        "ppl": scored.ppl,
        "confidence": scored.confidence,
    }


def from_record(record: Dict[str, Any]) -> ScoredTrajectory:
    trajectory = Trajectory(
        input=record["question"],
        steps=[SearchStep.from_dict(s) for s in record.get("steps", [])],
        final_answer=record["answer"],
    )
    return ScoredTrajectory(
        trajectory=trajectory,
        ppl=float(record["ppl"]),
        confidence=float(record["confidence"]),
        answer_norm=normalize_answer(record["answer"]),
    )
