"""
Trajectory scoring and final-answer selection.

All scores are natural-log based. PPL covers model-generated tokens
(refined queries and the answer) unless the full scope is requested, in
which case scored evidence tokens are included as well.
"""

import math
import re
import string
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence, Union

from .exceptions import EmptyAnswerSpan, EmptyInput, NoScoredTokens
from .models import ScoredTrajectory, Strategy, Trajectory


PPL_SCOPES = ("generated", "full")
ENSEMBLE_DOMAINS = ("probability", "log")
ENSEMBLE_KEYS = ("normalized", "raw")

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})
_LEADING_ARTICLE_RE = re.compile(r"^(?:(?:a|an|the)\s+)+")


@dataclass
class SelectionConfig:
    ppl_scope: str = "generated"
    ensemble_domain: str = "probability"
    ensemble_key: str = "normalized"
    # mean-per-token confidence instead of the sum
    length_normalized: bool = False

    def __post_init__(self):
        if self.ppl_scope not in PPL_SCOPES:
            raise ValueError(f"ppl_scope must be one of {PPL_SCOPES}")
        if self.ensemble_domain not in ENSEMBLE_DOMAINS:
            raise ValueError(f"ensemble_domain must be one of {ENSEMBLE_DOMAINS}")
        if self.ensemble_key not in ENSEMBLE_KEYS:
            raise ValueError(f"ensemble_key must be one of {ENSEMBLE_KEYS}")


def normalize_answer(text: str, strip_articles: bool = True) -> str:
    """Lowercase, drop punctuation, collapse whitespace, strip leading articles"""
    text = " ".join(text.lower().translate(_PUNCT_TABLE).split())
    if strip_articles:
        text = _LEADING_ARTICLE_RE.sub("", text)
    return text


def perplexity(t: Trajectory, scope: str = "generated") -> float:
    log_probs = list(t.log_probs)
    if scope == "full":
        log_probs += t.evidence_log_probs
    if not log_probs:
        raise NoScoredTokens("trajectory has no scored tokens")
    return math.exp(-math.fsum(log_probs) / len(log_probs))


def confidence(t: Trajectory, length_normalized: bool = False) -> float:
    """Summed log-probability of the answer span only"""
    if t.answer_start >= len(t.generated_tokens):
        raise EmptyAnswerSpan("trajectory has no answer tokens")
    span = t.answer_log_probs
    total = math.fsum(span)
    return total / len(span) if length_normalized else total


def sequence_nll(per_token_log_probs: Sequence[float]) -> float:
    """Negative log-likelihood of one target sequence"""
    if not per_token_log_probs:
        raise EmptyInput("no log-probabilities given")
    return -math.fsum(per_token_log_probs)


def score(t: Trajectory, config: SelectionConfig = SelectionConfig()) -> ScoredTrajectory:
    return ScoredTrajectory(
        trajectory=t,
        ppl=perplexity(t, config.ppl_scope),
        confidence=confidence(t, config.length_normalized),
        answer_norm=normalize_answer(t.final_answer),
    )


def _require(trajs: Sequence[ScoredTrajectory]) -> None:
    if not trajs:
        raise EmptyInput("no trajectories to select from")


def select_ppl(trajs: Sequence[ScoredTrajectory]) -> ScoredTrajectory:
    _require(trajs)
    return trajs[min(range(len(trajs)), key=lambda i: (trajs[i].ppl, i))]


def select_confidence(trajs: Sequence[ScoredTrajectory]) -> ScoredTrajectory:
    _require(trajs)
    return trajs[min(range(len(trajs)), key=lambda i: (-trajs[i].confidence, i))]


def _ensemble_groups(
    trajs: Sequence[ScoredTrajectory], key: str,
) -> "OrderedDict[str, List[ScoredTrajectory]]":
    _require(trajs)
    groups: "OrderedDict[str, List[ScoredTrajectory]]" = OrderedDict()
    for t in trajs:
        groups.setdefault(t.answer_norm if key == "normalized" else t.answer, []).append(t)
    return groups


def _group_mass(members: List[ScoredTrajectory], domain: str) -> float:
    if domain == "log":
        return math.fsum(t.confidence for t in members)
    return math.fsum(math.exp(t.confidence) for t in members)


def ensemble_scores(
    trajs: Sequence[ScoredTrajectory], domain: str = "probability", key: str = "normalized",
) -> Dict[str, float]:
    """Accumulated confidence per answer group, in first-occurrence order"""
    groups = _ensemble_groups(trajs, key)
    return OrderedDict((k, _group_mass(members, domain)) for k, members in groups.items())


def select_ensemble(
    trajs: Sequence[ScoredTrajectory], domain: str = "probability", key: str = "normalized",
) -> str:
    """
    Answer whose group has the highest cumulative confidence.

    ``domain="probability"`` sums exp(confidence) so agreement adds mass;
    ``domain="log"`` sums the raw log confidences as literally written.
    Ties go to the group seen first.
    """
    masses = ensemble_scores(trajs, domain, key)
    keys = list(masses)
    return keys[min(range(len(keys)), key=lambda i: (-masses[keys[i]], i))]


def select_ensemble_trajectory(
    trajs: Sequence[ScoredTrajectory], domain: str = "probability", key: str = "normalized",
) -> ScoredTrajectory:
    """First member of the winning ensemble group"""
    winner = select_ensemble(trajs, domain, key)
    return _ensemble_groups(trajs, key)[winner][0]


def select(strategy: Strategy, trajs: Sequence[ScoredTrajectory],
           config: SelectionConfig = SelectionConfig()) -> ScoredTrajectory:
    if strategy == Strategy.PPL:
        return select_ppl(trajs)
    if strategy == Strategy.CONFIDENCE:
        return select_confidence(trajs)
    return select_ensemble_trajectory(trajs, config.ensemble_domain, config.ensemble_key)


def choose_answer(strategy: Strategy, trajs: Sequence[ScoredTrajectory],
                  config: SelectionConfig = SelectionConfig()) -> str:
    return select(strategy, trajs, config).answer


Metric = Callable[[str, List[str]], Union[bool, float]]


def upper_bound(trajs: Sequence[ScoredTrajectory], gold: List[str], metric: Metric) -> bool:
    """True iff metric accepts any trajectory's answer"""
    if not gold:
        raise EmptyInput("gold list is empty")
    return any(bool(metric(t.answer, gold)) for t in trajs)
