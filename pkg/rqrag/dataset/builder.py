"""
Search-augmented training data construction.

Every pool record is classified by its source dataset, sent to the
annotator for refined queries, grounded with retrieved evidence and given a
regenerated answer. Instruction-following sources pass through untouched.
"""

import asyncio
import math
import random
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from loguru import logger

from ..exceptions import (
    AlignmentFailed, AnnotatorRefusal, FormatViolation, RQRAGError, UnknownSource,
)
from ..generators.base import BaseGenerator
from ..jsonl import JsonlWriter, write_json
from ..models import (
    AnswerProvenance, AugmentedInstance, Category, DecodeParams, Document, RawInstance,
    RefinementAction, SearchStep, Trajectory,
)
from ..protocol import DEFAULT_TOKENS, TokenTable, parse, render, structurally_equal, validate
from ..retrieval.retrievers import BaseRetriever, covers_support
from .templates import PromptSet, fill, load_prompts


DEFAULT_SOURCE_MAP: Dict[str, Category] = {
    "arc_easy": Category.MULTI_TURN,
    "arc_challenge": Category.MULTI_TURN,
    "openbookqa": Category.MULTI_TURN,
    "oasst_dialogue": Category.MULTI_TURN,
    "hotpotqa": Category.MULTI_HOP,
    "musique": Category.MULTI_HOP,
    "2wikimultihopqa": Category.MULTI_HOP,
    "asqa": Category.AMBIGUOUS,
}

DEFAULT_PASSTHROUGH = frozenset({"lima", "wizardlm", "open_orca", "openassistant", "gpt4_alpaca"})

DEFAULT_MAX_TURNS: Dict[Category, int] = {
    Category.MULTI_TURN: 1,
    Category.MULTI_HOP: 3,
    Category.AMBIGUOUS: 1,
}

RETENTION_RATIOS = (0.0, 0.25, 0.5, 0.75, 1.0)

_REFUSAL_PREFIXES = ("i'm sorry", "i am sorry", "sorry,", "i cannot", "i can't", "as an ai")
_LIST_MARKER_RE = re.compile(r"^\s*(?:\d+[.)]|[-*•])\s+")
_ROLE_LINE_RE = re.compile(r"^(user|assistant|system)\s*:\s?(.*)$", re.IGNORECASE)

_ACTION_FOR_CATEGORY = {
    Category.MULTI_TURN: RefinementAction.REWRITE,
    Category.MULTI_HOP: RefinementAction.DECOMPOSE,
    Category.AMBIGUOUS: RefinementAction.DISAMBIGUATE,
}


@dataclass
class BuildConfig:
    source_map: Dict[str, Category] = field(default_factory=lambda: dict(DEFAULT_SOURCE_MAP))
    passthrough: frozenset = DEFAULT_PASSTHROUGH
    max_turns: Dict[Category, int] = field(default_factory=lambda: dict(DEFAULT_MAX_TURNS))
    top_k: int = 3
    workers: int = 4
    max_tokens: int = 512
    prompt_dir: Optional[str] = None


def classify(raw: RawInstance, source_map: Dict[str, Category] = DEFAULT_SOURCE_MAP) -> Category:
    """Category of a pool record, decided by its source dataset"""
    if raw.category is not None:
        return raw.category
    category = source_map.get(raw.source.lower())
    if category is None:
        raise UnknownSource(f"source {raw.source!r} of instance {raw.id} is not mapped to a category")
    return category


def split_conversation(text: str) -> Tuple[str, str]:
    """
    Split ``role: content`` lines into (history, current user query).

    Input without role prefixes is a single-turn query with empty history.
    """
    lines = [line for line in text.splitlines() if line.strip()]
    turns = [_ROLE_LINE_RE.match(line) for line in lines]
    if not lines or not all(turns):
        return "", text.strip()
    last_user = max((i for i, m in enumerate(turns) if m.group(1).lower() == "user"), default=None)
    if last_user is None:
        return "", text.strip()
    history = "\n".join(lines[:last_user])
    return history, turns[last_user].group(2).strip()


def _check_refusal(reply: str) -> str:
    reply = reply.strip()
    if not reply:
        raise AnnotatorRefusal("annotator returned an empty reply")
    if reply.lower().startswith(_REFUSAL_PREFIXES):
        raise AnnotatorRefusal(f"annotator refused: {reply.splitlines()[0][:80]!r}")
    return reply


def _reply_lines(reply: str) -> List[str]:
    """Query lines of a reply; blank lines and preambles break the format"""
    lines = reply.strip().split("\n")
    result = []
    for line in lines:
        if not line.strip():
            raise FormatViolation("blank line inside the query list")
        if line.rstrip().endswith(":"):
            raise FormatViolation(f"unexpected preamble line {line.strip()!r}")
        result.append(_LIST_MARKER_RE.sub("", line).strip())
    return [line for line in result if line]


def parse_annotation(
    reply: str, category: Category, max_turns: int = 3,
) -> Tuple[bool, List[Tuple[RefinementAction, str]]]:
    """Turn an annotator reply into (retrieval necessity, ordered refined queries)"""
    reply = _check_refusal(reply)
    action = _ACTION_FOR_CATEGORY[category]

    if category == Category.MULTI_TURN:
        first, _, rest = reply.partition("\n")
        verdict = re.sub(r"[^a-z]", "", first.lower())
        if verdict == "no":
            return False, []
        if verdict != "yes":
            raise FormatViolation(f"retrieval necessity must be yes or no, got {first.strip()!r}")
        queries = _reply_lines(rest) if rest.strip() else []
        if not queries:
            raise FormatViolation("necessity is yes but no query was given")
    else:
        queries = _reply_lines(reply)
        if not queries:
            raise FormatViolation("reply carries no query")

    if len(queries) > max_turns:
        logger.debug(f"keeping {max_turns} of {len(queries)} refined queries")
        queries = queries[:max_turns]
    return True, [(action, q) for q in queries]


def format_contexts(documents: Iterable[Document]) -> str:
    lines = [f"{doc.title}: {doc.snippet}" for doc in documents]
    return "\n".join(lines) if lines else "(none)"


def to_trajectory(instance: AugmentedInstance) -> Trajectory:
    return Trajectory(input=instance.raw.x_origin, steps=list(instance.steps), final_answer=instance.y_new)


class DatasetBuilder:
    """
    Runs the construction pipeline with one annotator and one retriever.

    Args:
        annotator: Completion backend called at temperature 0
        retriever: Evidence backend for the refined queries
        config: Source map, turn limits, top-k and concurrency
    """

    def __init__(
        self,
        annotator: BaseGenerator,
        retriever: BaseRetriever,
        config: Optional[BuildConfig] = None,
        tokens: TokenTable = DEFAULT_TOKENS,
        prompts: Optional[PromptSet] = None,
    ):
        self.annotator = annotator
        self.retriever = retriever
        self.config = config or BuildConfig()
        self.tokens = tokens
        self.prompts = prompts or load_prompts(self.config.prompt_dir)
        self._annotator_lock = None if annotator.concurrent_safe else asyncio.Lock()
        self._params = DecodeParams(max_tokens=self.config.max_tokens, temperature=0.0, want_log_probs=False)

    async def _ask(self, prompt: str) -> str:
        if self._annotator_lock is None:
            completion = await self.annotator.complete(prompt, self._params)
        else:
            async with self._annotator_lock:
                completion = await self.annotator.complete(prompt, self._params)
        return completion.text

    def classify(self, raw: RawInstance) -> Category:
        return classify(raw, self.config.source_map)

    def annotation_prompt(self, raw: RawInstance, category: Category) -> str:
        template = self.prompts.for_category(category)
        if category == Category.MULTI_TURN:
            history, query = split_conversation(raw.x_origin)
            return fill(template, history=history or "(none)", query=query)
        if category == Category.MULTI_HOP:
            return fill(template, contexts=format_contexts(raw.candidates or []), question=raw.x_origin)
        return fill(template, question=raw.x_origin)

    async def annotate_refinements(
        self, raw: RawInstance, category: Optional[Category] = None,
    ) -> Tuple[bool, List[Tuple[RefinementAction, str]]]:
        category = category or self.classify(raw)
        reply = await self._ask(self.annotation_prompt(raw, category))
        return parse_annotation(reply, category, self.config.max_turns.get(category, 1))

    async def regenerate_answer(self, raw: RawInstance, steps: List[SearchStep]) -> str:
        blocks = []
        for step in steps:
            blocks.append(f"Query: {step.refined_query}\n{format_contexts(step.documents)}")
        contexts = "\n\n".join(blocks) if blocks else "(no retrieval needed)"
        _, question = split_conversation(raw.x_origin)
        reply = await self._ask(fill(self.prompts.regenerate, contexts=contexts, question=question))
        return _check_refusal(reply)

    async def _retrieve_steps(
        self, raw: RawInstance, queries: List[Tuple[RefinementAction, str]],
    ) -> List[SearchStep]:
        steps = []
        for turn, (action, query) in enumerate(queries, 1):
            documents = await self.retriever.retrieve(query, self.config.top_k, raw.candidates)
            kept = [d for d in documents if d.snippet][:self.config.top_k]
            steps.append(SearchStep(
                turn=turn,
                action=action,
                refined_query=query,
                documents=[replace(d, rank=rank) for rank, d in enumerate(kept, 1)],
            ))
        return steps

    async def build(self, raw: RawInstance) -> AugmentedInstance:
        """Build one instance; per-instance failures land in dropped_reason"""
        if raw.source.lower() in self.config.passthrough:
            return AugmentedInstance(
                raw=raw, y_new=raw.y_origin, answer_provenance=AnswerProvenance.VERBATIM,
            )
        try:
            if not raw.x_origin.strip():
                raise FormatViolation(f"instance {raw.id} has an empty input")
            category = self.classify(raw)
            raw = replace(raw, category=category)
            necessary, queries = await self.annotate_refinements(raw, category)
            steps = await self._retrieve_steps(raw, queries) if necessary else []
            if category == Category.MULTI_HOP and raw.support_ids and not covers_support(steps, raw.support_ids):
                raise AlignmentFailed(f"evidence for {raw.id} misses a supporting document")
            y_new = await self.regenerate_answer(raw, steps)
            instance = AugmentedInstance(raw=raw, steps=steps, y_new=y_new)
            self._check_instance(instance)
            return instance
        except RQRAGError as e:
            reason = getattr(e, "reason", type(e).__name__)
            logger.warning(f"dropping instance {raw.id}: {reason}: {e}")
            return AugmentedInstance(raw=raw, dropped_reason=reason)

    def _check_instance(self, instance: AugmentedInstance) -> None:
        trajectory = to_trajectory(instance)
        violations = validate(trajectory)
        if violations:
            raise FormatViolation("; ".join(violations))
        if not structurally_equal(parse(render(trajectory, self.tokens), self.tokens), trajectory):
            raise FormatViolation(f"instance {instance.raw.id} does not survive render/parse")

    async def build_all(self, raws: Sequence[RawInstance]) -> List[AugmentedInstance]:
        """Concurrent builds, results in input order"""
        slots = asyncio.Semaphore(self.config.workers)

        async def run(raw: RawInstance) -> AugmentedInstance:
            async with slots:
                return await self.build(raw)

        return list(await asyncio.gather(*(run(raw) for raw in raws)))

    async def build_pool(
        self,
        raws: Sequence[RawInstance],
        output_path: Union[str, Path],
        manifest_path: Union[str, Path],
        config_hash: str = "",
        retention: Sequence[float] = (),
        seed: int = 0,
        bin_width: int = 250,
    ) -> Dict:
        """
        Build every record and write the kept ones in input order, then a
        manifest with counts, drops, step distribution and token statistics.

        Each non-zero retention ratio also gets its own file next to
        output_path (``<stem>_retain_<percent>.jsonl``).
        """
        output_path = Path(output_path)
        built = await self.build_all(raws)
        kept = [i for i in built if i.dropped_reason is None]
        async with JsonlWriter(output_path) as writer:
            for instance in kept:
                await writer.write(instance.to_dict())

        manifest = build_manifest(built, config_hash)
        retention_files = {}
        for ratio in retention:
            if ratio == 0.0:
                continue
            name = f"{output_path.stem}_retain_{int(round(ratio * 100))}.jsonl"
            async with JsonlWriter(output_path.with_name(name)) as writer:
                for instance in apply_retention(kept, ratio, seed):
                    await writer.write(instance.to_dict())
            retention_files[str(ratio)] = name
        manifest["retention"] = retention_files

        augmented = token_stats(kept, bin_width=bin_width, tokens=self.tokens)
        original = token_stats(kept, bin_width=bin_width, raw=True, tokens=self.tokens)
        manifest["tokens"] = {
            "bin_width": bin_width,
            "mean_augmented": augmented.mean,
            "mean_raw": original.mean,
            "histogram": {str(k): v for k, v in augmented.histogram.items()},
        }
        await write_json(manifest_path, manifest)
        logger.info(
            f"dataset build finished: {manifest['emitted']} emitted, "
            f"{manifest['dropped']} dropped of {manifest['total']}"
        )
        return manifest


def build_manifest(instances: Sequence[AugmentedInstance], config_hash: str = "") -> Dict:
    kept = [i for i in instances if i.dropped_reason is None]
    categories: Counter = Counter()
    for instance in kept:
        if instance.answer_provenance == AnswerProvenance.VERBATIM:
            categories["passthrough"] += 1
        else:
            categories[instance.raw.category.value] += 1
    return {
        "total": len(instances),
        "emitted": len(kept),
        "dropped": len(instances) - len(kept),
        "categories": dict(sorted(categories.items())),
        "drops": dict(sorted(Counter(i.dropped_reason for i in instances if i.dropped_reason).items())),
        "steps": {str(k): v for k, v in sorted(Counter(len(i.steps) for i in kept).items())},
        "config_hash": config_hash,
    }


def apply_retention(instances: Sequence[AugmentedInstance], ratio: float, seed: int) -> List[AugmentedInstance]:
    """
    Give floor(ratio * N) regenerated instances back their original answer.

    N counts regenerated instances only; verbatim pass-through records are
    returned unchanged.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValueError(f"retention ratio must be in [0, 1], got {ratio}")
    eligible = [i for i, inst in enumerate(instances) if inst.answer_provenance == AnswerProvenance.REGENERATED]
    count = math.floor(ratio * len(eligible))
    chosen = set(random.Random(seed).sample(eligible, count))
    return [
        replace(inst, y_new=inst.raw.y_origin, answer_provenance=AnswerProvenance.ORIGINAL_RETAINED)
        if i in chosen else inst
        for i, inst in enumerate(instances)
    ]


def retention_sweep(
    instances: Sequence[AugmentedInstance], ratios: Sequence[float] = RETENTION_RATIOS, seed: int = 0,
) -> Dict[float, List[AugmentedInstance]]:
    return {ratio: apply_retention(instances, ratio, seed) for ratio in ratios}


def whitespace_count(text: str) -> int:
    return len(text.split())


@dataclass
class TokenStats:
    counts: List[int]
    histogram: Dict[int, int]
    bin_width: int

    @property
    def mean(self) -> float:
        return sum(self.counts) / len(self.counts) if self.counts else 0.0


def token_stats(
    instances: Sequence[AugmentedInstance],
    counter: Callable[[str], int] = whitespace_count,
    bin_width: int = 250,
    raw: bool = False,
    tokens: TokenTable = DEFAULT_TOKENS,
) -> TokenStats:
    """
    Token counts of rendered instances, binned by bin_width.

    With ``raw=True`` the raw counterpart (input and original answer) is
    measured instead.
    """
    if bin_width < 1:
        raise ValueError("bin_width must be >= 1")
    counts = []
    for inst in instances:
        if raw:
            trajectory = Trajectory(input=inst.raw.x_origin, final_answer=inst.raw.y_origin)
        else:
            trajectory = to_trajectory(inst)
        counts.append(counter(render(trajectory, tokens)))
    histogram = Counter((c // bin_width) * bin_width for c in counts)
    return TokenStats(counts=counts, histogram=dict(sorted(histogram.items())), bin_width=bin_width)
