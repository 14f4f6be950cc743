"""
Tree-decoding search.

Each node holds a partial trajectory. Expanding a node samples ``width``
continuations of its rendered prefix; an answer continuation closes a
trajectory, a refinement continuation triggers retrieval and opens a
deeper node. Levels are expanded breadth-first and sibling results are
merged in generator output order, so the trajectory list does not depend
on completion order.
"""

import asyncio
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, List, Optional, Tuple, Union

from loguru import logger

from .exceptions import (
    BudgetExhausted, GeneratorError, NoTrajectory, ProtocolError, RateLimited,
    RetrievalError, Unsupported,
)
from .generators.base import BaseGenerator
from .jsonl import write_jsonl
from .models import (
    Completion, DecodeParams, Document, RefinementAction, ScoredTrajectory,
    SearchConfig, SearchStep, TreeNode, Trajectory,
)
from .protocol import (
    DEFAULT_TOKENS, TokenTable, parse_action, render_evidence, render_prefix,
    to_record, validate,
)
from .retrieval.retrievers import BaseRetriever


@dataclass
class _RunState:
    """Per-run call accounting"""
    budget: int
    calls: int = 0

    def reserve(self) -> bool:
        if self.calls >= self.budget:
            return False
        self.calls += 1
        return True


def _answer_token_index(tokens: List[str], char_offset: int) -> int:
    """Index of the token holding character char_offset of their concatenation"""
    pos = 0
    for i, token in enumerate(tokens):
        pos += len(token)
        if pos > char_offset:
            return i
    return len(tokens)


class TreeSearchEngine:
    """
    Runs tree decoding for one question at a time.

    Args:
        generator: Completion backend
        retriever: Evidence backend for refined queries
        config: Width, depth, top-k and decoding settings
        tokens: Control token table
        ppl_scope: "full" scores evidence blocks through the generator
    """

    def __init__(
        self,
        generator: BaseGenerator,
        retriever: BaseRetriever,
        config: SearchConfig,
        tokens: TokenTable = DEFAULT_TOKENS,
        ppl_scope: str = "generated",
    ):
        self.generator = generator
        self.retriever = retriever
        self.config = config
        self.tokens = tokens
        self.ppl_scope = ppl_scope
        self._slots = asyncio.Semaphore(config.concurrency)
        # unsafe generators see one request at a time
        self._generator_lock = None if generator.concurrent_safe else asyncio.Lock()

    @property
    def decode_params(self) -> DecodeParams:
        stops = [self.tokens.evidence_open, self.tokens.end]
        extra = [s for s in self.config.decode.stop_sequences if s not in stops]
        return replace(self.config.decode, stop_sequences=stops + extra)

    async def _generate(self, prompt: str, n: int) -> List[Completion]:
        logger.debug(f"generator call: n={n}, prompt {len(prompt)} chars")
        if self._generator_lock is None:
            return await self.generator.complete_many(prompt, self.decode_params, n)
        async with self._generator_lock:
            return await self.generator.complete_many(prompt, self.decode_params, n)

    async def _score(self, prompt: str, target: str) -> List[float]:
        if self._generator_lock is None:
            return await self.generator.score_continuation(prompt, target)
        async with self._generator_lock:
            return await self.generator.score_continuation(prompt, target)

    async def _retrieve(self, query: str, candidates: Optional[List[Document]]) -> List[Document]:
        attempts = self.config.retries + 1
        for attempt in range(1, attempts + 1):
            try:
                documents = await self.retriever.retrieve(query, self.config.top_k, candidates)
                break
            except RetrievalError as e:
                if attempt == attempts:
                    raise
                wait = e.retry_after if isinstance(e, RateLimited) and e.retry_after else 0
                logger.warning(f"retrieval attempt {attempt}/{attempts} for {query!r} failed: {e}; retrying")
                if wait:
                    await asyncio.sleep(wait)
        kept = [d for d in documents if d.snippet][:self.config.top_k]
        return [replace(d, rank=rank) for rank, d in enumerate(kept, 1)]

    def _child_tokens(self, node: TreeNode, completion: Completion) -> List[Tuple[str, float]]:
        return list(node.partial.generated_tokens) + list(zip(completion.tokens, completion.log_probs))

    async def _child(
        self, node: TreeNode, completion: Completion, candidates: Optional[List[Document]],
    ) -> Optional[TreeNode]:
        """Turn one continuation into a child node, or None when it is dropped"""
        try:
            action, payload, offset = parse_action(completion.text, self.tokens)
        except ProtocolError as e:
            logger.warning(f"dropping unparseable continuation at depth {node.depth}: {e}")
            return None

        partial = node.partial
        generated = self._child_tokens(node, completion)
        if action == RefinementAction.ANSWER:
            answer_start = len(partial.generated_tokens) + _answer_token_index(completion.tokens, offset)
            return TreeNode(
                partial=replace(
                    partial,
                    steps=list(partial.steps),
                    final_answer=payload,
                    generated_tokens=generated,
                    answer_start=answer_start,
                    evidence_log_probs=list(partial.evidence_log_probs),
                ),
                depth=node.depth,
                terminal=True,
            )

        step = SearchStep(turn=node.depth + 1, action=action, refined_query=payload)
        child = TreeNode(
            partial=replace(
                partial,
                steps=list(partial.steps) + [step],
                generated_tokens=generated,
                evidence_log_probs=list(partial.evidence_log_probs),
            ),
            depth=node.depth + 1,
        )
        try:
            step.documents = await self._retrieve(payload, candidates)
        except RetrievalError as e:
            logger.warning(f"retrieval failed for {payload!r} ({e.backend}): {e}; branch excluded")
            child.failed = True
            return child
        if self.ppl_scope == "full":
            try:
                await self._score_evidence(child)
            except Unsupported:
                raise
            except GeneratorError as e:
                logger.warning(f"evidence scoring failed at depth {child.depth}: {e}; branch excluded")
                child.failed = True
        return child

    async def _score_evidence(self, child: TreeNode) -> None:
        block = render_evidence(child.partial.steps[-1].documents, self.tokens)
        full = render_prefix(child.partial, self.tokens)
        child.partial.evidence_log_probs.extend(await self._score(full[:-len(block)], block))

    async def expand(
        self,
        node: TreeNode,
        candidates: Optional[List[Document]] = None,
        _state: Optional[_RunState] = None,
    ) -> List[TreeNode]:
        """
        Sample width continuations of node and build its children.

        Exact-duplicate continuations collapse to the first occurrence.
        Children come back in generator output order.
        """
        if node.terminal:
            raise ValueError("cannot expand a terminal node")
        if node.depth >= self.config.max_depth:
            raise ValueError(f"node at depth {node.depth} is already at max depth")
        if _state is not None and not _state.reserve():
            raise BudgetExhausted(f"call budget of {_state.budget} reached")

        async with self._slots:
            completions = await self._generate(render_prefix(node.partial, self.tokens), self.config.width)

        seen = set()
        unique = []
        for completion in completions:
            if completion.text in seen:
                logger.debug("collapsing duplicate continuation")
                continue
            seen.add(completion.text)
            unique.append(completion)

        children = await asyncio.gather(*(self._child(node, c, candidates) for c in unique))
        node.children = [c for c in children if c is not None]
        return node.children

    async def _force_answer(self, node: TreeNode, state: _RunState) -> Optional[TreeNode]:
        """One answer-constrained generation for a non-terminal leaf at max depth"""
        if not state.reserve():
            logger.warning(f"call budget reached, leaf at depth {node.depth} gets no answer")
            return None
        opener = self.tokens.answer + " "
        prompt = render_prefix(node.partial, self.tokens) + opener
        try:
            async with self._slots:
                completion = (await self._generate(prompt, 1))[0]
            _, payload, _ = parse_action(opener + completion.text, self.tokens)
        except (GeneratorError, ProtocolError) as e:
            if isinstance(e, Unsupported):
                raise
            logger.warning(f"forced answer failed at depth {node.depth}: {e}")
            return None
        partial = node.partial
        child = TreeNode(
            partial=replace(
                partial,
                steps=list(partial.steps),
                final_answer=payload,
                generated_tokens=self._child_tokens(node, completion),
                answer_start=len(partial.generated_tokens),
                evidence_log_probs=list(partial.evidence_log_probs),
            ),
            depth=node.depth,
            terminal=True,
        )
        node.children = [child]
        return child

    async def _expand_branch(
        self, node: TreeNode, candidates: Optional[List[Document]], state: _RunState, reserved: bool,
    ) -> None:
        """Expansion of a non-root node; failures end the branch only"""
        if not reserved:
            logger.warning(f"call budget of {state.budget} reached, branch at depth {node.depth} aborted")
            node.failed = True
            return
        try:
            await self.expand(node, candidates)
        except (GeneratorError, RetrievalError, ProtocolError) as e:
            if isinstance(e, Unsupported):
                raise
            logger.warning(f"branch at depth {node.depth} failed: {e}")
            node.failed = True

    async def run(self, question: str, candidates: Optional[List[Document]] = None) -> List[Trajectory]:
        """
        Breadth-first search from question; returns completed trajectories
        in pre-order of the search tree.

        Raises:
            NoTrajectory: No branch produced an answer
            GeneratorError: The root call failed
        """
        if not question or not question.strip():
            raise ValueError("question must be non-empty")
        config = self.config
        state = _RunState(budget=config.call_budget or config.call_bound())
        root = TreeNode(partial=Trajectory(input=question))

        if config.max_depth == 0:
            await self._sample_root_answers(root, state)
        else:
            await self.expand(root, candidates, state)
            frontier = [c for c in root.children if not c.terminal and not c.failed]
            while frontier and frontier[0].depth < config.max_depth:
                # reservation order fixes which branches survive a tight budget
                reserved = [state.reserve() for _ in frontier]
                await asyncio.gather(*(
                    self._expand_branch(node, candidates, state, ok)
                    for node, ok in zip(frontier, reserved)
                ))
                frontier = [
                    c for node in frontier if not node.failed
                    for c in node.children if not c.terminal and not c.failed
                ]
            if frontier:
                await asyncio.gather(*(self._force_answer(node, state) for node in frontier))

        trajectories = []
        for t in self._collect(root):
            violations = validate(t, config)
            if violations:
                logger.warning(f"dropping invalid trajectory: {'; '.join(violations)}")
                continue
            trajectories.append(t)
        if not trajectories:
            raise NoTrajectory(f"no branch produced an answer for {question!r}")
        logger.info(f"search finished: {len(trajectories)} trajectories, {state.calls} generator calls")
        return trajectories

    async def _sample_root_answers(self, root: TreeNode, state: _RunState) -> None:
        """Depth-0 search: keep direct answers, discard refinements without retrieval"""
        state.reserve()
        async with self._slots:
            completions = await self._generate(render_prefix(root.partial, self.tokens), self.config.width)
        seen = set()
        for completion in completions:
            if completion.text in seen:
                continue
            seen.add(completion.text)
            try:
                action, _, _ = parse_action(completion.text, self.tokens)
            except ProtocolError as e:
                logger.warning(f"dropping unparseable root continuation: {e}")
                continue
            if action != RefinementAction.ANSWER:
                logger.debug(f"depth 0: discarding {action.value} continuation")
                continue
            root.children.append(await self._child(root, completion, None))
        if not root.children:
            forced = await self._force_answer(root, state)
            root.children = [forced] if forced else []

    def _collect(self, node: TreeNode) -> Iterator[Trajectory]:
        if node.failed:
            return
        if node.terminal:
            yield node.partial
            return
        for child in node.children:
            yield from self._collect(child)


async def dump_trajectories(scored: List[ScoredTrajectory], path: Union[str, Path]) -> None:
    """Write one dump record per scored trajectory"""
    await write_jsonl(path, [to_record(s) for s in scored])
