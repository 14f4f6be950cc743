"""
Core RQRAG class
"""

from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

from loguru import logger

from .config import EngineConfig
from .dataset.builder import DatasetBuilder
from .engine import TreeSearchEngine, dump_trajectories
from .evaluation import TASKS, load_ids, run_benchmark, sample_items, subset_by_ids
from .exceptions import ConfigurationError, EmptyInput, RQRAGError
from .generators import BaseGenerator, OpenAIChatGenerator, RemoteGenerator, ScriptedGenerator
from .models import (
    BenchmarkItem, Document, RawInstance, Report, RetrievalSource,
    ScoredTrajectory,
)
from .retrieval import (
    BaseRetriever, BaseSearchClient, Bm25Retriever, DuckDuckGoSearch, Embedder,
    EmbeddingRetriever, HashingEmbedder, JsonSearchClient, OpenAIEmbedder, StaticSearch,
    WebRetriever, load_corpus,
)
from .selection import score, select


def build_generator(spec: Dict[str, Any]) -> BaseGenerator:
    kind = spec.get("kind", "remote")
    if kind == "scripted":
        if "script" not in spec:
            raise ConfigurationError("scripted generator needs a script file")
        return ScriptedGenerator.from_file(spec["script"], default_log_prob=float(spec.get("default_log_prob", -1.0)))
    if kind == "remote":
        return RemoteGenerator(
            url=spec.get("url"),
            model=spec.get("model"),
            max_in_flight=int(spec.get("max_in_flight", 8)),
            timeout=int(spec.get("timeout", 60)),
            rate_per_second=float(spec.get("rate_per_second", 0.0)),
            proxy=spec.get("proxy"),
        )
    if kind == "openai":
        return OpenAIChatGenerator(
            model=spec.get("model"),
            base_url=spec.get("base_url"),
            system_prompt=spec.get("system_prompt"),
            max_in_flight=int(spec.get("max_in_flight", 8)),
            timeout=int(spec.get("timeout", 60)),
        )
    raise ConfigurationError(f"unknown generator kind {kind!r}")


def build_search_client(spec: Dict[str, Any]) -> BaseSearchClient:
    kind = spec.get("kind", "duckduckgo")
    if kind == "duckduckgo":
        options = {k: spec[k] for k in ("url", "region", "proxy", "timeout", "rate_per_second") if k in spec}
        return DuckDuckGoSearch(**options)
    if kind == "json":
        if "url" not in spec:
            raise ConfigurationError("json search client needs a url")
        options = {k: spec[k] for k in ("key_header", "query_param", "count_param", "proxy", "timeout",
                                        "rate_per_second") if k in spec}
        return JsonSearchClient(spec["url"], **options)
    if kind == "static":
        if "pages" not in spec:
            raise ConfigurationError("static search needs a pages file")
        return StaticSearch.from_file(spec["pages"])
    raise ConfigurationError(f"unknown web search kind {kind!r}")


def build_embedder(spec: Dict[str, Any]) -> Embedder:
    kind = spec.get("kind", "openai")
    if kind == "openai":
        return OpenAIEmbedder(
            model=spec.get("model", "text-embedding-3-large"),
            base_url=spec.get("base_url"),
            batch_size=int(spec.get("batch_size", 64)),
        )
    if kind == "hashing":
        return HashingEmbedder(dimension=int(spec.get("dimension", 256)))
    raise ConfigurationError(f"unknown embedder kind {kind!r}")


def build_retriever(
    source: RetrievalSource, config: EngineConfig, web: Optional[Dict[str, Any]] = None,
) -> BaseRetriever:
    if source == RetrievalSource.BM25_CORPUS:
        options = config.retriever
        index = load_corpus(options["corpus"]) if "corpus" in options else None
        return Bm25Retriever(index, k1=float(options.get("k1", 1.2)), b=float(options.get("b", 0.75)))
    if source == RetrievalSource.EMBEDDING_CANDIDATES:
        return EmbeddingRetriever(build_embedder(config.embedder))
    return WebRetriever(build_search_client(web or config.web))


@dataclass
class InferenceResult:
    question: str
    answer: str
    selected: ScoredTrajectory
    scored: List[ScoredTrajectory] = field(default_factory=list)


class RQRAG:
    """
    Entry point wiring configuration to backends and pipelines.

    Backends are built from the config on first use unless passed in.

    Example:
        >>> async with RQRAG(load_config("fixtures/scripted.cfg")) as rag:
        >>>     result = await rag.infer("Who wrote Hamlet?")
        >>>     print(result.answer)
    """

    def __init__(
        self,
        config: EngineConfig,
        generator: Optional[BaseGenerator] = None,
        retriever: Optional[BaseRetriever] = None,
        annotator: Optional[BaseGenerator] = None,
    ):
        self.config = config
        self._generator = generator
        self._retriever = retriever
        self._annotator = annotator
        self._engine: Optional[TreeSearchEngine] = None

    @property
    def generator(self) -> BaseGenerator:
        if self._generator is None:
            self._generator = build_generator(self.config.generator)
            logger.info(f"generator backend: {self._generator.name}")
        return self._generator

    @property
    def retriever(self) -> BaseRetriever:
        if self._retriever is None:
            self._retriever = build_retriever(self.config.search.source, self.config)
            logger.info(f"retrieval source: {self.config.search.source.value}")
        return self._retriever

    @property
    def annotator(self) -> BaseGenerator:
        if self._annotator is None:
            self._annotator = build_generator(self.config.annotator)
            logger.info(f"annotator backend: {self._annotator.name}")
        return self._annotator

    @property
    def engine(self) -> TreeSearchEngine:
        if self._engine is None:
            self._engine = TreeSearchEngine(
                self.generator, self.retriever, self.config.search,
                self.config.tokens, self.config.selection.ppl_scope,
            )
        return self._engine

    def _score_all(self, question: str, trajectories) -> List[ScoredTrajectory]:
        scored = []
        for t in trajectories:
            try:
                scored.append(score(t, self.config.selection))
            except RQRAGError as e:
                logger.warning(f"unscorable trajectory for {question!r}: {e}")
        if not scored:
            raise EmptyInput(f"no scorable trajectory for {question!r}")
        return scored

    async def infer(self, question: str, candidates: Optional[List[Document]] = None) -> InferenceResult:
        """Search, score and select the answer for one question"""
        trajectories = await self.engine.run(question, candidates)
        scored = self._score_all(question, trajectories)
        selected = select(self.config.search.strategy, scored, self.config.selection)
        return InferenceResult(
            question=question,
            answer=selected.answer,
            selected=selected,
            scored=scored,
        )

    async def infer_many(self, questions: Sequence[str], dump_name: str = "trajectories.jsonl") -> List[InferenceResult]:
        results = []
        for question in questions:
            results.append(await self.infer(question))
        await dump_trajectories([s for r in results for s in r.scored], self.config.output_path(dump_name))
        return results

    async def build_dataset(
        self,
        raws: Sequence[RawInstance],
        output_name: str = "dataset.jsonl",
        manifest_name: str = "manifest.json",
    ) -> Dict[str, Any]:
        """Build the augmented pool plus the configured retention variants"""
        builder = DatasetBuilder(self.annotator, self.retriever, self.config.dataset, self.config.tokens)
        return await builder.build_pool(
            raws,
            self.config.output_path(output_name),
            self.config.output_path(manifest_name),
            config_hash=self.config.config_hash,
            retention=self.config.retention,
            seed=self.config.seed,
            bin_width=self.config.bin_width,
        )

    def prepare_items(self, items: Sequence[BenchmarkItem], task: str = "") -> List[BenchmarkItem]:
        """Apply the id-list subset and the seeded sample configured for the task"""
        options = self.config.evaluation
        items = list(items)
        if options.get("ids"):
            items = subset_by_ids(items, load_ids(options["ids"]))
        sample_size = options.get("sample_size")
        if sample_size is None and task in TASKS:
            sample_size = TASKS[task].sample_size
        if sample_size:
            items = sample_items(items, int(sample_size), self.config.seed)
        return items

    def task_metric(self, task: str = "") -> str:
        if self.config.evaluation.get("metric"):
            return self.config.evaluation["metric"]
        return TASKS[task].metric if task in TASKS else "match"

    async def evaluate(
        self,
        items: Sequence[BenchmarkItem],
        task: str = "",
        retriever: Optional[BaseRetriever] = None,
    ) -> Report:
        return await run_benchmark(
            self.prepare_items(items, task),
            self.config.search,
            self.generator,
            retriever or self.retriever,
            metric=self.task_metric(task),
            selection=self.config.selection,
            tokens=self.config.tokens,
            workers=self.config.workers,
            config_hash=self.config.config_hash,
            task=task,
        )

    async def resilience_rows(self, benchmarks: Dict[str, Sequence[BenchmarkItem]]) -> Dict[str, List[float]]:
        """
        Score every task once per configured retrieval source; the row value
        is the score of the configured strategy.
        """
        sources = self.config.resilience.get("sources", {})
        if len(sources) < 2:
            raise ConfigurationError("resilience needs at least two sources under resilience.sources")
        strategy = self.config.search.strategy.value
        rows: Dict[str, List[float]] = {}
        for name, spec in sources.items():
            source = RetrievalSource(spec.get("source", "web"))
            retriever = build_retriever(source, self.config, spec.get("web"))
            try:
                rows[name] = [
                    (await self.evaluate(items, task, retriever)).strategy_scores[strategy]
                    for task, items in benchmarks.items()
                ]
            finally:
                await retriever.close()
            logger.info(f"source {name}: {rows[name]}")
        return rows

    async def close(self):
        """Close every backend that was opened"""
        for backend in (self._generator, self._retriever, self._annotator):
            if backend is None:
                continue
            try:
                await backend.close()
            except Exception as e:
                logger.error(f"Error closing backend: {e}")

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()
