"""
Engine configuration.

Values come from one JSON config file, then environment variables, then
command-line overrides. Relative paths are resolved against the config
file's directory.
"""

import copy
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from loguru import logger

from .dataset.builder import (
    DEFAULT_MAX_TURNS, DEFAULT_PASSTHROUGH, DEFAULT_SOURCE_MAP, BuildConfig,
)
from .exceptions import ConfigurationError
from .models import Category, DecodeParams, RetrievalSource, SearchConfig, Strategy
from .protocol import TokenTable
from .selection import SelectionConfig


# keys whose values are input paths, wherever they appear in the file
PATH_KEYS = ("script", "corpus", "pages", "prompt_dir", "ids", "benchmark", "pool", "rows")

# flag name -> search section key
_SEARCH_OVERRIDES = {
    "source": "source",
    "strategy": "strategy",
    "width": "width",
    "depth": "max_depth",
    "top_k": "top_k",
}

_ENV_OVERRIDES = (
    ("RQ_GENERATOR_URL", "generator", "url"),
    ("RQ_EMBED_URL", "embedder", "base_url"),
)


def _resolve_paths(node: Any, base_dir: Path) -> Any:
    if isinstance(node, dict):
        resolved = {}
        for key, value in node.items():
            if key in PATH_KEYS and isinstance(value, str):
                path = Path(value)
                if not path.is_absolute():
                    path = base_dir / path
                if not path.exists():
                    raise ConfigurationError(f"{key} path does not exist: {path}")
                resolved[key] = str(path)
            else:
                resolved[key] = _resolve_paths(value, base_dir)
        return resolved
    if isinstance(node, list):
        return [_resolve_paths(v, base_dir) for v in node]
    return node


def _search_config(section: Dict[str, Any]) -> SearchConfig:
    section = dict(section)
    try:
        decode = DecodeParams(**{"temperature": 0.7, **section.pop("decode", {})})
        if "source" in section:
            section["source"] = RetrievalSource(section["source"])
        if "strategy" in section:
            section["strategy"] = Strategy(section["strategy"])
        return SearchConfig(decode=decode, **section)
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid search section: {e}")


def _build_config(section: Dict[str, Any], default_top_k: int, workers: int) -> BuildConfig:
    try:
        source_map = dict(DEFAULT_SOURCE_MAP)
        source_map.update({k.lower(): Category(v) for k, v in section.get("source_map", {}).items()})
        max_turns = dict(DEFAULT_MAX_TURNS)
        max_turns.update({Category(k): int(v) for k, v in section.get("max_turns", {}).items()})
        passthrough = frozenset(s.lower() for s in section.get("passthrough", DEFAULT_PASSTHROUGH))
    except ValueError as e:
        raise ConfigurationError(f"invalid dataset section: {e}")
    return BuildConfig(
        source_map=source_map,
        passthrough=passthrough,
        max_turns=max_turns,
        top_k=int(section.get("top_k", default_top_k)),
        workers=workers,
        max_tokens=int(section.get("max_tokens", 512)),
        prompt_dir=section.get("prompt_dir"),
    )


@dataclass
class EngineConfig:
    """Effective configuration for one command"""
    tokens: TokenTable = field(default_factory=TokenTable)
    search: SearchConfig = field(default_factory=SearchConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    generator: Dict[str, Any] = field(default_factory=lambda: {"kind": "remote"})
    annotator: Dict[str, Any] = field(default_factory=lambda: {"kind": "openai", "model": "gpt-3.5-turbo-0125"})
    # bm25 options (corpus, k1, b); the backend kind is search.source
    retriever: Dict[str, Any] = field(default_factory=dict)
    embedder: Dict[str, Any] = field(default_factory=lambda: {"kind": "openai"})
    web: Dict[str, Any] = field(default_factory=lambda: {"kind": "duckduckgo"})
    dataset: BuildConfig = field(default_factory=BuildConfig)
    retention: List[float] = field(default_factory=lambda: [0.0])
    bin_width: int = 250
    evaluation: Dict[str, Any] = field(default_factory=dict)
    resilience: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    workers: int = 4
    seed: int = 0
    output_dir: Path = Path("output")
    base_dir: Path = Path(".")
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        """sha256 of the canonical JSON of the effective settings"""
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def output_path(self, name: Union[str, Path]) -> Path:
        """Path under output_dir; anything escaping it is refused"""
        root = self.output_dir.resolve()
        path = (root / name).resolve()
        if path != root and root not in path.parents:
            raise ConfigurationError(f"output {name} escapes the output directory {root}")
        path.parent.mkdir(parents=True, exist_ok=True)
        return path


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Dict[str, Any]] = None,
) -> EngineConfig:
    """
    Load the config file, apply environment variables and flag overrides.

    Args:
        path: JSON config file; defaults only when None
        overrides: Flag values (seed, source, strategy, width, depth, top_k); None entries are ignored

    Raises:
        ConfigurationError: Unreadable file, bad values or missing input paths
    """
    data: Dict[str, Any] = {}
    base_dir = Path(".").resolve()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigurationError(f"config file {path} is not valid JSON: {e}")
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a JSON object")
        base_dir = path.resolve().parent
        logger.debug(f"loaded config from {path}")

    data = copy.deepcopy(data)
    for var, section, key in _ENV_OVERRIDES:
        value = os.getenv(var)
        if value:
            data.setdefault(section, {})[key] = value

    for flag, value in (overrides or {}).items():
        if value is None:
            continue
        if flag == "seed":
            data["seed"] = int(value)
        elif flag in _SEARCH_OVERRIDES:
            data.setdefault("search", {})[_SEARCH_OVERRIDES[flag]] = value
        else:
            raise ConfigurationError(f"unknown override {flag}")

    resolved = _resolve_paths(data, base_dir)
    workers = int(resolved.get("workers", 4))
    if workers < 1:
        raise ConfigurationError("workers must be >= 1")

    try:
        tokens = TokenTable.from_dict(resolved.get("tokens"))
        selection = SelectionConfig(**resolved.get("selection", {}))
    except (TypeError, ValueError) as e:
        raise ConfigurationError(f"invalid config: {e}")

    search = _search_config(resolved.get("search", {}))
    dataset_section = resolved.get("dataset", {})
    output_dir = Path(resolved.get("output_dir", "output"))
    if not output_dir.is_absolute():
        output_dir = base_dir / output_dir

    defaults = EngineConfig()
    config = EngineConfig(
        tokens=tokens,
        search=search,
        selection=selection,
        generator=resolved.get("generator", defaults.generator),
        annotator=resolved.get("annotator", defaults.annotator),
        retriever=resolved.get("retriever", {}),
        embedder=resolved.get("embedder", defaults.embedder),
        web=resolved.get("web", defaults.web),
        dataset=_build_config(dataset_section, search.top_k, workers),
        retention=[float(r) for r in dataset_section.get("retention", [0.0])],
        bin_width=int(dataset_section.get("bin_width", 250)),
        evaluation=resolved.get("evaluation", {}),
        resilience=resolved.get("resilience", {}),
        workers=workers,
        seed=int(resolved.get("seed", 0)),
        output_dir=output_dir,
        base_dir=base_dir,
        raw=data,
    )
    if any(not 0.0 <= r <= 1.0 for r in config.retention):
        raise ConfigurationError("retention ratios must be in [0, 1]")
    return config
