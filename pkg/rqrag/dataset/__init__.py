"""
Construction of search-augmented training instances
"""

from .builder import (
    DEFAULT_MAX_TURNS, DEFAULT_PASSTHROUGH, DEFAULT_SOURCE_MAP, RETENTION_RATIOS,
    BuildConfig, DatasetBuilder, TokenStats, apply_retention, build_manifest, classify,
    parse_annotation, retention_sweep, split_conversation, to_trajectory, token_stats,
    whitespace_count,
)
from .templates import PROMPT_DIR, PromptSet, fill, load_prompts

__all__ = [
    "DEFAULT_MAX_TURNS",
    "DEFAULT_PASSTHROUGH",
    "DEFAULT_SOURCE_MAP",
    "RETENTION_RATIOS",
    "BuildConfig",
    "DatasetBuilder",
    "TokenStats",
    "apply_retention",
    "build_manifest",
    "classify",
    "parse_annotation",
    "retention_sweep",
    "split_conversation",
    "to_trajectory",
    "token_stats",
    "whitespace_count",
    "PROMPT_DIR",
    "PromptSet",
    "fill",
    "load_prompts",
]
