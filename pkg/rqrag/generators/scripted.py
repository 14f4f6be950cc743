"""
Deterministic scripted generator for fixtures and tests.

Script files are line-delimited JSON. Completion entries::

    {"prompt": "<regex>", "choices": ["text", {"text": "...", "tokens": [...], "log_probs": [...]}]}

Scoring entries answer score_continuation::

    {"prompt": "<regex>", "target": "<exact target>", "log_probs": [...]}

Entries are tried in file order and the first whose regex is found in the
prompt wins, so more specific entries go first. Matching is stateless: the
same prompt always gets the same reply.
"""

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from loguru import logger

from ..exceptions import ScriptExhausted
from ..models import Completion, DecodeParams, FinishReason
from .base import BaseGenerator, apply_limits, split_tokens


@dataclass
class ScriptEntry:
    pattern: "re.Pattern"
    choices: List[Completion] = field(default_factory=list)
    target: Optional[str] = None
    log_probs: Optional[List[float]] = None


class ScriptedGenerator(BaseGenerator):
    """Replays scripted continuations; serialized (not concurrent-safe)"""

    name = "scripted"
    concurrent_safe = False

    def __init__(self, entries: List[Dict[str, Any]], default_log_prob: float = -1.0):
        if default_log_prob > 0:
            raise ValueError("default_log_prob must be <= 0")
        self.default_log_prob = default_log_prob
        self.entries = [self._load_entry(e) for e in entries]
        self.transcript: List[Tuple[str, int, List[str]]] = []

    @classmethod
    def from_file(cls, path: Union[str, Path], default_log_prob: float = -1.0) -> "ScriptedGenerator":
        entries = []
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line and not line.startswith("#"):
                    entries.append(json.loads(line))
        logger.debug(f"loaded {len(entries)} script entries from {path}")
        return cls(entries, default_log_prob=default_log_prob)

    @classmethod
    def replay(cls, choices: List[Union[str, Dict[str, Any]]], default_log_prob: float = -1.0) -> "ScriptedGenerator":
        """A script answering every prompt with the same choices"""
        return cls([{"prompt": "", "choices": choices}], default_log_prob=default_log_prob)

    def _load_entry(self, raw: Dict[str, Any]) -> ScriptEntry:
        pattern = re.compile(raw["prompt"], re.DOTALL)
        if "target" in raw:
            log_probs = [float(x) for x in raw["log_probs"]]
            if any(lp > 0 for lp in log_probs):
                raise ValueError("scripted log-probabilities must be <= 0")
            return ScriptEntry(pattern=pattern, target=raw["target"], log_probs=log_probs)
        return ScriptEntry(pattern=pattern, choices=[self._load_choice(c) for c in raw["choices"]])

    def _load_choice(self, raw: Union[str, Dict[str, Any]]) -> Completion:
        if isinstance(raw, str):
            raw = {"text": raw}
        text = raw["text"]
        tokens = raw.get("tokens") or split_tokens(text)
        if "".join(tokens) != text:
            raise ValueError(f"scripted tokens do not concatenate to text: {text!r}")
        log_probs = raw.get("log_probs")
        if log_probs is None:
            log_probs = [self.default_log_prob] * len(tokens)
        log_probs = [float(x) for x in log_probs]
        if len(log_probs) != len(tokens):
            raise ValueError(f"scripted tokens and log_probs differ in length: {text!r}")
        if any(lp > 0 for lp in log_probs):
            raise ValueError("scripted log-probabilities must be <= 0")
        return Completion(
            text=text,
            tokens=list(tokens),
            log_probs=log_probs,
            finish_reason=FinishReason(raw.get("finish_reason", FinishReason.END_OF_SEQUENCE.value)),
        )

    def _match(self, prompt: str) -> ScriptEntry:
        for entry in self.entries:
            if entry.target is None and entry.pattern.search(prompt):
                return entry
        raise ScriptExhausted(f"no script entry matches prompt ending {prompt[-80:]!r}", self.name)

    async def complete_many(self, prompt: str, params: DecodeParams, n: int) -> List[Completion]:
        self._check_request(prompt, n)
        entry = self._match(prompt)
        if n > len(entry.choices):
            raise ScriptExhausted(
                f"script entry /{entry.pattern.pattern}/ has {len(entry.choices)} choices, {n} requested",
                self.name,
            )
        completions = [apply_limits(c, params) for c in entry.choices[:n]]
        self.transcript.append((prompt, n, [c.text for c in completions]))
        return completions

    async def score_continuation(self, prompt: str, target: str) -> List[float]:
        if not target:
            raise ValueError("target must be non-empty")
        for entry in self.entries:
            if entry.target == target and entry.pattern.search(prompt):
                return list(entry.log_probs)
        return [self.default_log_prob] * len(split_tokens(target))
