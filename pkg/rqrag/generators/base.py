"""
Base generator interface
"""

import re
from abc import ABC, abstractmethod
from typing import List

from ..exceptions import Unsupported
from ..models import Completion, DecodeParams, FinishReason


_TOKEN_RE = re.compile(r"\s*\S+")


def split_tokens(text: str) -> List[str]:
    """
    Whitespace-attached tokenisation whose tokens concatenate back to text.

    Leading whitespace belongs to the following token; trailing whitespace
    is attached to the last token.
    """
    tokens = _TOKEN_RE.findall(text)
    if not tokens:
        return [text] if text else []
    consumed = sum(len(t) for t in tokens)
    if consumed < len(text):
        tokens[-1] += text[consumed:]
    return tokens


def apply_limits(completion: Completion, params: DecodeParams) -> Completion:
    """Cut a full continuation at the first stop sequence or at max_tokens"""
    text = ""
    tokens: List[str] = []
    log_probs: List[float] = []
    for token, lp in zip(completion.tokens, completion.log_probs):
        if len(tokens) >= params.max_tokens:
            return Completion(text=text, tokens=tokens, log_probs=log_probs,
                              finish_reason=FinishReason.MAX_TOKENS)
        tokens.append(token)
        log_probs.append(lp)
        text += token
        hits = [i for i in (text.find(s) for s in params.stop_sequences if s) if i >= 0]
        if hits:
            tokens, log_probs = _truncate(tokens, log_probs, min(hits))
            return Completion(text="".join(tokens), tokens=tokens, log_probs=log_probs,
                              finish_reason=FinishReason.STOP_TOKEN)
    return Completion(text=text, tokens=tokens, log_probs=log_probs, finish_reason=completion.finish_reason)


def _truncate(tokens: List[str], log_probs: List[float], cut: int):
    kept_tokens: List[str] = []
    kept_lps: List[float] = []
    pos = 0
    for token, lp in zip(tokens, log_probs):
        if pos >= cut:
            break
        piece = token[:cut - pos]
        kept_tokens.append(piece)
        kept_lps.append(lp)
        pos += len(token)
    return kept_tokens, kept_lps


class BaseGenerator(ABC):
    """
    Abstract completion service returning text plus per-token log-probabilities.

    Implementations that cannot take concurrent calls set ``concurrent_safe``
    to False; the engine then queues requests to them.
    """

    name = "generator"
    concurrent_safe = True

    async def complete(self, prompt: str, params: DecodeParams) -> Completion:
        """Return one continuation of prompt"""
        return (await self.complete_many(prompt, params, 1))[0]

    @abstractmethod
    async def complete_many(self, prompt: str, params: DecodeParams, n: int) -> List[Completion]:
        """
        Return exactly n continuations of prompt.

        Args:
            prompt: Non-empty prompt text
            params: Decoding parameters
            n: Number of continuations (>= 1)
        """
        pass

    async def score_continuation(self, prompt: str, target: str) -> List[float]:
        """Per-token log-probabilities of a fixed target given prompt"""
        raise Unsupported(f"{self.name} cannot score fixed targets", self.name)

    async def close(self):
        pass

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()

    @staticmethod
    def _check_request(prompt: str, n: int = 1) -> None:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        if n < 1:
            raise ValueError("n must be >= 1")
