"""
Chat-completions backend on the OpenAI SDK.

Serves as the annotator during dataset construction (temperature 0) and as
an optional generator when the endpoint exposes token log-probabilities.
"""

import asyncio
import os
from typing import Any, Dict, List, Optional

import openai
from loguru import logger
from openai import AsyncOpenAI

from ..exceptions import EndpointUnavailable, MalformedResponse
from ..models import Completion, DecodeParams, FinishReason
from .base import BaseGenerator, split_tokens


class OpenAIChatGenerator(BaseGenerator):
    name = "openai"
    concurrent_safe = True

    # the chat API accepts at most four stop sequences
    MAX_STOP = 4

    def __init__(
        self,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        base_url: Optional[str] = None,
        system_prompt: Optional[str] = None,
        max_in_flight: int = 8,
        timeout: int = 60,
    ):
        self.model = model or os.getenv("MODEL_NAME", "gpt-3.5-turbo-0125")
        self.system_prompt = system_prompt
        self.client = AsyncOpenAI(
            api_key=api_key or os.getenv("OPENAI_API_KEY"),
            base_url=base_url or os.getenv("MODEL_BASE_URL") or None,
            timeout=timeout,
        )
        self._in_flight = asyncio.Semaphore(max_in_flight)

    def _build_messages(self, prompt: str) -> List[Dict[str, str]]:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        return messages

    async def complete_many(self, prompt: str, params: DecodeParams, n: int) -> List[Completion]:
        self._check_request(prompt, n)
        if len(params.stop_sequences) > self.MAX_STOP:
            logger.warning(f"{self.name}: only the first {self.MAX_STOP} stop sequences are sent")
        try:
            async with self._in_flight:
                response = await self.client.chat.completions.create(
                    model=self.model,
                    messages=self._build_messages(prompt),
                    temperature=params.temperature,
                    max_tokens=params.max_tokens,
                    stop=list(params.stop_sequences[:self.MAX_STOP]) or None,
                    n=n,
                    logprobs=params.want_log_probs,
                )
        except (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError) as e:
            raise EndpointUnavailable(f"{self.model} unavailable: {e}", self.name)
        except openai.APIStatusError as e:
            raise EndpointUnavailable(f"{self.model} returned status {e.status_code}", self.name)

        if len(response.choices) != n:
            raise MalformedResponse(f"asked for {n} choices, got {len(response.choices)}", self.name)
        return [self._parse_choice(choice, params.want_log_probs) for choice in response.choices]

    def _parse_choice(self, choice: Any, want_log_probs: bool) -> Completion:
        text = choice.message.content or ""
        content = getattr(choice.logprobs, "content", None) if choice.logprobs else None
        if content:
            tokens = [item.token for item in content]
            log_probs = [min(float(item.logprob), 0.0) for item in content]
            if "".join(tokens) != text:
                # byte-level tokens need not concatenate to the decoded text
                tokens = split_tokens(text)
                log_probs = _spread(log_probs, len(tokens))
        elif want_log_probs:
            raise MalformedResponse("log-probabilities requested but not returned", self.name)
        else:
            # log-probs were not asked for; placeholders keep the lengths aligned
            tokens = split_tokens(text)
            log_probs = [0.0] * len(tokens)
        finish = {
            "stop": FinishReason.STOP_TOKEN,
            "length": FinishReason.MAX_TOKENS,
        }.get(choice.finish_reason, FinishReason.END_OF_SEQUENCE)
        return Completion(text=text, tokens=tokens, log_probs=log_probs, finish_reason=finish)

    async def close(self):
        await self.client.close()


def _spread(log_probs: List[float], count: int) -> List[float]:
    """Redistribute a total log-probability evenly over count tokens"""
    if count == 0:
        return []
    total = sum(log_probs)
    return [total / count] * count
