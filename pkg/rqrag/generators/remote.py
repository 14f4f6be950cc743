"""
HTTP completion client.

Wire contract::

    POST <url>
    {"prompt": str, "max_tokens": int, "temperature": float, "stop": [str],
     "logprobs": bool, "n": int}

    200 {"choices": [{"text": str, "tokens": [str], "token_logprobs": [float],
                      "finish_reason": str}]}

OpenAI-style choices that nest ``tokens``/``token_logprobs`` under a
``logprobs`` object are accepted too.
"""

import asyncio
import os
from typing import Any, Dict, List, Optional

import aiohttp
from loguru import logger

from ..exceptions import EndpointUnavailable, MalformedResponse, RateLimited, Unsupported
from ..http import HttpBackend
from ..models import Completion, DecodeParams, FinishReason
from .base import BaseGenerator


# float noise from servers occasionally yields tiny positive log-probs
_LOG_PROB_TOLERANCE = 1e-6

_FINISH_REASONS = {
    "stop": FinishReason.STOP_TOKEN,
    "length": FinishReason.MAX_TOKENS,
}


class RemoteGenerator(HttpBackend, BaseGenerator):
    """Completion endpoint client; concurrent-safe up to ``max_in_flight`` requests"""

    name = "remote"
    concurrent_safe = True

    def __init__(
        self,
        url: Optional[str] = None,
        model: Optional[str] = None,
        api_key: Optional[str] = None,
        **kwargs: Any,
    ):
        api_key = api_key or os.getenv("RQ_GENERATOR_KEY")
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else None
        super().__init__(headers=headers, **kwargs)
        self.url = url or os.getenv("RQ_GENERATOR_URL")
        if not self.url:
            raise EndpointUnavailable("no generator URL configured (RQ_GENERATOR_URL)", self.name)
        self.model = model

    def _body(self, prompt: str, params: DecodeParams, n: int) -> Dict[str, Any]:
        body: Dict[str, Any] = {
            "prompt": prompt,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "stop": list(params.stop_sequences),
            "logprobs": params.want_log_probs,
            "n": n,
        }
        if self.model:
            body["model"] = self.model
        return body

    async def _post(self, body: Dict[str, Any]) -> Dict[str, Any]:
        try:
            data = await self._request_json("POST", self.url, json=body)
        except RateLimited as e:
            raise EndpointUnavailable(f"{self.url} is rate limiting (retry after {e.retry_after})", self.name)
        except aiohttp.ClientResponseError as e:
            if e.status in (400, 404, 422, 501) and body.get("echo"):
                raise Unsupported(f"{self.url} cannot score fixed targets ({e.status})", self.name)
            raise EndpointUnavailable(f"{self.url} returned status {e.status}", self.name)
        except (aiohttp.ClientError, asyncio.TimeoutError) as e:
            raise EndpointUnavailable(f"{self.url} unreachable: {e}", self.name)
        if not isinstance(data, dict) or not isinstance(data.get("choices"), list):
            raise MalformedResponse("response has no choices list", self.name)
        return data

    async def complete_many(self, prompt: str, params: DecodeParams, n: int) -> List[Completion]:
        self._check_request(prompt, n)
        data = await self._post(self._body(prompt, params, n))
        choices = data["choices"]
        if len(choices) != n:
            raise MalformedResponse(f"asked for {n} choices, got {len(choices)}", self.name)
        completions = [self._parse_choice(c, params.want_log_probs) for c in choices]
        logger.debug(f"{self.name}: {n} completion(s) for prompt of {len(prompt)} chars")
        return completions

    async def score_continuation(self, prompt: str, target: str) -> List[float]:
        if not target:
            raise ValueError("target must be non-empty")
        body = self._body(prompt + target, DecodeParams(max_tokens=1, temperature=0.0), 1)
        body.update({"max_tokens": 0, "echo": True})
        data = await self._post(body)
        if not data["choices"]:
            raise MalformedResponse("scoring response has no choices", self.name)
        tokens, log_probs = self._token_fields(data["choices"][0])
        if tokens is None or log_probs is None:
            raise MalformedResponse("scoring response lacks tokens/token_logprobs", self.name)

        # walk back from the end until the target's characters are covered
        covered = 0
        start = len(tokens)
        while start > 0 and covered < len(target):
            start -= 1
            covered += len(tokens[start])
        scores = log_probs[start:]
        if any(lp is None for lp in scores):
            raise MalformedResponse("scoring response has null log-probs inside the target", self.name)
        return [self._clamp(float(lp)) for lp in scores]

    @staticmethod
    def _token_fields(choice: Dict[str, Any]):
        tokens = choice.get("tokens")
        log_probs = choice.get("token_logprobs")
        nested = choice.get("logprobs")
        if tokens is None and isinstance(nested, dict):
            tokens = nested.get("tokens")
            log_probs = nested.get("token_logprobs")
        return tokens, log_probs

    def _parse_choice(self, choice: Dict[str, Any], want_log_probs: bool) -> Completion:
        if not isinstance(choice, dict) or not isinstance(choice.get("text"), str):
            raise MalformedResponse("choice without text", self.name)
        text = choice["text"]
        tokens, log_probs = self._token_fields(choice)
        if tokens is None or log_probs is None:
            if want_log_probs:
                raise MalformedResponse("log-probabilities requested but not returned", self.name)
            tokens, log_probs = [], []
        if len(tokens) != len(log_probs):
            raise MalformedResponse("tokens and token_logprobs differ in length", self.name)
        if tokens and "".join(tokens) != text:
            raise MalformedResponse("tokens do not concatenate to text", self.name)
        try:
            log_probs = [self._clamp(float(lp)) for lp in log_probs]
        except (TypeError, ValueError):
            raise MalformedResponse("non-numeric token log-probability", self.name)
        return Completion(
            text=text,
            tokens=list(tokens),
            log_probs=log_probs,
            finish_reason=_FINISH_REASONS.get(choice.get("finish_reason"), FinishReason.END_OF_SEQUENCE),
        )

    def _clamp(self, lp: float) -> float:
        if lp > _LOG_PROB_TOLERANCE:
            raise MalformedResponse(f"positive log-probability {lp}", self.name)
        return min(lp, 0.0)
