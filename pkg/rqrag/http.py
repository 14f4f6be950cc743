"""
Shared aiohttp plumbing for remote backends
"""

import asyncio
import time
from typing import Any, Dict, Optional

import aiohttp
from loguru import logger

from .exceptions import RateLimited


class TokenBucket:
    """
    Async token bucket: ``rate`` tokens per second, at most ``capacity`` banked.

    A rate of 0 disables limiting.
    """

    def __init__(self, rate: float = 0.0, capacity: Optional[float] = None):
        self.rate = rate
        self.capacity = capacity if capacity is not None else max(1.0, rate)
        self._tokens = self.capacity
        self._updated = time.monotonic()
        self._lock = asyncio.Lock()

    async def acquire(self) -> None:
        if self.rate <= 0:
            return
        async with self._lock:
            while True:
                now = time.monotonic()
                self._tokens = min(self.capacity, self._tokens + (now - self._updated) * self.rate)
                self._updated = now
                if self._tokens >= 1:
                    self._tokens -= 1
                    return
                wait = (1 - self._tokens) / self.rate
                logger.debug(f"rate limit: waiting {wait:.2f}s")
                await asyncio.sleep(wait)


class HttpBackend:
    """
    Base class for backends reached over HTTP.

    Owns one lazily created ClientSession with a per-host connection cap, an
    in-flight request semaphore and a token bucket.
    """

    name = "http"

    def __init__(
        self,
        timeout: int = 30,
        proxy: Optional[str] = None,
        max_in_flight: int = 8,
        rate_per_second: float = 0.0,
        headers: Optional[Dict[str, str]] = None,
    ):
        self.timeout = timeout
        self.proxy = proxy
        self.max_in_flight = max_in_flight
        self.headers = headers or {}
        self._bucket = TokenBucket(rate_per_second)
        self._in_flight = asyncio.Semaphore(max_in_flight)
        self._session: Optional[aiohttp.ClientSession] = None

    async def _get_session(self) -> aiohttp.ClientSession:
        """Get or create HTTP session"""
        if self._session is None or self._session.closed:
            connector = aiohttp.TCPConnector(limit=100, limit_per_host=self.max_in_flight)
            timeout = aiohttp.ClientTimeout(total=self.timeout)
            self._session = aiohttp.ClientSession(
                connector=connector,
                timeout=timeout,
                headers={"User-Agent": "rqrag/1.0", **self.headers},
            )
        return self._session

    async def _request_json(self, method: str, url: str, **kwargs: Any) -> Any:
        """Issue one rate-limited request and decode the JSON body"""
        await self._bucket.acquire()
        async with self._in_flight:
            session = await self._get_session()
            async with session.request(method, url, proxy=self.proxy, **kwargs) as response:
                self._raise_for_rate_limit(response)
                response.raise_for_status()
                return await response.json(content_type=None)

    async def _request_text(self, method: str, url: str, **kwargs: Any) -> str:
        await self._bucket.acquire()
        async with self._in_flight:
            session = await self._get_session()
            async with session.request(method, url, proxy=self.proxy, **kwargs) as response:
                self._raise_for_rate_limit(response)
                response.raise_for_status()
                return await response.text()

    def _raise_for_rate_limit(self, response: aiohttp.ClientResponse) -> None:
        if response.status != 429:
            return
        retry_after = response.headers.get("Retry-After")
        try:
            seconds = float(retry_after) if retry_after is not None else None
        except ValueError:
            seconds = None
        raise RateLimited(f"{self.name} rate limited the request", self.name, retry_after=seconds)

    async def close(self):
        """Close HTTP session and cleanup resources"""
        if self._session and not self._session.closed:
            await self._session.close()

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()
