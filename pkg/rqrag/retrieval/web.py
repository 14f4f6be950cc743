"""
Web-search clients returning title / snippet / url, never scraping result pages
"""

import asyncio
import json
import os
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Union
from urllib.parse import parse_qs, urlparse

import aiohttp
from bs4 import BeautifulSoup
from loguru import logger

from ..exceptions import RateLimited, SearchUnavailable
from ..http import HttpBackend
from ..models import Document


class BaseSearchClient(ABC):
    """Search service contract: query in, list of {title, snippet, url} out"""

    name = "search"

    @abstractmethod
    async def search(self, query: str, limit: int) -> List[Dict[str, str]]:
        pass

    async def close(self):
        pass


class DuckDuckGoSearch(HttpBackend, BaseSearchClient):
    """DuckDuckGo HTML results page"""

    name = "duckduckgo"

    def __init__(self, url: str = "https://html.duckduckgo.com/html/", region: str = "wt-wt", **kwargs: Any):
        kwargs.setdefault("rate_per_second", 1.0)
        super().__init__(**kwargs)
        self.url = url
        self.region = region

    async def search(self, query: str, limit: int) -> List[Dict[str, str]]:
        try:
            await self._bucket.acquire()
            async with self._in_flight:
                session = await self._get_session()
                async with session.post(self.url, data={"q": query, "kl": self.region}, proxy=self.proxy) as response:
                    self._raise_for_rate_limit(response)
                    # DuckDuckGo answers throttled clients with 202 and a challenge page
                    if response.status == 202:
                        raise RateLimited("duckduckgo served a challenge page", self.name)
                    response.raise_for_status()
                    html = await response.text()
        except (aiohttp.ClientError, asyncio.TimeoutError) as e:
            raise SearchUnavailable(f"duckduckgo search failed: {e}", self.name)
        return parse_duckduckgo_html(html)[:limit]


def _decode_redirect(href: str) -> str:
    if not href:
        return ""
    parsed = urlparse(href if not href.startswith("//") else "https:" + href)
    target = parse_qs(parsed.query).get("uddg")
    return target[0] if target else href


def parse_duckduckgo_html(html: str) -> List[Dict[str, str]]:
    soup = BeautifulSoup(html, "lxml")
    results = []
    for block in soup.select("div.result"):
        if "result--ad" in (block.get("class") or []):
            continue
        link = block.select_one("a.result__a")
        if link is None:
            continue
        snippet = block.select_one(".result__snippet")
        results.append({
            "title": link.get_text(" ", strip=True),
            "snippet": snippet.get_text(" ", strip=True) if snippet else "",
            "url": _decode_redirect(link.get("href", "")),
        })
    return results


class JsonSearchClient(HttpBackend, BaseSearchClient):
    """
    JSON search API. Accepts ``{"results": [{title, snippet, url}]}`` as well
    as Serper ``organic`` and Bing ``webPages.value`` payloads.
    """

    name = "json-search"

    def __init__(
        self,
        url: str,
        api_key: Optional[str] = None,
        key_header: str = "X-API-KEY",
        query_param: str = "q",
        count_param: str = "count",
        **kwargs: Any,
    ):
        api_key = api_key or os.getenv("RQ_SEARCH_KEY")
        headers = {key_header: api_key} if api_key else None
        super().__init__(headers=headers, **kwargs)
        self.url = url
        self.query_param = query_param
        self.count_param = count_param

    async def search(self, query: str, limit: int) -> List[Dict[str, str]]:
        params = {self.query_param: query, self.count_param: str(limit)}
        try:
            data = await self._request_json("GET", self.url, params=params)
        except aiohttp.ClientResponseError as e:
            raise SearchUnavailable(f"search API returned status {e.status}", self.name)
        except (aiohttp.ClientError, asyncio.TimeoutError) as e:
            raise SearchUnavailable(f"search API unreachable: {e}", self.name)
        return parse_search_payload(data)[:limit]


def parse_search_payload(data: Any) -> List[Dict[str, str]]:
    if not isinstance(data, dict):
        raise SearchUnavailable("search payload is not an object", "json-search")
    if "results" in data:
        items = data["results"]
    elif "organic" in data:
        items = data["organic"]
    elif "webPages" in data:
        items = data["webPages"].get("value", [])
    else:
        items = []
    return [
        {
            "title": item.get("title", item.get("name", "")),
            "snippet": item.get("snippet", ""),
            "url": item.get("url", item.get("link", "")),
        }
        for item in items
    ]


class StaticSearch(BaseSearchClient):
    """Stored query -> results pages, for offline runs and fixtures"""

    name = "static"

    def __init__(self, pages: Dict[str, List[Dict[str, str]]]):
        self.pages = pages

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "StaticSearch":
        pages = {}
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    record = json.loads(line)
                    pages[record["query"]] = record["results"]
        return cls(pages)

    async def search(self, query: str, limit: int) -> List[Dict[str, str]]:
        if query not in self.pages:
            logger.debug(f"static search has no page for {query!r}")
        return list(self.pages.get(query, []))[:limit]


async def web_search(query: str, k: int, client: BaseSearchClient) -> List[Document]:
    """Up to k results in page order; entries without a snippet are skipped"""
    if k < 1:
        raise ValueError("k must be >= 1")
    results = await client.search(query, k)
    documents = []
    for item in results:
        if not item.get("snippet"):
            logger.debug(f"{client.name}: skipping result without snippet: {item.get('url')}")
            continue
        documents.append(Document(
            title=item.get("title", ""),
            snippet=item["snippet"],
            locator=item.get("url", ""),
            rank=len(documents) + 1,
        ))
        if len(documents) == k:
            break
    return documents
