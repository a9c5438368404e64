"""Image search engines: a live JSON-API client and an offline directory engine."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol
from urllib.parse import urlparse
from urllib.request import url2pathname

import requests

from ..errors import RetrievalError

IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".webp", ".bmp", ".gif")


@dataclass(frozen=True)
class SearchHit:
    rank: int
    url: str


class ImageSearchEngine(Protocol):
    engine_id: str

    def search(self, query: str, limit: int) -> list[SearchHit]: ...

    def fetch(self, url: str) -> bytes: ...


class RateLimiter:
    """Enforces a minimum interval between calls; thread-safe."""

    def __init__(self, min_interval: float = 0.0):
        self._min_interval = min_interval
        self._lock = threading.Lock()
        self._last = 0.0

    def wait(self) -> None:
        if self._min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            delay = self._last + self._min_interval - now
            if delay > 0:
                time.sleep(delay)
            self._last = time.monotonic()


class HttpImageSearch:
    """Client for a JSON image-search API (Google Custom Search style).

    Expects a response of the form ``{"items": [{"link": url}, ...]}``.
    The transport session is injectable so tests can replay recorded
    fixtures without a network.
    """

    def __init__(
        self,
        api_key: str,
        endpoint: str = "https://www.googleapis.com/customsearch/v1",
        engine_cx: str | None = None,
        session=None,
        query_interval: float = 0.0,
        timeout: float = 30.0,
    ):
        self.engine_id = "http-image-search"
        self._api_key = api_key
        self._endpoint = endpoint
        self._cx = engine_cx
        self._session = session or requests.Session()
        self._limiter = RateLimiter(query_interval)
        self._timeout = timeout

    def search(self, query: str, limit: int) -> list[SearchHit]:
        self._limiter.wait()
        params = {"q": query, "key": self._api_key, "searchType": "image", "num": limit}
        if self._cx:
            params["cx"] = self._cx
        try:
            resp = self._session.get(self._endpoint, params=params, timeout=self._timeout)
            resp.raise_for_status()
            doc = resp.json()
        except requests.RequestException as exc:
            raise RetrievalError(f"image search failed for '{query}': {exc}") from exc
        except ValueError as exc:
            raise RetrievalError(f"image search returned non-JSON for '{query}': {exc}") from exc
        items = doc.get("items", [])
        return [SearchHit(rank=i, url=item["link"]) for i, item in enumerate(items[:limit])]

    def fetch(self, url: str) -> bytes:
        resp = self._session.get(url, timeout=self._timeout)
        resp.raise_for_status()
        return resp.content


def slugify(text: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in text.strip().lower()).strip("_")


class DirectoryImageSearch:
    """Offline engine: one sub-directory of images per query, ordered by name.

    Lets tests and air-gapped runs exercise the full retrieval path. Query
    folders are matched by slug (``"aerial boat"`` -> ``aerial_boat``).
    """

    def __init__(self, root: str | Path):
        self.engine_id = "directory-search"
        self._root = Path(root)
        if not self._root.is_dir():
            raise RetrievalError(f"search directory {self._root} does not exist")

    def search(self, query: str, limit: int) -> list[SearchHit]:
        folder = self._root / slugify(query)
        if not folder.is_dir():
            return []
        files = sorted(
            p for p in folder.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
        )
        return [SearchHit(rank=i, url=p.resolve().as_uri()) for i, p in enumerate(files[:limit])]

    def fetch(self, url: str) -> bytes:
        parsed = urlparse(url)
        if parsed.scheme != "file":
            raise RetrievalError(f"directory engine can only fetch file:// urls, got {url}")
        return Path(url2pathname(parsed.path)).read_bytes()
