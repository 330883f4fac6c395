"""Web-search backends and the fixture implementation used for offline runs.

A search backend is anything with a ``kind`` string and a
``search(query, m, country=..., language=...) -> list of raw entries``
method, where a raw entry is a dict with title/url/snippet. The module-level
:func:`search` operation turns raw entries into ranked SearchResult values
and logs shortfalls.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass
from pathlib import Path

from ..errors import MissingFile

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchResult:
    title: str
    url: str
    snippet: str
    rank: int
    source_query: str

    def __post_init__(self) -> None:
        if not self.url:
            raise ValueError("search result url must be nonempty")
        if self.rank < 1:
            raise ValueError("search result rank must be >= 1")

    def to_dict(self) -> dict:
        return {
            "title": self.title,
            "url": self.url,
            "snippet": self.snippet,
            "rank": self.rank,
            "source_query": self.source_query,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchResult":
        return cls(
            title=d.get("title", ""),
            url=d["url"],
            snippet=d.get("snippet", ""),
            rank=int(d["rank"]),
            source_query=d["source_query"],
        )


def query_slug(query: str) -> str:
    """Filesystem-safe slug used to name fixture files for a query."""
    slug = re.sub(r"[^a-z0-9]+", "-", query.lower()).strip("-")
    return slug or "empty"


class FixtureSearchBackend:
    """Reads results from a directory of per-query JSON fixture files.

    Each file is named ``<slug-of-query>.json`` and holds a JSON array of
    ``{title, url, snippet}`` objects. Queries without a file yield no
    results, which the caller records as a shortfall.
    """

    kind = "fixture"

    def __init__(self, root) -> None:
        self.root = Path(root)
        if not self.root.is_dir():
            raise MissingFile(self.root)
        self.calls = 0
        self._lock = threading.Lock()

    def search(self, query: str, m: int, *, country=None, language=None) -> list:
        with self._lock:
            self.calls += 1
        path = self.root / f"{query_slug(query)}.json"
        if not path.is_file():
            return []
        entries = json.loads(path.read_text("utf-8"))
        if not isinstance(entries, list):
            raise ValueError(f"fixture {path} must hold a JSON array")
        return entries


def search(backend, query: str, m: int, country=None, language=None) -> list:
    """Run one query and return at most ``m`` ranked results.

    Fewer than ``m`` results is allowed (the backend simply had fewer
    matches) and is logged as a shortfall warning, not an error.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    raw = backend.search(query, m, country=country, language=language)
    results = []
    for i, entry in enumerate(raw[:m], start=1):
        results.append(
            SearchResult(
                title=str(entry.get("title", "")),
                url=str(entry.get("url", "")),
                snippet=str(entry.get("snippet", "")),
                rank=i,
                source_query=query,
            )
        )
    if len(results) < m:
        logger.warning(
            "search shortfall for %r: requested %d, received %d", query, m, len(results)
        )
    return results
