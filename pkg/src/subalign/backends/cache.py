"""Persistent response cache: one file per entry under a cache root.

Keys are content hashes of the canonicalized request, so identical requests
map to identical keys across runs and processes. Stores are atomic
(write-to-temp plus rename), so concurrent readers never see torn entries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
import uuid
from dataclasses import dataclass
from pathlib import Path

from ..errors import IoFailure

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CacheEntry:
    key: str
    value: str
    created_at: float


def request_cache_key(backend_kind: str, request) -> str:
    """Stable digest of (backend kind, model, canonicalized request).

    The JSON canonical form sorts keys and uses compact separators, which
    normalizes whitespace in the structural syntax only; message content is
    embedded untouched.
    """
    payload = {
        "backend": backend_kind,
        "model": request.model,
        "temperature": request.temperature,
        "top_p": request.top_p,
        "max_output": request.max_output,
        "messages": [{"role": m.role, "content": m.content} for m in request.messages],
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


class ResponseCache:
    """File-backed cache; safe for concurrent readers and writers."""

    def __init__(self, root) -> None:
        self.root = Path(root)
        try:
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoFailure(f"cannot initialize cache at {self.root}: {exc}") from exc

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def lookup(self, key: str) -> CacheEntry | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            data = json.loads(path.read_text("utf-8"))
        except OSError as exc:
            raise IoFailure(f"cannot read cache entry {path}: {exc}") from exc
        except json.JSONDecodeError:
            logger.warning("discarding corrupt cache entry %s", path)
            return None
        return CacheEntry(
            key=key,
            value=data["value"],
            created_at=float(data.get("created_at", 0.0)),
        )

    def store(self, entry: CacheEntry) -> None:
        path = self._path(entry.key)
        tmp = path.with_name(f".{entry.key}.{uuid.uuid4().hex}.tmp")
        payload = json.dumps(
            {"key": entry.key, "value": entry.value, "created_at": entry.created_at},
            ensure_ascii=False,
        )
        try:
            tmp.write_text(payload, "utf-8")
            os.replace(tmp, path)
        except OSError as exc:
            raise IoFailure(f"cannot write cache entry {path}: {exc}") from exc


def make_entry(key: str, value: str) -> CacheEntry:
    return CacheEntry(key=key, value=value, created_at=time.time())
