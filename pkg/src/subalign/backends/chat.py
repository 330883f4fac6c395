"""Chat-completion backends: a generic HTTP client, deterministic mocks,
and the retry/cache/budget wrapper every stage goes through.

A chat backend is anything with a ``kind`` string and a
``complete(request) -> ChatResponse`` method performing one physical call.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import time
from dataclasses import dataclass

from ..errors import (
    AuthFailure,
    BackendUnavailable,
    BudgetExceeded,
    MissingFile,
    MockScriptError,
)
from .cache import CacheEntry, request_cache_key

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")

# Stage temperatures default to the low band the pipeline is tuned for;
# all of them are configuration, not ground truth.
DEFAULT_STAGE_TEMPERATURES = {
    "query_planning": 0.3,
    "report": 0.3,
    "alignment": 0.2,
    "solving": 0.0,
    "feedback": 0.0,
    "judge": 0.0,
    "probe": 0.0,
}


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in ROLES:
            raise ValueError(f"unknown chat role: {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be nonempty")


def user(content: str) -> ChatMessage:
    return ChatMessage("user", content)


def assistant(content: str) -> ChatMessage:
    return ChatMessage("assistant", content)


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple
    temperature: float = 0.0
    top_p: float = 1.0
    max_output: int = 1024

    def __post_init__(self) -> None:
        messages = tuple(self.messages)
        if not messages:
            raise ValueError("request must carry at least one message")
        object.__setattr__(self, "messages", messages)
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature {self.temperature} outside [0, 1]")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError(f"top_p {self.top_p} outside (0, 1]")
        if self.max_output < 1:
            raise ValueError("max_output must be positive")

    def last_user_content(self) -> str:
        for message in reversed(self.messages):
            if message.role == "user":
                return message.content
        return ""


@dataclass(frozen=True)
class ChatResponse:
    text: str
    usage: tuple | None = None
    from_cache: bool = False


class CallBudget:
    """Thread-safe cap on physical backend invocations."""

    def __init__(self, max_calls: int | None = None) -> None:
        self.max_calls = max_calls
        self.used = 0
        self._lock = threading.Lock()

    def spend(self) -> None:
        with self._lock:
            if self.max_calls is not None and self.used >= self.max_calls:
                raise BudgetExceeded(f"call budget of {self.max_calls} exhausted")
            self.used += 1


def chat(
    backend,
    request: ChatRequest,
    *,
    cache=None,
    attempt_limit: int | None = None,
    backoff_base: float = 0.5,
    budget: CallBudget | None = None,
    sleep=time.sleep,
) -> ChatResponse:
    """Issue one logical chat call with caching, retry, and budget control.

    Transient failures (BackendUnavailable) are retried with exponential
    backoff up to the attempt limit; auth failures are never retried.
    Response text is returned verbatim.
    """
    limit = attempt_limit if attempt_limit is not None else getattr(backend, "attempt_limit", 3)
    if limit < 1:
        raise ValueError("attempt limit must be >= 1")

    key = None
    if cache is not None:
        key = request_cache_key(getattr(backend, "kind", type(backend).__name__), request)
        hit = cache.lookup(key)
        if hit is not None:
            data = json.loads(hit.value)
            usage = tuple(data["usage"]) if data.get("usage") else None
            return ChatResponse(text=data["text"], usage=usage, from_cache=True)

    if budget is not None:
        budget.spend()

    response = None
    for attempt in range(1, limit + 1):
        try:
            response = backend.complete(request)
            break
        except AuthFailure:
            raise
        except BackendUnavailable as exc:
            if attempt == limit:
                raise BackendUnavailable(
                    f"backend unavailable after {limit} attempts: {exc}"
                ) from exc
            delay = backoff_base * (2 ** (attempt - 1))
            logger.warning("chat attempt %d/%d failed (%s); retrying in %.2fs", attempt, limit, exc, delay)
            sleep(delay)
    assert response is not None

    if cache is not None and key is not None:
        payload = json.dumps(
            {"text": response.text, "usage": list(response.usage) if response.usage else None},
            ensure_ascii=False,
        )
        cache.store(CacheEntry(key=key, value=payload, created_at=time.time()))
    return response


class MockChatBackend:
    """Scripted backend for deterministic offline runs.

    The script is an ordered list of (matcher, response) pairs. A matcher is
    one substring, or a sequence of substrings that must all occur, tested
    against the request's user-role content. The first matching entry is
    consumed and its response returned; a request no entry matches raises
    MockScriptError. Responses may be strings, ChatResponse objects,
    exceptions to raise, or callables taking the request.
    """

    kind = "mock"

    def __init__(self, script, attempt_limit: int = 3) -> None:
        self.attempt_limit = attempt_limit
        self._entries = [self._normalize(entry) for entry in script]
        self._lock = threading.Lock()
        self.calls = 0
        self.requests: list = []

    @staticmethod
    def _normalize(entry):
        if isinstance(entry, dict):
            matcher = entry["match"]
            if "error" in entry:
                kinds = {"unavailable": BackendUnavailable, "auth": AuthFailure}
                response = kinds[entry["error"]](f"scripted {entry['error']} error")
            else:
                response = entry["response"]
        else:
            matcher, response = entry
        if isinstance(matcher, str):
            matcher = (matcher,)
        return tuple(matcher), response

    @classmethod
    def from_script_file(cls, path, attempt_limit: int = 3) -> "MockChatBackend":
        path = str(path)
        if not os.path.isfile(path):
            raise MissingFile(path)
        with open(path, "r", encoding="utf-8") as fh:
            return cls(json.load(fh), attempt_limit=attempt_limit)

    @property
    def remaining(self) -> int:
        with self._lock:
            return len(self._entries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        haystack = "\n".join(m.content for m in request.messages if m.role == "user")
        with self._lock:
            self.calls += 1
            self.requests.append(request)
            response = None
            for i, (needles, candidate) in enumerate(self._entries):
                if all(needle in haystack for needle in needles):
                    response = candidate
                    del self._entries[i]
                    break
        if response is None:
            head = haystack[:120].replace("\n", " ")
            raise MockScriptError(f"no scripted response matches request: {head!r}...")
        if isinstance(response, BaseException):
            raise response
        if isinstance(response, type) and issubclass(response, BaseException):
            raise response("scripted error")
        if callable(response):
            response = response(request)
        if isinstance(response, ChatResponse):
            return response
        return ChatResponse(text=str(response))


class EchoChatBackend:
    """Returns the last user message verbatim; handy for probe transcripts."""

    kind = "echo"

    def __init__(self, attempt_limit: int = 3) -> None:
        self.attempt_limit = attempt_limit
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self.calls += 1
        return ChatResponse(text=request.last_user_content())


class HttpChatBackend:
    """Generic chat-completions HTTP client.

    Speaks the widely shared ``POST {base_url}/chat/completions`` contract so
    any compatible provider can host the models; the bearer credential is
    read from the environment variable named at construction time.
    """

    kind = "http"

    def __init__(
        self,
        base_url: str,
        credential_env: str = "SUBALIGN_API_KEY",
        timeout: float = 30.0,
        attempt_limit: int = 3,
        session=None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.credential_env = credential_env
        self.timeout = timeout
        self.attempt_limit = attempt_limit
        if session is None:
            import requests

            session = requests.Session()
        self._session = session

    def complete(self, request: ChatRequest) -> ChatResponse:
        token = os.environ.get(self.credential_env, "")
        if not token:
            raise AuthFailure(f"environment variable {self.credential_env} is not set")
        payload = {
            "model": request.model,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
            "top_p": request.top_p,
            "max_tokens": request.max_output,
        }
        try:
            resp = self._session.post(
                f"{self.base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {token}"},
                timeout=self.timeout,
            )
        except Exception as exc:  # connection errors are transient by contract
            raise BackendUnavailable(f"request failed: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthFailure(f"provider rejected credentials (HTTP {resp.status_code})")
        if resp.status_code == 402:
            raise BudgetExceeded("provider reports exhausted quota (HTTP 402)")
        if resp.status_code != 200:
            raise BackendUnavailable(f"provider returned HTTP {resp.status_code}")
        try:
            body = resp.json()
            text = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable(f"malformed provider response: {exc}") from exc
        usage = None
        if isinstance(body.get("usage"), dict):
            usage = (
                int(body["usage"].get("prompt_tokens", 0)),
                int(body["usage"].get("completion_tokens", 0)),
            )
        return ChatResponse(text=text if isinstance(text, str) else "", usage=usage)


class ChatClient:
    """Backend handle bundling model, per-stage temperatures, cache, and retry.

    This is what pipeline and solver operations receive: ``complete()`` takes
    plain messages plus a stage name and returns the backend's response.
    Counters are thread-safe so one client can serve a worker pool.
    """

    def __init__(
        self,
        backend,
        model: str,
        temperatures: dict | None = None,
        attempt_limit: int = 3,
        backoff_base: float = 0.5,
        cache=None,
        budget: CallBudget | None = None,
        max_output: int = 1024,
        top_p: float = 1.0,
        sleep=time.sleep,
    ) -> None:
        self.backend = backend
        self.model = model
        self.temperatures = dict(DEFAULT_STAGE_TEMPERATURES)
        if temperatures:
            self.temperatures.update(temperatures)
        self.attempt_limit = attempt_limit
        self.backoff_base = backoff_base
        self.cache = cache
        self.budget = budget
        self.max_output = max_output
        self.top_p = top_p
        self._sleep = sleep
        self._lock = threading.Lock()
        self.calls = 0
        self.cache_hits = 0

    def temperature_for(self, stage: str) -> float:
        return self.temperatures.get(stage, 0.0)

    def complete(self, messages, *, stage: str, max_output: int | None = None) -> ChatResponse:
        request = ChatRequest(
            model=self.model,
            messages=tuple(messages),
            temperature=self.temperature_for(stage),
            top_p=self.top_p,
            max_output=max_output or self.max_output,
        )
        response = chat(
            self.backend,
            request,
            cache=self.cache,
            attempt_limit=self.attempt_limit,
            backoff_base=self.backoff_base,
            budget=self.budget,
            sleep=self._sleep,
        )
        with self._lock:
            self.calls += 1
            if response.from_cache:
                self.cache_hits += 1
        return response


class RecordingChat:
    """Per-worker view over a ChatClient that tallies only its own calls."""

    def __init__(self, client) -> None:
        self._client = client
        self.calls = 0
        self.cache_hits = 0

    def complete(self, messages, *, stage: str, max_output: int | None = None) -> ChatResponse:
        response = self._client.complete(messages, stage=stage, max_output=max_output)
        self.calls += 1
        if response.from_cache:
            self.cache_hits += 1
        return response
