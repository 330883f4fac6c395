"""Pluggable chat and search backends, deterministic mocks, and the cache."""

from .cache import CacheEntry, ResponseCache, request_cache_key
from .chat import (
    DEFAULT_STAGE_TEMPERATURES,
    CallBudget,
    ChatClient,
    ChatMessage,
    ChatRequest,
    ChatResponse,
    EchoChatBackend,
    HttpChatBackend,
    MockChatBackend,
    RecordingChat,
    assistant,
    chat,
    user,
)
from .search import FixtureSearchBackend, SearchResult, query_slug, search

__all__ = [
    "CacheEntry",
    "ResponseCache",
    "request_cache_key",
    "DEFAULT_STAGE_TEMPERATURES",
    "CallBudget",
    "ChatClient",
    "ChatMessage",
    "ChatRequest",
    "ChatResponse",
    "EchoChatBackend",
    "HttpChatBackend",
    "MockChatBackend",
    "RecordingChat",
    "assistant",
    "chat",
    "user",
    "FixtureSearchBackend",
    "SearchResult",
    "query_slug",
    "search",
]
