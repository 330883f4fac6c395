"""Chat/search backends, the retry wrapper, and the persistent cache."""

from __future__ import annotations

import json
import threading

import pytest

from subalign.backends import (
    CacheEntry,
    CallBudget,
    ChatClient,
    ChatMessage,
    ChatRequest,
    EchoChatBackend,
    FixtureSearchBackend,
    HttpChatBackend,
    MockChatBackend,
    ResponseCache,
    chat,
    request_cache_key,
    search,
    user,
)
from subalign.errors import (
    AuthFailure,
    BackendUnavailable,
    BudgetExceeded,
    MissingFile,
    MockScriptError,
)


def _request(content="hello", **kwargs):
    return ChatRequest(model="m", messages=(user(content),), **kwargs)


# --- message / request invariants ---


def test_chat_message_rejects_empty_user_content():
    with pytest.raises(ValueError):
        ChatMessage("user", "")
    # assistant turns may be empty (provider anomaly is recorded upstream)
    ChatMessage("assistant", "")


def test_chat_request_validates_sampling_bounds():
    with pytest.raises(ValueError):
        _request(temperature=1.5)
    with pytest.raises(ValueError):
        _request(top_p=0.0)
    with pytest.raises(ValueError):
        ChatRequest(model="m", messages=())


# --- mock backend ---


def test_mock_script_first_match_wins_and_is_consumed():
    backend = MockChatBackend([("hello", "first"), ("hello", "second")])
    assert backend.complete(_request()).text == "first"
    assert backend.complete(_request()).text == "second"
    with pytest.raises(MockScriptError):
        backend.complete(_request())


def test_mock_scripted_response_for_any_request():
    backend = MockChatBackend([("", "QUERIES: a|b")])
    response = chat(backend, _request("anything at all"))
    assert response.text == "QUERIES: a|b"
    assert response.from_cache is False


def test_mock_matcher_tuple_requires_all_substrings():
    backend = MockChatBackend([(("alpha", "beta"), "both")])
    with pytest.raises(MockScriptError):
        backend.complete(_request("alpha only"))
    backend2 = MockChatBackend([(("alpha", "beta"), "both")])
    assert backend2.complete(_request("beta then alpha")).text == "both"


def test_mock_matches_against_user_turns_only():
    backend = MockChatBackend([("secret", "found")])
    request = ChatRequest(
        model="m",
        messages=(user("plain"), ChatMessage("assistant", "secret"), user("more")),
    )
    with pytest.raises(MockScriptError):
        backend.complete(request)


def test_mock_script_file_round_trip(tmp_path):
    path = tmp_path / "script.json"
    path.write_text(
        json.dumps(
            [
                {"match": "hi", "response": "hello there"},
                {"match": ["a", "b"], "error": "unavailable"},
            ]
        ),
        "utf-8",
    )
    backend = MockChatBackend.from_script_file(path)
    assert backend.complete(_request("hi")).text == "hello there"
    with pytest.raises(BackendUnavailable):
        backend.complete(_request("a and b"))


def test_mock_script_file_missing(tmp_path):
    with pytest.raises(MissingFile):
        MockChatBackend.from_script_file(tmp_path / "absent.json")


# --- retry / budget ---


def test_chat_retries_then_succeeds():
    backend = MockChatBackend(
        [
            ("x", BackendUnavailable("flaky 1")),
            ("x", BackendUnavailable("flaky 2")),
            ("x", "finally"),
        ]
    )
    sleeps = []
    response = chat(backend, _request("x"), attempt_limit=3, sleep=sleeps.append)
    assert response.text == "finally"
    assert backend.calls == 3
    assert len(sleeps) == 2


def test_chat_attempts_bounded_by_limit():
    backend = MockChatBackend([("x", BackendUnavailable("down"))] * 5)
    with pytest.raises(BackendUnavailable):
        chat(backend, _request("x"), attempt_limit=2, sleep=lambda _s: None)
    assert backend.calls == 2


def test_chat_does_not_retry_auth_failures():
    backend = MockChatBackend([("x", AuthFailure("bad key")), ("x", "never")])
    with pytest.raises(AuthFailure):
        chat(backend, _request("x"), attempt_limit=3, sleep=lambda _s: None)
    assert backend.calls == 1


def test_call_budget_exhaustion():
    budget = CallBudget(max_calls=1)
    backend = MockChatBackend([("x", "one"), ("x", "two")])
    chat(backend, _request("x"), budget=budget)
    with pytest.raises(BudgetExceeded):
        chat(backend, _request("x"), budget=budget)


# --- cache ---


def test_cache_store_then_lookup(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    cache.store(CacheEntry(key="k1", value="payload", created_at=1.0))
    entry = cache.lookup("k1")
    assert entry is not None
    assert entry.value == "payload"


def test_cache_lookup_unknown_returns_none(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    assert cache.lookup("missing") is None


def test_cache_key_is_stable_and_content_sensitive():
    request = _request("hello")
    assert request_cache_key("mock", request) == request_cache_key("mock", request)
    assert request_cache_key("mock", request) != request_cache_key("http", request)
    assert request_cache_key("mock", request) != request_cache_key("mock", _request("other"))
    assert request_cache_key("mock", request) != request_cache_key(
        "mock", _request("hello", temperature=0.3)
    )


def test_concurrent_stores_leave_one_intact_winner(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    payloads = ["A" * 2048, "B" * 2048]
    barrier = threading.Barrier(2)

    def hammer(payload):
        barrier.wait()
        for _ in range(50):
            cache.store(CacheEntry(key="contested", value=payload, created_at=0.0))

    threads = [threading.Thread(target=hammer, args=(p,)) for p in payloads]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    entry = cache.lookup("contested")
    assert entry is not None
    assert entry.value in payloads


def test_chat_second_identical_request_served_from_cache(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    backend = MockChatBackend([("x", "answer")])
    first = chat(backend, _request("x"), cache=cache)
    second = chat(backend, _request("x"), cache=cache)
    assert first.from_cache is False
    assert second.from_cache is True
    assert second.text == first.text
    assert backend.calls == 1


def test_cache_never_changes_response_text(tmp_path):
    script = [("q1", "alpha"), ("q2", "beta")]
    plain = MockChatBackend(script)
    cached_backend = MockChatBackend(script)
    cache = ResponseCache(tmp_path / "cache")
    for content in ("q1", "q2"):
        bare = chat(plain, _request(content))
        warmed = chat(cached_backend, _request(content), cache=cache)
        again = chat(cached_backend, _request(content), cache=cache)
        assert bare.text == warmed.text == again.text


# --- client wrapper ---


def test_chat_client_applies_stage_temperature():
    backend = MockChatBackend([("x", "ok")])
    client = ChatClient(backend, model="m", temperatures={"report": 0.31})
    client.complete([user("x")], stage="report")
    assert backend.requests[0].temperature == 0.31
    assert backend.requests[0].top_p == 1.0


def test_chat_client_counts_calls_and_cache_hits(tmp_path):
    cache = ResponseCache(tmp_path / "cache")
    backend = MockChatBackend([("x", "ok")])
    client = ChatClient(backend, model="m", cache=cache)
    client.complete([user("x")], stage="solving")
    client.complete([user("x")], stage="solving")
    assert client.calls == 2
    assert client.cache_hits == 1
    assert backend.calls == 1


def test_echo_backend_returns_last_user_message():
    client = ChatClient(EchoChatBackend(), model="m")
    response = client.complete([user("first"), user("second")], stage="probe")
    assert response.text == "second"


# --- HTTP backend (fake transport, no network) ---


class _FakeResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self._body = body

    def json(self):
        return self._body


class _FakeSession:
    def __init__(self, responses):
        self._responses = list(responses)
        self.posts = []

    def post(self, url, json=None, headers=None, timeout=None):
        self.posts.append({"url": url, "json": json, "headers": headers})
        result = self._responses.pop(0)
        if isinstance(result, Exception):
            raise result
        return result


def _http_backend(responses, monkeypatch, token="tok"):
    monkeypatch.setenv("TEST_API_KEY", token)
    session = _FakeSession(responses)
    backend = HttpChatBackend(
        base_url="https://llm.example/v1", credential_env="TEST_API_KEY", session=session
    )
    return backend, session


def test_http_backend_posts_chat_completions(monkeypatch):
    body = {
        "choices": [{"message": {"content": "hi"}}],
        "usage": {"prompt_tokens": 3, "completion_tokens": 2},
    }
    backend, session = _http_backend([_FakeResponse(200, body)], monkeypatch)
    response = backend.complete(_request("hello", temperature=0.2))
    assert response.text == "hi"
    assert response.usage == (3, 2)
    post = session.posts[0]
    assert post["url"] == "https://llm.example/v1/chat/completions"
    assert post["json"]["temperature"] == 0.2
    assert post["headers"]["Authorization"] == "Bearer tok"


def test_http_backend_maps_auth_and_transient_errors(monkeypatch):
    backend, _ = _http_backend([_FakeResponse(401, {})], monkeypatch)
    with pytest.raises(AuthFailure):
        backend.complete(_request())
    backend, _ = _http_backend([_FakeResponse(503, {})], monkeypatch)
    with pytest.raises(BackendUnavailable):
        backend.complete(_request())
    backend, _ = _http_backend([ConnectionError("boom")], monkeypatch)
    with pytest.raises(BackendUnavailable):
        backend.complete(_request())


def test_http_backend_maps_payment_required_to_budget(monkeypatch):
    backend, _ = _http_backend([_FakeResponse(402, {})], monkeypatch)
    with pytest.raises(BudgetExceeded):
        backend.complete(_request())


def test_http_backend_requires_credential(monkeypatch):
    monkeypatch.delenv("TEST_API_KEY", raising=False)
    backend = HttpChatBackend(
        base_url="https://llm.example/v1", credential_env="TEST_API_KEY", session=_FakeSession([])
    )
    with pytest.raises(AuthFailure):
        backend.complete(_request())


# --- fixture search ---


def test_fixture_search_returns_filed_results(search_dir):
    root, add = search_dir
    add(
        "jirai kei slang",
        [
            {"title": f"t{i}", "url": f"https://e/{i}", "snippet": f"s{i}"}
            for i in range(4)
        ],
    )
    backend = FixtureSearchBackend(root)
    results = search(backend, "jirai kei slang", 4, country="JP", language="ja")
    assert [r.rank for r in results] == [1, 2, 3, 4]
    assert all(r.source_query == "jirai kei slang" for r in results)


def test_fixture_search_bounded_by_availability(search_dir, caplog):
    root, add = search_dir
    add("jirai kei slang", [{"title": "t", "url": "https://e/1", "snippet": "s"}] * 4)
    backend = FixtureSearchBackend(root)
    with caplog.at_level("WARNING"):
        results = search(backend, "jirai kei slang", 10)
    assert len(results) == 4
    assert any("shortfall" in r.message for r in caplog.records)


def test_fixture_search_unknown_query_yields_empty(search_dir, caplog):
    root, _ = search_dir
    backend = FixtureSearchBackend(root)
    with caplog.at_level("WARNING"):
        results = search(backend, "nothing filed", 3)
    assert results == []
    assert any("shortfall" in r.message for r in caplog.records)


def test_fixture_search_missing_directory(tmp_path):
    with pytest.raises(MissingFile):
        FixtureSearchBackend(tmp_path / "absent")


def test_search_requires_positive_m(search_dir):
    root, _ = search_dir
    backend = FixtureSearchBackend(root)
    with pytest.raises(ValueError):
        search(backend, "q", 0)
