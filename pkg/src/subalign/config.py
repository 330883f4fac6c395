"""Run configuration: one JSON document with environment-variable
interpolation for credentials; every value is overridable by CLI flags.

Relative paths in a config file resolve against the file's directory, so a
config can ship beside its fixtures.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

from .backends import (
    ChatClient,
    EchoChatBackend,
    FixtureSearchBackend,
    HttpChatBackend,
    MockChatBackend,
)
from .core import SubcultureSpec
from .errors import ConfigError
from .pipeline import DEFAULT_QUERY_COUNT, DEFAULT_RESULTS_PER_QUERY
from .solver import METHODS

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate_env(value: str) -> str:
    def lookup(match):
        name = match.group(1)
        if name not in os.environ:
            raise ConfigError(f"environment variable {name} referenced in config is not set")
        return os.environ[name]

    return _ENV_RE.sub(lookup, value)


def _interpolate(obj):
    if isinstance(obj, dict):
        return {k: _interpolate(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_interpolate(v) for v in obj]
    if isinstance(obj, str):
        return interpolate_env(obj)
    return obj


@dataclass
class BackendSettings:
    """One chat-backend slot: kind plus provider details."""

    kind: str = "http"
    model: str = "default-model"
    base_url: str | None = None
    credential_env: str = "SUBALIGN_API_KEY"
    attempt_limit: int = 3
    timeout: float = 30.0
    temperatures: dict = field(default_factory=dict)
    script: Path | None = None
    max_output: int = 1024

    def validate(self) -> None:
        if self.kind not in ("http", "mock", "echo"):
            raise ConfigError(f"unknown chat backend kind: {self.kind!r}")
        if self.kind == "http" and not self.base_url:
            raise ConfigError("http chat backend requires 'base_url'")
        if self.kind == "mock" and not self.script:
            raise ConfigError("mock chat backend requires 'script'")
        if self.attempt_limit < 1:
            raise ConfigError("attempt_limit must be >= 1")


@dataclass
class SearchSettings:
    kind: str = "fixture"
    fixture_dir: Path | None = None

    def validate(self) -> None:
        if self.kind != "fixture":
            raise ConfigError(f"unknown search backend kind: {self.kind!r}")
        if self.fixture_dir is None:
            raise ConfigError("fixture search backend requires 'fixture_dir'")


@dataclass
class RunConfig:
    """Everything one reproducible run needs."""

    subculture: SubcultureSpec
    run_dir: Path
    n: int = DEFAULT_QUERY_COUNT
    m: int = DEFAULT_RESULTS_PER_QUERY
    method: str = "sas"
    prompt_language: str = "en"
    refine_limit: int = 3
    dataset: Path | None = None
    report: Path | None = None
    templates_dir: Path | None = None
    cache_dir: Path | None = None
    parallelism: int = 1
    builder: BackendSettings = field(default_factory=BackendSettings)
    solver: BackendSettings = field(default_factory=BackendSettings)
    search: SearchSettings = field(default_factory=SearchSettings)

    def validate(self) -> None:
        if self.n < 1 or self.m < 1:
            raise ConfigError("retrieval parameters n and m must be >= 1")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.method not in METHODS:
            raise ConfigError(f"unknown method: {self.method!r}")
        if self.refine_limit < 1:
            raise ConfigError("refine_limit must be >= 1")


def _as_path(base: Path, value) -> Path | None:
    if value is None:
        return None
    path = Path(str(value))
    return path if path.is_absolute() else (base / path)


def _backend_settings(base: Path, data: dict | None, fallback: BackendSettings | None = None) -> BackendSettings:
    if data is None:
        if fallback is not None:
            return fallback
        return BackendSettings()
    settings = BackendSettings(
        kind=data.get("kind", "http"),
        model=data.get("model", "default-model"),
        base_url=data.get("base_url"),
        credential_env=data.get("credential_env", "SUBALIGN_API_KEY"),
        attempt_limit=int(data.get("attempt_limit", 3)),
        timeout=float(data.get("timeout", 30.0)),
        temperatures={k: float(v) for k, v in (data.get("temperatures") or {}).items()},
        script=_as_path(base, data.get("script")),
        max_output=int(data.get("max_output", 1024)),
    )
    settings.validate()
    return settings


def load_config(path) -> RunConfig:
    """Parse and validate a config file; all errors surface as ConfigError."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = _interpolate(json.loads(path.read_text("utf-8")))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    base = path.parent

    sub = data.get("subculture")
    if not isinstance(sub, dict):
        raise ConfigError("config requires a 'subculture' object (name/language/country)")
    try:
        subculture = SubcultureSpec.from_dict(sub)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad subculture spec: {exc}") from exc

    retrieval = data.get("retrieval") or {}
    method_cfg = data.get("method") or {}
    builder = _backend_settings(base, data.get("builder"))
    solver = _backend_settings(base, data.get("solver"), fallback=builder)

    search_cfg = data.get("search") or {}
    search = SearchSettings(
        kind=search_cfg.get("kind", "fixture"),
        fixture_dir=_as_path(base, search_cfg.get("fixture_dir")),
    )

    config = RunConfig(
        subculture=subculture,
        run_dir=_as_path(base, data.get("run_dir", "run")),
        n=int(retrieval.get("n", DEFAULT_QUERY_COUNT)),
        m=int(retrieval.get("m", DEFAULT_RESULTS_PER_QUERY)),
        method=method_cfg.get("name", "sas"),
        prompt_language=method_cfg.get("prompt_language", "en"),
        refine_limit=int(method_cfg.get("refine_limit", 3)),
        dataset=_as_path(base, data.get("dataset")),
        report=_as_path(base, data.get("report")),
        templates_dir=_as_path(base, data.get("templates_dir")),
        cache_dir=_as_path(base, data.get("cache_dir")),
        parallelism=int(data.get("parallelism", 1)),
        builder=builder,
        solver=solver,
        search=search,
    )
    config.validate()
    return config


def build_chat_client(settings: BackendSettings, cache=None, budget=None) -> ChatClient:
    settings.validate()
    if settings.kind == "mock":
        backend = MockChatBackend.from_script_file(settings.script, attempt_limit=settings.attempt_limit)
    elif settings.kind == "echo":
        backend = EchoChatBackend(attempt_limit=settings.attempt_limit)
    else:
        backend = HttpChatBackend(
            base_url=settings.base_url,
            credential_env=settings.credential_env,
            timeout=settings.timeout,
            attempt_limit=settings.attempt_limit,
        )
    return ChatClient(
        backend,
        model=settings.model,
        temperatures=settings.temperatures,
        attempt_limit=settings.attempt_limit,
        cache=cache,
        budget=budget,
        max_output=settings.max_output,
    )


def build_search_backend(settings: SearchSettings):
    settings.validate()
    return FixtureSearchBackend(settings.fixture_dir)
