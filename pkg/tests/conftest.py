"""Shared fixtures: scripted clients, fixture search directories, reports."""

from __future__ import annotations

import json

import pytest

from subalign.backends import ChatClient, MockChatBackend
from subalign.core import InputSentence, SubcultureSpec
from subalign.pipeline import AlignmentReport, TermEntry
from subalign.templates import TemplateLibrary


@pytest.fixture
def spec():
    return SubcultureSpec(name="Jirai Kei", language="ja", country="JP")


@pytest.fixture
def templates():
    return TemplateLibrary()


@pytest.fixture
def sentence():
    return InputSentence(id="s01", text="Thinking about bron again tonight.", language="en")


@pytest.fixture
def report(spec):
    return AlignmentReport(
        subculture=spec,
        introduction="A youth-oriented online community with a cute outward style.",
        background="Formed on social platforms, it developed coded vocabulary for risky talk.",
        terminology=(
            TermEntry(
                term="bron",
                meaning="abuse of codeine cough syrup",
                risk_tasks=("OD",),
                evidence="https://fixture.example/od-terms",
            ),
            TermEntry(
                term="amuka",
                romanization="amuka",
                meaning="wrist cutting as self harm",
                risk_tasks=("SH",),
            ),
        ),
        source_count=4,
    )


def make_client(script, **kwargs):
    """Build a ChatClient over a scripted mock; returns (client, backend)."""
    backend = MockChatBackend(script)
    client = ChatClient(backend, model="mock-model", backoff_base=0.0, **kwargs)
    return client, backend


@pytest.fixture
def search_dir(tmp_path):
    """Create a fixture search directory; returns (dir, add(query, entries))."""
    root = tmp_path / "search"
    root.mkdir()

    def add(query, entries):
        from subalign.backends import query_slug

        (root / f"{query_slug(query)}.json").write_text(
            json.dumps(entries, ensure_ascii=False), "utf-8"
        )

    return root, add
