"""Retrieval and reporting stages: plan queries, fan out searches, distill
the results into a structured subculture report, and judge report quality.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

from .backends.chat import assistant, user
from .backends.search import SearchResult, search
from .core import TASK_CODES, SubcultureSpec, extract_json_objects
from .errors import (
    AllQueriesEmpty,
    JudgeParseFailure,
    PlanParseFailure,
    ReportParseFailure,
)

logger = logging.getLogger(__name__)

DEFAULT_QUERY_COUNT = 5
DEFAULT_RESULTS_PER_QUERY = 4
MAX_QUERIES = 16

_LIST_ITEM_RE = re.compile(r"^\s*(?:\d{1,2}\s*[.):\-]\s*|[-*•]\s+)(.+?)\s*$")
_SCORE_RE = re.compile(r"score\s*[:=]?\s*(-?\d+(?:\.\d+)?)", re.IGNORECASE)
_NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")


def _normalize_query(query: str) -> str:
    return " ".join(query.split()).casefold()


@dataclass(frozen=True)
class QueryPlan:
    """Ordered, deduplicated search queries plus optional planner reasoning."""

    queries: tuple
    rationale: str | None = None

    def __post_init__(self) -> None:
        queries = tuple(self.queries)
        if not queries:
            raise ValueError("query plan must carry at least one query")
        if len(queries) > MAX_QUERIES:
            raise ValueError(f"query plan exceeds the maximum of {MAX_QUERIES} queries")
        normalized = [_normalize_query(q) for q in queries]
        if len(set(normalized)) != len(normalized):
            raise ValueError("query plan contains duplicate queries")
        object.__setattr__(self, "queries", queries)

    def to_dict(self) -> dict:
        return {"queries": list(self.queries), "rationale": self.rationale}


@dataclass(frozen=True)
class SearchResultSet:
    """Concatenated results of a fan-out, in plan order, with shortfalls."""

    results: tuple
    n: int
    m: int
    shortfalls: tuple = ()

    def __post_init__(self) -> None:
        results = tuple(self.results)
        if len(results) > self.n * self.m:
            raise ValueError("result set larger than n*m")
        object.__setattr__(self, "results", results)
        object.__setattr__(self, "shortfalls", tuple(tuple(s) for s in self.shortfalls))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "shortfalls": [list(s) for s in self.shortfalls],
            "results": [r.to_dict() for r in self.results],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchResultSet":
        return cls(
            results=tuple(SearchResult.from_dict(r) for r in d["results"]),
            n=int(d["n"]),
            m=int(d["m"]),
            shortfalls=tuple(tuple(s) for s in d.get("shortfalls", [])),
        )


@dataclass(frozen=True)
class TermEntry:
    """One glossary entry of the report.

    ``unevidenced`` marks terms whose string never occurs in any consumed
    snippet; such entries are kept but flagged, since homophones and
    romanized spellings can be explained without a verbatim match.
    """

    term: str
    meaning: str = ""
    romanization: str | None = None
    risk_tasks: tuple = ()
    evidence: str | None = None
    unevidenced: bool = False

    def __post_init__(self) -> None:
        if not self.term or not self.term.strip():
            raise ValueError("term must be nonempty")
        risk = tuple(dict.fromkeys(code.upper() for code in self.risk_tasks))
        unknown = [code for code in risk if code not in TASK_CODES]
        if unknown:
            raise ValueError(f"unknown risk task codes: {unknown}")
        object.__setattr__(self, "risk_tasks", risk)

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "romanization": self.romanization,
            "meaning": self.meaning,
            "risk_tasks": list(self.risk_tasks),
            "evidence": self.evidence,
            "unevidenced": self.unevidenced,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TermEntry":
        return cls(
            term=d["term"],
            meaning=d.get("meaning", "") or "",
            romanization=d.get("romanization"),
            risk_tasks=tuple(d.get("risk_tasks", ())),
            evidence=d.get("evidence"),
            unevidenced=bool(d.get("unevidenced", False)),
        )


@dataclass(frozen=True)
class AlignmentReport:
    """Structured subculture knowledge distilled from search results."""

    subculture: SubcultureSpec
    introduction: str
    background: str
    terminology: tuple
    source_count: int
    generated_at: float = 0.0

    def __post_init__(self) -> None:
        if not self.introduction.strip():
            raise ValueError("report introduction must be nonempty")
        if not self.background.strip():
            raise ValueError("report background must be nonempty")
        terminology = tuple(self.terminology)
        if not terminology:
            raise ValueError("report must carry at least one terminology entry")
        if self.source_count < 0:
            raise ValueError("source_count must be >= 0")
        object.__setattr__(self, "terminology", terminology)

    def to_dict(self) -> dict:
        return {
            "subculture": self.subculture.to_dict(),
            "introduction": self.introduction,
            "background": self.background,
            "terminology": [t.to_dict() for t in self.terminology],
            "source_count": self.source_count,
            "generated_at": self.generated_at,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentReport":
        return cls(
            subculture=SubcultureSpec.from_dict(d["subculture"]),
            introduction=d["introduction"],
            background=d["background"],
            terminology=tuple(TermEntry.from_dict(t) for t in d["terminology"]),
            source_count=int(d["source_count"]),
            generated_at=float(d.get("generated_at", 0.0)),
        )

    def digest(self) -> str:
        stable = self.to_dict()
        stable.pop("generated_at", None)
        canonical = json.dumps(stable, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ReportFinding:
    kind: str
    detail: str
    term: str | None = None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "term": self.term}


# --- stage one: query planning + fan-out ---


def _parse_query_list(text: str) -> tuple:
    """Split a completion into list items plus the leading prose, if any."""
    items = []
    prose: list = []
    for line in text.splitlines():
        match = _LIST_ITEM_RE.match(line)
        if match:
            items.append(match.group(1).strip().strip("\"'"))
        elif line.strip() and not items:
            prose.append(line.strip())
    rationale = " ".join(prose) if prose else None
    return items, rationale


def _dedupe(queries) -> list:
    seen: set = set()
    out = []
    for query in queries:
        if not query:
            continue
        key = _normalize_query(query)
        if key in seen:
            continue
        seen.add(key)
        out.append(query)
    return out


def generate_queries(
    spec: SubcultureSpec,
    n: int,
    chat,
    *,
    template=None,
    max_queries: int = MAX_QUERIES,
) -> QueryPlan:
    """Ask the planner model for exactly ``n`` distinct queries.

    Duplicates are removed; if fewer than ``n`` remain, the model is
    re-prompted once to fill the gap. Still fewer afterwards raises
    PlanParseFailure.
    """
    if not 1 <= n <= max_queries:
        raise ValueError(f"n must be within [1, {max_queries}]")
    if template is None:
        from .templates import TemplateLibrary

        template = TemplateLibrary().get("query_planning")
    prompt = template.render(
        subculture=spec.name, language=spec.language, country=spec.country, n=n
    )
    first = chat.complete([user(prompt)], stage="query_planning")
    items, rationale = _parse_query_list(first.text)
    queries = _dedupe(items)

    if len(queries) < n:
        missing = n - len(queries)
        logger.debug("query plan short by %d after dedupe; refilling once", missing)
        refill_prompt = (
            f"Some of the queries were missing or duplicated. Provide {missing} more "
            f"distinct web search queries about {spec.name}, as a numbered list only."
        )
        second = chat.complete(
            [user(prompt), assistant(first.text), user(refill_prompt)],
            stage="query_planning",
        )
        more, _ = _parse_query_list(second.text)
        queries = _dedupe(queries + more)

    if len(queries) < n:
        raise PlanParseFailure(
            f"planner yielded {len(queries)} distinct queries, needed {n}"
        )
    return QueryPlan(queries=tuple(queries[:n]), rationale=rationale)


def execute_queries(
    plan: QueryPlan,
    m: int,
    spec: SubcultureSpec,
    backend,
    *,
    max_workers: int = 1,
) -> SearchResultSet:
    """Issue one search per planned query and concatenate in plan order.

    Shortfalls (a query returning fewer than ``m`` results) are recorded,
    not raised; only a fan-out where every query comes back empty is an
    error.
    """
    if m < 1:
        raise ValueError("m must be >= 1")

    def run_one(query: str):
        return search(backend, query, m, country=spec.country, language=spec.language)

    if max_workers > 1 and len(plan.queries) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            per_query = list(pool.map(run_one, plan.queries))
    else:
        per_query = [run_one(q) for q in plan.queries]

    results: list = []
    shortfalls = []
    for query, batch in zip(plan.queries, per_query):
        results.extend(batch)
        if len(batch) < m:
            shortfalls.append((query, m, len(batch)))
    if not results:
        raise AllQueriesEmpty("every planned query returned zero results")
    return SearchResultSet(
        results=tuple(results),
        n=len(plan.queries),
        m=m,
        shortfalls=tuple(shortfalls),
    )


# --- stage two: report generation ---


def _format_results(results: SearchResultSet) -> str:
    lines = []
    for i, result in enumerate(results.results, start=1):
        lines.append(f"[{i}] {result.title} ({result.url})")
        lines.append(f"    {result.snippet}")
    return "\n".join(lines)


def _pick_report_payload(text: str) -> dict | None:
    candidates = [
        obj
        for obj in extract_json_objects(text)
        if any(key in obj for key in ("introduction", "background", "terminology"))
    ]
    return candidates[-1] if candidates else None


def _coerce_report(payload: dict, results: SearchResultSet, spec: SubcultureSpec):
    """Validate a report payload; returns (report, issues)."""
    issues = []
    introduction = str(payload.get("introduction") or "").strip()
    if not introduction:
        issues.append("missing nonempty 'introduction'")
    background = str(payload.get("background") or "").strip()
    if not background:
        issues.append("missing nonempty 'background'")
    raw_terms = payload.get("terminology")
    entries = []
    if not isinstance(raw_terms, list) or not raw_terms:
        issues.append("'terminology' must be a nonempty list")
    else:
        snippet_haystack = "\n".join(r.snippet for r in results.results).casefold()
        for i, item in enumerate(raw_terms):
            if not isinstance(item, dict):
                issues.append(f"terminology[{i}] is not an object")
                continue
            term = str(item.get("term") or "").strip()
            if not term:
                issues.append(f"terminology[{i}] is missing a 'term'")
                continue
            try:
                entries.append(
                    TermEntry(
                        term=term,
                        meaning=str(item.get("meaning") or "").strip(),
                        romanization=(str(item["romanization"]).strip() or None)
                        if item.get("romanization")
                        else None,
                        risk_tasks=tuple(item.get("risk_tasks") or ()),
                        evidence=(str(item["evidence"]).strip() or None)
                        if item.get("evidence")
                        else None,
                        unevidenced=term.casefold() not in snippet_haystack,
                    )
                )
            except (ValueError, TypeError) as exc:
                issues.append(f"terminology[{i}]: {exc}")
    if issues:
        return None, issues
    report = AlignmentReport(
        subculture=spec,
        introduction=introduction,
        background=background,
        terminology=tuple(entries),
        source_count=len(results.results),
        generated_at=time.time(),
    )
    return report, []


def generate_report(results: SearchResultSet, spec: SubcultureSpec, template, chat) -> AlignmentReport:
    """Distill search results into a structured report.

    The model is asked for JSON matching the report schema; a malformed
    completion gets exactly one corrective re-prompt before
    ReportParseFailure.
    """
    if not results.results:
        raise ValueError("cannot generate a report from an empty result set")
    prompt = template.render(subculture=spec.name, results=_format_results(results))
    first = chat.complete([user(prompt)], stage="report")

    payload = _pick_report_payload(first.text)
    report, issues = (
        _coerce_report(payload, results, spec) if payload else (None, ["no JSON object found"])
    )
    if report is not None:
        return report

    logger.debug("report completion rejected (%s); re-prompting once", "; ".join(issues))
    fix_prompt = (
        "The previous reply was not a valid report: "
        + "; ".join(issues)
        + ". Reply again with only the complete JSON object."
    )
    second = chat.complete(
        [user(prompt), assistant(first.text), user(fix_prompt)], stage="report"
    )
    payload = _pick_report_payload(second.text)
    report, issues = (
        _coerce_report(payload, results, spec) if payload else (None, ["no JSON object found"])
    )
    if report is None:
        raise ReportParseFailure("report completion unusable after re-prompt: " + "; ".join(issues))
    return report


def validate_report(report: AlignmentReport) -> list:
    """Structured findings over a report; informational, never fatal."""
    findings = []
    for section in ("introduction", "background"):
        if not getattr(report, section).strip():
            findings.append(ReportFinding("empty_section", f"section '{section}' is empty"))
    if not report.terminology:
        findings.append(ReportFinding("empty_section", "terminology list is empty"))
    seen: dict = {}
    for entry in report.terminology:
        key = _normalize_query(entry.term)
        if key in seen:
            findings.append(
                ReportFinding("duplicate_term", f"term {entry.term!r} appears more than once", entry.term)
            )
        seen[key] = entry
        if not entry.meaning.strip() and not entry.risk_tasks:
            findings.append(
                ReportFinding(
                    "missing_meaning",
                    f"term {entry.term!r} has neither a meaning nor risk signals",
                    entry.term,
                )
            )
        if entry.unevidenced:
            findings.append(
                ReportFinding(
                    "unevidenced",
                    f"term {entry.term!r} does not occur in any consumed snippet",
                    entry.term,
                )
            )
    return findings


def render_terminology(report: AlignmentReport) -> str:
    lines = []
    for entry in report.terminology:
        name = entry.term if not entry.romanization else f"{entry.term} ({entry.romanization})"
        signals = f" [signals: {', '.join(entry.risk_tasks)}]" if entry.risk_tasks else ""
        meaning = entry.meaning or "(no meaning recorded)"
        lines.append(f"- {name}: {meaning}{signals}")
    return "\n".join(lines)


def render_report_text(report: AlignmentReport) -> str:
    """Human-readable rendering persisted next to the JSON document."""
    spec = report.subculture
    header = f"Subculture report: {spec.name} ({spec.language}/{spec.country})"
    parts = [
        header,
        "=" * len(header),
        "",
        "INTRODUCTION",
        report.introduction,
        "",
        "BACKGROUND",
        report.background,
        "",
        f"TERMINOLOGY ({len(report.terminology)} entries)",
        render_terminology(report),
        "",
        f"Sources consumed: {report.source_count}",
    ]
    return "\n".join(parts) + "\n"


def judge_report(report: AlignmentReport, judge_chat, template) -> tuple:
    """Score a report on a 0..10 scale; out-of-range scores are an error,
    never clamped. Returns (score, critique)."""
    prompt = template.render(report=render_report_text(report))
    response = judge_chat.complete([user(prompt)], stage="judge")
    text = response.text

    match = _SCORE_RE.search(text)
    if match:
        raw = match.group(1)
    else:
        bare = _NUMBER_RE.search(text)
        if not bare:
            raise JudgeParseFailure("no numeric score found in judge output")
        raw = bare.group(0)
    score = float(raw)
    if not 0.0 <= score <= 10.0:
        raise JudgeParseFailure(f"judge score {score} outside [0, 10]")
    return score, text
