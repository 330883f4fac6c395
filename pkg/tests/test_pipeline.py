"""Query planning, retrieval fan-out, report generation, and judging."""

from __future__ import annotations

import json

import pytest

from subalign.backends import FixtureSearchBackend
from subalign.errors import (
    AllQueriesEmpty,
    JudgeParseFailure,
    PlanParseFailure,
    ReportParseFailure,
)
from subalign.pipeline import (
    QueryPlan,
    SearchResultSet,
    execute_queries,
    generate_queries,
    generate_report,
    judge_report,
    render_report_text,
    validate_report,
)

from conftest import make_client

PLANNING_MARKER = "Propose exactly"
REPORT_MARKER = "compiling a background report"
JUDGE_MARKER = "reviewing a subculture background report"

GOOD_REPORT_JSON = json.dumps(
    {
        "introduction": "An online community pairing a cute style with open talk of distress.",
        "background": "It grew on social platforms and developed coded vocabulary.",
        "terminology": [
            {"term": "bron", "romanization": "buron", "meaning": "cough syrup abuse", "risk_tasks": ["OD"]},
            {"term": "amuka", "meaning": "wrist cutting", "risk_tasks": ["SH"]},
            {"term": "pien", "meaning": "teary pleading face", "risk_tasks": []},
        ],
    }
)


def _numbered(queries):
    return "\n".join(f"{i}. {q}" for i, q in enumerate(queries, start=1))


def _result_entries(count, term="bron"):
    return [
        {"title": f"t{i}", "url": f"https://e/{i}", "snippet": f"snippet {i} mentions {term} and amuka and pien"}
        for i in range(count)
    ]


def _result_set(search_dir, queries, m=2):
    root, add = search_dir
    for q in queries:
        add(q, _result_entries(m))
    backend = FixtureSearchBackend(root)
    plan = QueryPlan(queries=tuple(queries))
    from subalign.core import SubcultureSpec

    spec = SubcultureSpec(name="Jirai Kei", language="ja", country="JP")
    return execute_queries(plan, m, spec, backend)


# --- query plan type ---


def test_query_plan_rejects_duplicates():
    with pytest.raises(ValueError):
        QueryPlan(queries=("a b", "A  b"))


def test_query_plan_rejects_empty():
    with pytest.raises(ValueError):
        QueryPlan(queries=())


# --- generate_queries ---


def test_generate_queries_parses_numbered_list(spec, templates):
    queries = [f"jirai kei topic {i}" for i in range(5)]
    client, backend = make_client([(PLANNING_MARKER, _numbered(queries))])
    plan = generate_queries(spec, 5, client, template=templates.get("query_planning"))
    assert list(plan.queries) == queries
    assert backend.calls == 1


def test_generate_queries_dedupes_and_refills(spec, templates):
    first = _numbered(["q one", "q two", "q two", "q three", "q four"])
    client, backend = make_client(
        [(PLANNING_MARKER, first), ("distinct web search queries", "1. q five")]
    )
    plan = generate_queries(spec, 5, client, template=templates.get("query_planning"))
    assert len(plan.queries) == 5
    assert len({q for q in plan.queries}) == 5
    assert backend.calls == 2


def test_generate_queries_prose_twice_fails(spec, templates):
    client, backend = make_client(
        [
            (PLANNING_MARKER, "I think searching is a great idea but here is prose."),
            ("distinct web search queries", "still just prose, no list"),
        ]
    )
    with pytest.raises(PlanParseFailure):
        generate_queries(spec, 5, client, template=templates.get("query_planning"))
    assert backend.calls == 2


def test_generate_queries_bounds(spec, templates):
    client, _ = make_client([])
    with pytest.raises(ValueError):
        generate_queries(spec, 0, client, template=templates.get("query_planning"))
    with pytest.raises(ValueError):
        generate_queries(spec, 99, client, template=templates.get("query_planning"))


def test_generate_queries_takes_first_n_when_over(spec, templates):
    queries = [f"q {i}" for i in range(8)]
    client, _ = make_client([(PLANNING_MARKER, _numbered(queries))])
    plan = generate_queries(spec, 5, client, template=templates.get("query_planning"))
    assert list(plan.queries) == queries[:5]


# --- execute_queries ---


def test_execute_queries_default_shape_yields_twenty(search_dir, spec):
    root, add = search_dir
    queries = [f"query {i}" for i in range(5)]
    for q in queries:
        add(q, _result_entries(4))
    backend = FixtureSearchBackend(root)
    result_set = execute_queries(QueryPlan(queries=tuple(queries)), 4, spec, backend)
    assert len(result_set.results) == 20
    assert result_set.shortfalls == ()


def test_execute_queries_single(search_dir, spec):
    root, add = search_dir
    add("only query", _result_entries(1))
    backend = FixtureSearchBackend(root)
    result_set = execute_queries(QueryPlan(queries=("only query",)), 1, spec, backend)
    assert len(result_set.results) == 1


def test_execute_queries_cardinality_over_grid(search_dir, spec):
    root, add = search_dir
    queries = [f"grid query {i}" for i in range(6)]
    for q in queries:
        add(q, _result_entries(6))
    backend = FixtureSearchBackend(root)
    for n in range(1, 7):
        for m in range(1, 7):
            plan = QueryPlan(queries=tuple(queries[:n]))
            result_set = execute_queries(plan, m, spec, backend)
            assert len(result_set.results) == n * m


def test_execute_queries_shortfall_not_error(search_dir, spec):
    root, add = search_dir
    add("full query", _result_entries(4))
    backend = FixtureSearchBackend(root)
    plan = QueryPlan(queries=("full query", "empty query"))
    result_set = execute_queries(plan, 4, spec, backend)
    assert len(result_set.results) == 4
    assert result_set.shortfalls == (("empty query", 4, 0),)


def test_execute_queries_all_empty_is_error(search_dir, spec):
    root, _ = search_dir
    backend = FixtureSearchBackend(root)
    plan = QueryPlan(queries=("nope a", "nope b"))
    with pytest.raises(AllQueriesEmpty):
        execute_queries(plan, 3, spec, backend)


def test_execute_queries_provenance_and_parallel_order(search_dir, spec):
    root, add = search_dir
    queries = [f"par query {i}" for i in range(4)]
    for q in queries:
        add(q, _result_entries(3))
    backend = FixtureSearchBackend(root)
    plan = QueryPlan(queries=tuple(queries))
    sequential = execute_queries(plan, 3, spec, backend)
    parallel = execute_queries(plan, 3, spec, backend, max_workers=4)
    assert sequential.results == parallel.results
    assert all(r.source_query in plan.queries for r in sequential.results)
    # concatenation follows plan order
    assert [r.source_query for r in sequential.results] == [
        q for q in queries for _ in range(3)
    ]


# --- generate_report ---


def test_generate_report_parses_terms(search_dir, spec, templates):
    result_set = _result_set(search_dir, ["q1", "q2"], m=2)
    client, backend = make_client([(REPORT_MARKER, GOOD_REPORT_JSON)])
    report = generate_report(result_set, spec, templates.get("report"), client)
    assert len(report.terminology) == 3
    assert report.source_count == 4
    assert backend.calls == 1
    assert report.terminology[0].risk_tasks == ("OD",)
    # all three fixture terms occur in snippets, so nothing is unevidenced
    assert not any(t.unevidenced for t in report.terminology)


def test_generate_report_reprompts_once_then_succeeds(search_dir, spec, templates):
    incomplete = json.dumps(
        {"background": "b", "terminology": [{"term": "bron", "meaning": "m"}]}
    )
    client, backend = make_client(
        [(REPORT_MARKER, incomplete), ("not a valid report", GOOD_REPORT_JSON)]
    )
    result_set = _result_set(search_dir, ["q1"], m=2)
    report = generate_report(result_set, spec, templates.get("report"), client)
    assert backend.calls == 2
    assert report.introduction


def test_generate_report_fails_after_exactly_one_reprompt(search_dir, spec, templates):
    client, backend = make_client(
        [(REPORT_MARKER, "no json here"), ("not a valid report", "still no json")]
    )
    result_set = _result_set(search_dir, ["q1"], m=2)
    with pytest.raises(ReportParseFailure):
        generate_report(result_set, spec, templates.get("report"), client)
    assert backend.calls == 2


def test_generate_report_empty_results_precondition(spec, templates):
    client, backend = make_client([])
    empty = SearchResultSet(results=(), n=1, m=1, shortfalls=(("q", 1, 0),))
    with pytest.raises(ValueError):
        generate_report(empty, spec, templates.get("report"), client)
    assert backend.calls == 0


def test_generate_report_flags_unevidenced_terms(search_dir, spec, templates):
    payload = json.dumps(
        {
            "introduction": "i",
            "background": "b",
            "terminology": [
                {"term": "bron", "meaning": "in snippets", "risk_tasks": ["OD"]},
                {"term": "zzz-novel", "meaning": "never in snippets", "risk_tasks": []},
            ],
        }
    )
    client, _ = make_client([(REPORT_MARKER, payload)])
    result_set = _result_set(search_dir, ["q1"], m=2)
    report = generate_report(result_set, spec, templates.get("report"), client)
    flags = {t.term: t.unevidenced for t in report.terminology}
    assert flags == {"bron": False, "zzz-novel": True}


def test_report_determinism_under_scripted_mock(search_dir, spec, templates):
    result_set = _result_set(search_dir, ["q1", "q2"], m=2)
    reports = []
    for _ in range(2):
        client, _ = make_client([(REPORT_MARKER, GOOD_REPORT_JSON)])
        reports.append(generate_report(result_set, spec, templates.get("report"), client))
    assert reports[0].digest() == reports[1].digest()


# --- validate_report ---


def test_validate_report_clean(report):
    assert validate_report(report) == []


def test_validate_report_duplicate_terms(report):
    from dataclasses import replace

    doubled = replace(report, terminology=report.terminology + (report.terminology[0],))
    findings = validate_report(doubled)
    assert sum(1 for f in findings if f.kind == "duplicate_term") == 1


def test_validate_report_unevidenced_count(report):
    from dataclasses import replace

    flagged = replace(
        report,
        terminology=tuple(
            type(t)(**{**t.__dict__, "unevidenced": True}) for t in report.terminology
        )
        + (type(report.terminology[0])(term="third", meaning="x", unevidenced=True),),
    )
    findings = validate_report(flagged)
    assert sum(1 for f in findings if f.kind == "unevidenced") == 3


def test_validate_report_missing_meaning(report):
    from dataclasses import replace

    entry = type(report.terminology[0])(term="bare")
    findings = validate_report(replace(report, terminology=(entry,) + report.terminology))
    assert any(f.kind == "missing_meaning" and f.term == "bare" for f in findings)


# --- judge_report ---


def test_judge_parses_score_and_keeps_critique(report, templates):
    client, _ = make_client([(JUDGE_MARKER, "Score: 9.5\nCritique: thorough")])
    score, critique = judge_report(report, client, templates.get("judge"))
    assert score == 9.5
    assert "thorough" in critique


def test_judge_out_of_range_is_error(report, templates):
    client, _ = make_client([(JUDGE_MARKER, "11/10, stellar")])
    with pytest.raises(JudgeParseFailure):
        judge_report(report, client, templates.get("judge"))


def test_judge_zero_boundary(report, templates):
    client, _ = make_client([(JUDGE_MARKER, "Score: 0")])
    score, _ = judge_report(report, client, templates.get("judge"))
    assert score == 0.0


def test_judge_no_number_is_error(report, templates):
    client, _ = make_client([(JUDGE_MARKER, "wonderful report, no complaints")])
    with pytest.raises(JudgeParseFailure):
        judge_report(report, client, templates.get("judge"))


@pytest.mark.parametrize(
    "text,expected",
    [("Score: 10", 10.0), ("score = 7", 7.0), ("I'd give it 8.25 overall", 8.25)],
)
def test_judge_score_formats(report, templates, text, expected):
    client, _ = make_client([(JUDGE_MARKER, text)])
    score, _ = judge_report(report, client, templates.get("judge"))
    assert score == expected


def test_render_report_text_contains_sections(report):
    text = render_report_text(report)
    assert "INTRODUCTION" in text
    assert "BACKGROUND" in text
    assert "TERMINOLOGY (2 entries)" in text
    assert "bron" in text
