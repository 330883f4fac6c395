"""Command-line surface: retrieve, report, classify, evaluate, compare, probe.

All artifacts land under the run directory: queries.json, results.json,
report.json, report.txt, predictions.jsonl, scores.json, manifest.json.
Every output embeds the manifest hash of the command that produced it.

Exit statuses: 0 success, 2 usage/config error, 3 backend failure, 4 data
error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .backends import DEFAULT_STAGE_TEMPERATURES, ResponseCache
from .config import RunConfig, build_chat_client, build_search_backend, load_config
from .core import RunRecord, load_dataset, load_predictions, save_predictions
from .errors import (
    BackendUnavailable,
    ConfigError,
    IoFailure,
    MissingFile,
    QuotaExceeded,
    SubalignError,
)
from .evaluate import (
    SCORING_CONVENTIONS,
    EvaluatedRun,
    TaskScores,
    builtin_qa_pairs,
    compare_methods,
    evaluate_run,
    knowledge_probe,
    load_qa_pairs,
)
from .manifest import (
    file_sha256,
    load_json,
    manifest_hash,
    read_manifest_hash,
    update_manifest,
    write_json,
)
from .pipeline import (
    AlignmentReport,
    SearchResultSet,
    execute_queries,
    generate_queries,
    generate_report,
    judge_report,
    render_report_text,
    validate_report,
)
from .solver import MethodConfig, classify_sentence
from .templates import TemplateLibrary

logger = logging.getLogger(__name__)

_METHOD_TEMPLATE_STAGES = {
    "sas": ("alignment", "solving"),
    "zero_shot": ("zero_shot",),
    "zero_shot_cot": ("zero_shot",),
    "plan_and_solve": ("zero_shot",),
    "self_refine": ("classify", "refine_feedback", "refine_revision"),
}


def _environment(config: RunConfig) -> dict:
    return {"parallelism": config.parallelism, "created_at": time.time()}


def _resolve_config(args) -> RunConfig:
    if not getattr(args, "config", None):
        raise ConfigError("this command requires --config")
    config = load_config(args.config)
    if getattr(args, "run_dir", None):
        config.run_dir = Path(args.run_dir)
    if getattr(args, "cache_dir", None):
        config.cache_dir = Path(args.cache_dir)
    if getattr(args, "templates_dir", None):
        config.templates_dir = Path(args.templates_dir)
    if getattr(args, "parallelism", None) is not None:
        config.parallelism = args.parallelism
    if getattr(args, "n", None) is not None:
        config.n = args.n
    if getattr(args, "m", None) is not None:
        config.m = args.m
    if getattr(args, "dataset", None):
        config.dataset = Path(args.dataset)
    if getattr(args, "method", None):
        config.method = args.method
    if getattr(args, "report", None) and isinstance(args.report, str):
        config.report = Path(args.report)
    config.validate()
    return config


def _cache(config: RunConfig):
    return ResponseCache(config.cache_dir) if config.cache_dir else None


def _templates(config: RunConfig) -> TemplateLibrary:
    return TemplateLibrary(config.templates_dir, language=config.prompt_language)


# --- subcommands ---


def cmd_retrieve(args) -> int:
    config = _resolve_config(args)
    templates = _templates(config)
    builder = build_chat_client(config.builder, cache=_cache(config))

    plan = generate_queries(
        config.subculture, config.n, builder, template=templates.get("query_planning")
    )
    if args.dry_run:
        print(f"planned {len(plan.queries)} queries (dry run, no searches issued):")
        for i, query in enumerate(plan.queries, start=1):
            print(f"  {i}. {query}")
        return 0

    search_backend = build_search_backend(config.search)
    result_set = execute_queries(
        plan, config.m, config.subculture, search_backend, max_workers=config.parallelism
    )

    section = {
        "stage": "retrieve",
        "subculture": config.subculture.to_dict(),
        "n": config.n,
        "m": config.m,
        "model": config.builder.model,
        "temperatures": builder.temperatures,
        "template_sha256": templates.digests(("query_planning",)),
    }
    section["manifest_hash"] = manifest_hash(section)

    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(
        run_dir / "queries.json",
        {"manifest_hash": section["manifest_hash"], "subculture": config.subculture.to_dict(), "n": config.n, **plan.to_dict()},
    )
    write_json(
        run_dir / "results.json",
        {"manifest_hash": section["manifest_hash"], **result_set.to_dict()},
    )
    update_manifest(run_dir, "retrieve", section, environment=_environment(config))

    print(
        f"retrieved {len(result_set.results)} results for {len(plan.queries)} queries "
        f"({len(result_set.shortfalls)} shortfalls) -> {run_dir / 'results.json'}"
    )
    for query, requested, received in result_set.shortfalls:
        print(f"  shortfall: {query!r} returned {received}/{requested}")
    return 0


def cmd_report(args) -> int:
    config = _resolve_config(args)
    run_dir = Path(config.run_dir)
    results_path = Path(args.results) if args.results else run_dir / "results.json"
    if not results_path.is_file():
        raise MissingFile(results_path)

    if args.dry_run:
        print(f"would generate a report from {results_path} with model {config.builder.model}")
        return 0

    try:
        result_set = SearchResultSet.from_dict(load_json(results_path))
    except (KeyError, TypeError, ValueError) as exc:
        raise IoFailure(f"unusable results file {results_path}: {exc}") from exc
    templates = _templates(config)
    builder = build_chat_client(config.builder, cache=_cache(config))

    report = generate_report(result_set, config.subculture, templates.get("report"), builder)
    findings = validate_report(report)
    for finding in findings:
        logger.warning("report finding (%s): %s", finding.kind, finding.detail)

    template_stages = ["report"]
    judge_payload = None
    if args.judge:
        score, critique = judge_report(report, builder, templates.get("judge"))
        judge_payload = {"score": score, "critique": critique}
        template_stages.append("judge")

    section = {
        "stage": "report",
        "subculture": config.subculture.to_dict(),
        "model": config.builder.model,
        "temperatures": builder.temperatures,
        "template_sha256": templates.digests(template_stages),
        "report_sha256": report.digest(),
        "source_count": report.source_count,
    }
    section["manifest_hash"] = manifest_hash(section)

    doc = report.to_dict()
    doc["manifest_hash"] = section["manifest_hash"]
    doc["findings"] = [f.to_dict() for f in findings]
    if judge_payload is not None:
        doc["judge"] = judge_payload

    run_dir.mkdir(parents=True, exist_ok=True)
    write_json(run_dir / "report.json", doc)
    text = render_report_text(report) + f"\n[manifest {section['manifest_hash']}]\n"
    (run_dir / "report.txt").write_text(text, "utf-8")
    update_manifest(run_dir, "report", section, environment=_environment(config))

    summary = f"report with {len(report.terminology)} terms -> {run_dir / 'report.json'}"
    if judge_payload is not None:
        summary += f" (judge score {judge_payload['score']})"
    print(summary)
    return 0


def cmd_classify(args) -> int:
    config = _resolve_config(args)
    if config.dataset is None:
        raise ConfigError("classify requires a dataset (--dataset or config)")

    report = None
    if config.method == "sas":
        if config.report is None:
            raise ConfigError("method 'sas' requires a report (--report or config)")
        try:
            report = AlignmentReport.from_dict(load_json(config.report))
        except (KeyError, TypeError, ValueError) as exc:
            raise IoFailure(f"unusable report file {config.report}: {exc}") from exc

    dataset = load_dataset(config.dataset)
    templates = _templates(config)
    method_config = MethodConfig(
        method=config.method,
        prompt_language=config.prompt_language,
        refine_limit=config.refine_limit,
        report=report,
    )

    section = {
        "stage": "classify",
        "method": config.method,
        "model": config.solver.model,
        "prompt_language": config.prompt_language,
        "temperatures": {**DEFAULT_STAGE_TEMPERATURES, **config.solver.temperatures},
        "template_sha256": templates.digests(_METHOD_TEMPLATE_STAGES[config.method]),
        "report_sha256": report.digest() if report is not None else None,
        "dataset": {"name": Path(config.dataset).name, "sha256": file_sha256(config.dataset)},
        "rows": len(dataset),
    }
    if config.method == "self_refine":
        section["refine_limit"] = config.refine_limit
    section_hash = manifest_hash(section)
    section["manifest_hash"] = section_hash

    if args.dry_run:
        print(
            f"would classify {len(dataset)} rows with method={config.method} "
            f"model={config.solver.model} (dry run, no backend calls)"
        )
        return 0

    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out_path = run_dir / "predictions.jsonl"

    # Resume: keep rows already classified by an identical run configuration.
    existing: dict = {}
    if out_path.is_file() and read_manifest_hash(run_dir, "classify") == section_hash:
        for record in load_predictions(out_path):
            existing[record.sentence_id] = record

    client = build_chat_client(config.solver, cache=_cache(config))
    pending = [row for row in dataset if row.sentence.id not in existing]

    def work(row) -> RunRecord:
        try:
            return classify_sentence(row.sentence, method_config, templates, client)
        except (BackendUnavailable, QuotaExceeded) as exc:
            logger.warning("row %s failed: %s", row.sentence.id, exc)
            return RunRecord(
                sentence_id=row.sentence.id,
                method=config.method,
                predicted=None,
                parse_failed=True,
                task_errors={"backend": str(exc)},
            )

    if config.parallelism > 1 and len(pending) > 1:
        with ThreadPoolExecutor(max_workers=config.parallelism) as pool:
            fresh = list(pool.map(work, pending))
    else:
        fresh = [work(row) for row in pending]
    by_id = dict(existing)
    by_id.update({record.sentence_id: record for record in fresh})

    records = [by_id[row.sentence.id] for row in dataset]
    save_predictions(records, out_path, extra_fields={"manifest_hash": section_hash})
    update_manifest(run_dir, "classify", section, environment=_environment(config))

    failures = sum(1 for r in records if r.parse_failed)
    print(
        f"classified {len(records)} rows ({len(existing)} resumed) -> {out_path} "
        f"[failures: {failures}, backend calls: {client.calls}, cache hits: {client.cache_hits}]"
    )
    return 0


def _scores_doc(scores: dict, method: str, model: str, run_hash: str, total: int) -> dict:
    return {
        "manifest_hash": run_hash,
        "method": method,
        "model": model,
        "records": total,
        "parse_failures": max((s.parse_failures for s in scores.values()), default=0),
        "conventions": dict(SCORING_CONVENTIONS),
        "tasks": {task: s.to_dict() for task, s in scores.items()},
    }


def _print_scores(scores: dict) -> None:
    print(f"{'task':<6}{'macro_f1':>10}{'f1[0]':>9}{'f1[1]':>9}{'f1[2]':>9}{'failures':>10}")
    for task, s in scores.items():
        f0, f1v, f2 = s.per_class_f1
        print(
            f"{task:<6}{s.macro_f1:>10.4f}{f0:>9.4f}{f1v:>9.4f}{f2:>9.4f}{s.parse_failures:>10d}"
        )


def cmd_evaluate(args) -> int:
    predictions_path = Path(args.predictions)
    dataset_path = Path(args.dataset)
    records = load_predictions(predictions_path)
    dataset = load_dataset(dataset_path)

    scores = evaluate_run(records, dataset)
    method = records[0].method if records else "unknown"
    run_hash = read_manifest_hash(predictions_path.parent, "classify")
    model = args.model or ""
    if not model:
        manifest_path = predictions_path.parent / "manifest.json"
        if manifest_path.is_file():
            model = str((load_json(manifest_path).get("classify") or {}).get("model", ""))
    doc = _scores_doc(scores, method, model or "unknown", run_hash, len(records))

    out_path = Path(args.out) if args.out else predictions_path.parent / "scores.json"
    write_json(out_path, doc)
    _print_scores(scores)
    print(f"scores -> {out_path}")
    return 0


def cmd_compare(args) -> int:
    runs = []
    for score_file in args.scores:
        doc = load_json(score_file)
        try:
            scores = {task: TaskScores.from_dict(d) for task, d in doc["tasks"].items()}
        except (KeyError, TypeError, ValueError) as exc:
            raise IoFailure(f"unusable score file {score_file}: {exc}") from exc
        runs.append(
            EvaluatedRun(
                method=doc.get("method", "unknown"),
                model=doc.get("model", "unknown"),
                scores=scores,
                manifest={"manifest_hash": doc.get("manifest_hash", ""), "path": str(score_file)},
            )
        )
    table = compare_methods(runs)
    print(table.render_text())

    out_dir = Path(args.out_dir) if args.out_dir else Path(args.scores[0]).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "comparison.csv").write_text(table.render_csv(), "utf-8")
    write_json(out_dir / "comparison.json", table.to_dict())
    print(f"comparison -> {out_dir / 'comparison.csv'}")
    return 0


def cmd_probe(args) -> int:
    config = _resolve_config(args)
    pairs = load_qa_pairs(args.pairs) if args.pairs else builtin_qa_pairs()
    if args.dry_run:
        counts: dict = {}
        for pair in pairs:
            counts[pair.category] = counts.get(pair.category, 0) + 1
        print(f"would probe {len(pairs)} questions: {counts}")
        return 0

    client = build_chat_client(config.solver, cache=_cache(config))
    result = knowledge_probe(pairs, client, max_workers=config.parallelism)

    section = {
        "stage": "probe",
        "model": config.solver.model,
        "questions": len(pairs),
    }
    section["manifest_hash"] = manifest_hash(section)
    doc = result.to_dict()
    doc["manifest_hash"] = section["manifest_hash"]

    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    out_path = Path(args.out) if args.out else run_dir / "probe.json"
    write_json(out_path, doc)
    update_manifest(run_dir, "probe", section, environment=_environment(config))

    for category, tally in result.tallies.items():
        print(
            f"{category}: {tally['total']} questions, advisory containment "
            f"{tally['contains_reference']}/{tally['total']}"
        )
    print(f"probe transcript -> {out_path}")
    return 0


# --- parser / entrypoint ---


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to the run configuration JSON")
    common.add_argument("--run-dir", help="override the run directory")
    common.add_argument("--cache-dir", help="override the response cache directory")
    common.add_argument("--templates-dir", help="override the prompt template directory")
    common.add_argument("--parallelism", type=int, help="worker bound for batch stages")
    common.add_argument("--dry-run", action="store_true", help="plan without side effects")
    common.add_argument(
        "--json-errors", action="store_true", help="emit machine-readable errors on stderr"
    )

    parser = argparse.ArgumentParser(
        prog="subalign",
        description="Subculture-aware retrieval, reporting, and classification pipeline.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("retrieve", parents=[common], help="plan queries and run the search fan-out")
    p.add_argument("--n", type=int, help="number of queries to plan")
    p.add_argument("--m", type=int, help="results per query")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("report", parents=[common], help="generate the subculture report")
    p.add_argument("--results", help="results file (default: <run-dir>/results.json)")
    p.add_argument("--judge", action="store_true", help="score the report with the judge prompt")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("classify", parents=[common], help="label a dataset with the chosen method")
    p.add_argument("--dataset", help="dataset file (line-delimited JSON)")
    p.add_argument("--method", help="sas, zero_shot, zero_shot_cot, plan_and_solve, self_refine")
    p.add_argument("--report", help="report file; required for method=sas")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", parents=[common], help="score predictions against gold labels")
    p.add_argument("--predictions", required=True, help="predictions file")
    p.add_argument("--dataset", required=True, help="dataset file with gold labels")
    p.add_argument("--out", help="scores output path")
    p.add_argument("--model", help="model label for the score document")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", parents=[common], help="tabulate multiple score files")
    p.add_argument("scores", nargs="+", help="score files produced by evaluate")
    p.add_argument("--out-dir", help="where to write comparison.csv/.json")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("probe", parents=[common], help="run the knowledge probe")
    p.add_argument("--pairs", help="QA pairs file (default: bundled set)")
    p.add_argument("--out", help="transcript output path")
    p.set_defaults(func=cmd_probe)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SubalignError as exc:
        if getattr(args, "json_errors", False):
            payload = {
                "error": type(exc).__name__,
                "detail": str(exc),
                "exit_code": exc.exit_code,
            }
            print(json.dumps(payload, ensure_ascii=False), file=sys.stderr)
        else:
            print(f"error ({type(exc).__name__}): {exc}", file=sys.stderr)
        return exc.exit_code


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
