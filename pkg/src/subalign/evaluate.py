"""Scoring: per-task macro F1 over the three labels, confusion matrices,
method comparison tables, and the knowledge-probe runner.

Conventions, also recorded in score output metadata: per-class F1 with a
zero denominator is defined as 0, and parse-failed records are scored as
wrong for every task (excluding them would flatter failure-prone methods).
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .backends.chat import ChatMessage
from .core import LABEL_VALUES, TASK_CODES
from .errors import (
    BackendError,
    DuplicateId,
    LengthMismatch,
    MalformedRecord,
    MissingFile,
    MissingPrediction,
    OutOfRangeLabel,
    UnmatchedPrediction,
)

logger = logging.getLogger(__name__)

SCORING_CONVENTIONS = {
    "zero_denominator_f1": 0.0,
    "parse_failures_scored_wrong": True,
}


@dataclass(frozen=True)
class ConfusionMatrix:
    """3x3 grid of counts indexed (gold label, predicted label)."""

    counts: tuple

    def __post_init__(self) -> None:
        counts = tuple(tuple(int(c) for c in row) for row in self.counts)
        if len(counts) != 3 or any(len(row) != 3 for row in counts):
            raise ValueError("confusion matrix must be 3x3")
        if any(c < 0 for row in counts for c in row):
            raise ValueError("confusion matrix counts must be >= 0")
        object.__setattr__(self, "counts", counts)

    @property
    def total(self) -> int:
        return sum(c for row in self.counts for c in row)

    def to_dict(self) -> dict:
        return {"counts": [list(row) for row in self.counts]}


def _check_label_value(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value not in LABEL_VALUES:
        raise OutOfRangeLabel(value, context=what)
    return value


def confusion_matrix(golds, preds) -> ConfusionMatrix:
    golds = list(golds)
    preds = list(preds)
    if len(golds) != len(preds):
        raise LengthMismatch(f"{len(golds)} golds vs {len(preds)} predictions")
    grid = [[0, 0, 0], [0, 0, 0], [0, 0, 0]]
    for g, p in zip(golds, preds):
        grid[_check_label_value(g, "gold")][_check_label_value(p, "pred")] += 1
    return ConfusionMatrix(tuple(tuple(row) for row in grid))


def f1_per_class(cm: ConfusionMatrix, label: int) -> float:
    """F1 = 2TP / (2TP + FP + FN); defined as 0 when the denominator is 0."""
    _check_label_value(label, "class")
    tp = cm.counts[label][label]
    fp = sum(cm.counts[g][label] for g in LABEL_VALUES if g != label)
    fn = sum(cm.counts[label][p] for p in LABEL_VALUES if p != label)
    denominator = 2 * tp + fp + fn
    if denominator == 0:
        return 0.0
    return 2.0 * tp / denominator


def macro_f1(golds, preds) -> float:
    cm = confusion_matrix(golds, preds)
    return sum(f1_per_class(cm, label) for label in LABEL_VALUES) / len(LABEL_VALUES)


@dataclass(frozen=True)
class TaskScores:
    """Per-task scores: three per-class F1 values and their mean."""

    task: str
    per_class_f1: tuple
    macro_f1: float
    support: tuple
    parse_failures: int

    def __post_init__(self) -> None:
        per_class = tuple(float(v) for v in self.per_class_f1)
        if len(per_class) != 3 or any(not 0.0 <= v <= 1.0 for v in per_class):
            raise ValueError("per_class_f1 must be three values in [0, 1]")
        object.__setattr__(self, "per_class_f1", per_class)
        mean = sum(per_class) / 3.0
        if abs(mean - self.macro_f1) > 1e-9:
            raise ValueError("macro_f1 must equal the mean of per_class_f1")
        object.__setattr__(self, "support", tuple(int(s) for s in self.support))
        if self.parse_failures < 0 or self.parse_failures > sum(self.support):
            raise ValueError("parse_failures must be within [0, total records]")

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "per_class_f1": list(self.per_class_f1),
            "macro_f1": self.macro_f1,
            "support": list(self.support),
            "parse_failures": self.parse_failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TaskScores":
        return cls(
            task=d["task"],
            per_class_f1=tuple(d["per_class_f1"]),
            macro_f1=float(d["macro_f1"]),
            support=tuple(d["support"]),
            parse_failures=int(d["parse_failures"]),
        )


def evaluate_run(records, dataset) -> dict:
    """Score run records against dataset gold labels; returns task -> TaskScores.

    Every record must join a dataset row by id, and every row must have a
    record. Parse-failed records count against recall of their gold class
    for every task and never count as correct anywhere.
    """
    golds_by_id = {row.sentence.id: row.gold for row in dataset}
    records_by_id: dict = {}
    for record in records:
        if record.sentence_id in records_by_id:
            raise DuplicateId(record.sentence_id)
        if record.sentence_id not in golds_by_id:
            raise UnmatchedPrediction(record.sentence_id)
        records_by_id[record.sentence_id] = record
    for row in dataset:
        if row.sentence.id not in records_by_id:
            raise MissingPrediction(row.sentence.id)

    scores: dict = {}
    for code in TASK_CODES:
        tp = {c: 0 for c in LABEL_VALUES}
        fp = {c: 0 for c in LABEL_VALUES}
        fn = {c: 0 for c in LABEL_VALUES}
        support = {c: 0 for c in LABEL_VALUES}
        failures = 0
        for row in dataset:
            gold = row.gold.get(code)
            support[gold] += 1
            record = records_by_id[row.sentence.id]
            if record.parse_failed or record.predicted is None:
                failures += 1
                fn[gold] += 1
                continue
            pred = record.predicted.get(code)
            if pred == gold:
                tp[gold] += 1
            else:
                fn[gold] += 1
                fp[pred] += 1
        per_class = []
        for c in LABEL_VALUES:
            denominator = 2 * tp[c] + fp[c] + fn[c]
            per_class.append(0.0 if denominator == 0 else 2.0 * tp[c] / denominator)
        scores[code] = TaskScores(
            task=code,
            per_class_f1=tuple(per_class),
            macro_f1=sum(per_class) / 3.0,
            support=tuple(support[c] for c in LABEL_VALUES),
            parse_failures=failures,
        )
    return scores


# --- method comparison ---


@dataclass(frozen=True)
class EvaluatedRun:
    """One scored run: method and model identity plus per-task scores."""

    method: str
    model: str
    scores: dict
    manifest: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ComparisonCell:
    method: str
    model: str
    task: str
    macro_f1: float
    manifest_hash: str = ""

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "model": self.model,
            "task": self.task,
            "macro_f1": self.macro_f1,
            "manifest_hash": self.manifest_hash,
        }


@dataclass(frozen=True)
class ComparisonTable:
    """Macro F1 per (method, model, task) with best/second/worst marks.

    Per column (model, task): the best mark goes to every method tying for
    the top score; a second-best mark exists only when the top is untied;
    the worst mark goes to every method tying for the bottom score.
    """

    cells: tuple
    annotations: tuple

    def to_dict(self) -> dict:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "annotations": [dict(a) for a in self.annotations],
        }

    def _annotation_for(self, model: str, task: str) -> dict:
        for a in self.annotations:
            if a["model"] == model and a["task"] == task:
                return a
        return {"best": [], "second": [], "worst": []}

    def mark_for(self, method: str, model: str, task: str) -> str:
        a = self._annotation_for(model, task)
        if method in a["best"]:
            return "best"
        if method in a["second"]:
            return "second"
        if method in a["worst"]:
            return "worst"
        return ""

    def render_text(self) -> str:
        methods = list(dict.fromkeys(c.method for c in self.cells))
        models = list(dict.fromkeys(c.model for c in self.cells))
        by_key = {(c.method, c.model, c.task): c for c in self.cells}
        marks = {"best": "*", "second": "^", "worst": "v", "": " "}

        width = max(12, max(len(m) for m in methods) + 2)
        lines = []
        for model in models:
            lines.append(f"Model: {model}")
            header = "method".ljust(width) + "".join(t.rjust(10) for t in TASK_CODES)
            lines.append(header)
            for method in methods:
                row = method.ljust(width)
                for task in TASK_CODES:
                    cell = by_key.get((method, model, task))
                    if cell is None:
                        row += "-".rjust(10)
                    else:
                        mark = marks[self.mark_for(method, model, task)]
                        row += f"{cell.macro_f1:.4f}{mark}".rjust(10)
                lines.append(row)
            lines.append("")
        lines.append("marks: * best, ^ second best, v worst (per model/task column)")
        return "\n".join(lines) + "\n"

    def render_csv(self) -> str:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["model", "task", "method", "macro_f1", "mark", "manifest_hash"])
        for cell in self.cells:
            writer.writerow(
                [
                    cell.model,
                    cell.task,
                    cell.method,
                    f"{cell.macro_f1:.6f}",
                    self.mark_for(cell.method, cell.model, cell.task),
                    cell.manifest_hash,
                ]
            )
        return buffer.getvalue()


def compare_methods(runs) -> ComparisonTable:
    """Build the comparison table over evaluated runs."""
    runs = list(runs)
    if not runs:
        raise ValueError("compare_methods needs at least one evaluated run")
    cells = []
    for run in runs:
        for task, task_scores in run.scores.items():
            cells.append(
                ComparisonCell(
                    method=run.method,
                    model=run.model,
                    task=task,
                    macro_f1=task_scores.macro_f1,
                    manifest_hash=str(run.manifest.get("manifest_hash", "")),
                )
            )

    columns: dict = {}
    for cell in cells:
        columns.setdefault((cell.model, cell.task), {})[cell.method] = cell.macro_f1

    annotations = []
    for (model, task), scores in columns.items():
        top = max(scores.values())
        bottom = min(scores.values())
        best = sorted(m for m, v in scores.items() if v == top)
        worst = sorted(m for m, v in scores.items() if v == bottom)
        # A second-best mark exists only when the top is untied, and never
        # doubles with a worst mark (a two-method column has no second).
        second: list = []
        if len(best) == 1:
            rest = [v for m, v in scores.items() if m not in best]
            if rest:
                runner_up = max(rest)
                second = sorted(
                    m
                    for m, v in scores.items()
                    if v == runner_up and m not in best and m not in worst
                )
        annotations.append(
            {"model": model, "task": task, "best": best, "second": second, "worst": worst}
        )
    return ComparisonTable(cells=tuple(cells), annotations=tuple(annotations))


# --- knowledge probe ---

QA_CATEGORIES = ("subculture", "general")


@dataclass(frozen=True)
class QaPair:
    question: str
    reference_answer: str
    category: str

    def __post_init__(self) -> None:
        if not self.question.strip():
            raise ValueError("question must be nonempty")
        if not self.reference_answer.strip():
            raise ValueError("reference answer must be nonempty")
        if self.category not in QA_CATEGORIES:
            raise ValueError(f"unknown QA category: {self.category!r}")


@dataclass(frozen=True)
class ProbeEntry:
    index: int
    question: str
    reference_answer: str
    category: str
    answer: str
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "question": self.question,
            "reference_answer": self.reference_answer,
            "category": self.category,
            "answer": self.answer,
            "error": self.error,
        }


@dataclass(frozen=True)
class ProbeResult:
    """Verbatim probe transcript plus advisory containment tallies.

    The tallies only count case-insensitive containment of the reference
    answer; they are an aid, not a grade. Final answers are meant to be
    graded manually.
    """

    entries: tuple
    tallies: dict

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "tallies": {k: dict(v) for k, v in self.tallies.items()},
            "note": "containment tallies are advisory; grade the answers manually",
        }


def load_qa_pairs(path) -> list:
    """Load question/answer pairs from line-delimited JSON."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    pairs = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    QaPair(
                        question=obj["question"],
                        reference_answer=obj["reference_answer"],
                        category=obj["category"],
                    )
                )
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise MalformedRecord(line_no, f"bad QA pair: {exc}") from exc
    return pairs


def builtin_qa_pairs() -> list:
    """The bundled 20-question probe set (ten subculture, ten general)."""
    from importlib import resources

    text = (resources.files("subalign") / "data" / "qa_pairs.jsonl").read_text("utf-8")
    pairs = []
    for line in text.splitlines():
        if line.strip():
            obj = json.loads(line)
            pairs.append(QaPair(**obj))
    return pairs


def knowledge_probe(pairs, chat, *, max_workers: int = 1) -> ProbeResult:
    """Ask each question in isolation; keep completions verbatim.

    Backend errors are recorded per question without aborting the batch,
    and the transcript is ordered by input index regardless of concurrency.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("knowledge probe needs at least one QA pair")

    def ask(indexed) -> ProbeEntry:
        index, pair = indexed
        try:
            response = chat.complete(
                [ChatMessage("user", pair.question)], stage="probe"
            )
            answer, error = response.text, None
        except BackendError as exc:
            logger.warning("probe question %d failed: %s", index, exc)
            answer, error = "", str(exc)
        return ProbeEntry(
            index=index,
            question=pair.question,
            reference_answer=pair.reference_answer,
            category=pair.category,
            answer=answer,
            error=error,
        )

    indexed = list(enumerate(pairs))
    if max_workers > 1 and len(indexed) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            entries = list(pool.map(ask, indexed))
    else:
        entries = [ask(item) for item in indexed]
    entries.sort(key=lambda e: e.index)

    tallies = {category: {"total": 0, "contains_reference": 0} for category in QA_CATEGORIES}
    for entry in entries:
        tally = tallies[entry.category]
        tally["total"] += 1
        if entry.answer and entry.reference_answer.casefold() in entry.answer.casefold():
            tally["contains_reference"] += 1
    return ProbeResult(entries=tuple(entries), tallies=tallies)
