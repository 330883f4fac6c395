"""Domain types shared by all stages, dataset I/O, and label parsing.

The dataset and prediction files are UTF-8 line-delimited JSON. All types
here are immutable value objects except :class:`RunRecord`, which is a
plain mutable record of one classification run.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    ConfigError,
    DuplicateId,
    IoFailure,
    MalformedRecord,
    MissingFile,
    OutOfRangeLabel,
    ParseFailure,
)

TASK_CODES = ("OD", "ED", "SH")
TASK_NAMES = {
    "OD": "Drug Overdose",
    "ED": "Eating Disorders",
    "SH": "Self-Harming",
}
LABEL_VALUES = (0, 1, 2)
LABEL_NAMES = {0: "Non-concerning", 1: "First-person", 2: "Third-party"}

_LANGUAGE_TAG_RE = re.compile(r"^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$")
_COUNTRY_CODE_RE = re.compile(r"^[A-Za-z]{2}$")


def _require_language_tag(tag: str) -> str:
    if not isinstance(tag, str) or not _LANGUAGE_TAG_RE.match(tag):
        raise ValueError(f"invalid language tag: {tag!r}")
    return tag


@dataclass(frozen=True)
class SubcultureSpec:
    """Names the target subculture, its language, and the search country."""

    name: str
    language: str
    country: str

    def __post_init__(self) -> None:
        name = self.name.strip() if isinstance(self.name, str) else ""
        if not name:
            raise ValueError("subculture name must be nonempty")
        object.__setattr__(self, "name", name)
        _require_language_tag(self.language)
        if not isinstance(self.country, str) or not _COUNTRY_CODE_RE.match(self.country):
            raise ValueError(f"invalid country code: {self.country!r}")
        object.__setattr__(self, "country", self.country.upper())

    def to_dict(self) -> dict:
        return {"name": self.name, "language": self.language, "country": self.country}

    @classmethod
    def from_dict(cls, d: dict) -> "SubcultureSpec":
        return cls(name=d["name"], language=d["language"], country=d["country"])


@dataclass(frozen=True)
class InputSentence:
    """One sentence to classify."""

    id: str
    text: str
    language: str = "und"

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValueError("sentence id must be a nonempty string")
        if not isinstance(self.text, str) or not self.text.strip():
            raise ValueError("sentence text must be nonempty")
        _require_language_tag(self.language)


@dataclass(frozen=True)
class TaskSpec:
    """Ordered set of detection tasks plus the shared label space."""

    tasks: tuple = TASK_CODES

    label_values = LABEL_VALUES
    label_names = LABEL_NAMES

    def __post_init__(self) -> None:
        tasks = tuple(self.tasks)
        if not tasks:
            raise ValueError("task list must be nonempty")
        if len(set(tasks)) != len(tasks):
            raise ValueError("task list contains duplicates")
        unknown = [t for t in tasks if t not in TASK_CODES]
        if unknown:
            raise ValueError(f"unknown task codes: {unknown}")
        object.__setattr__(self, "tasks", tasks)


def _check_label(value, context: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{context}: label must be an integer, got {value!r}")
    if value not in LABEL_VALUES:
        raise ValueError(f"{context}: label {value} outside {{0, 1, 2}}")
    return value


@dataclass(frozen=True)
class LabelSet:
    """The per-task label triple; each field is 0, 1, or 2."""

    od: int
    ed: int
    sh: int

    def __post_init__(self) -> None:
        for code in ("od", "ed", "sh"):
            _check_label(getattr(self, code), code)

    def get(self, task: str) -> int:
        return getattr(self, task.lower())

    def as_tuple(self) -> tuple:
        return (self.od, self.ed, self.sh)

    def to_dict(self) -> dict:
        return {"od": self.od, "ed": self.ed, "sh": self.sh}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelSet":
        return cls(od=d["od"], ed=d["ed"], sh=d["sh"])


@dataclass(frozen=True)
class DatasetRecord:
    """One benchmark row: a sentence plus its gold labels."""

    sentence: InputSentence
    gold: LabelSet


@dataclass
class RunRecord:
    """One classified row: prediction (or failure marker) plus the raw exchange.

    Exactly one of ``predicted`` / ``parse_failed`` is set: a record either
    carries a full label set or is marked as a parse failure. ``partial_labels``
    and ``task_errors`` retain per-task detail for methods that label tasks
    independently.
    """

    sentence_id: str
    method: str
    predicted: LabelSet | None = None
    parse_failed: bool = False
    transcript: list = field(default_factory=list)
    backend_calls: int = 0
    cache_hits: int = 0
    elapsed: float = 0.0
    partial_labels: dict = field(default_factory=dict)
    task_errors: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if (self.predicted is None) != bool(self.parse_failed):
            raise ValueError("record must carry either a prediction or a failure marker")
        if not (self.backend_calls >= self.cache_hits >= 0):
            raise ValueError("expected backend_calls >= cache_hits >= 0")
        self.transcript = [(str(role), str(text)) for role, text in self.transcript]

    def to_dict(self) -> dict:
        d = {
            "id": self.sentence_id,
            "method": self.method,
            "predicted": self.predicted.to_dict() if self.predicted else None,
            "parse_failed": self.parse_failed,
            "transcript": [[role, text] for role, text in self.transcript],
            "backend_calls": self.backend_calls,
            "cache_hits": self.cache_hits,
            "elapsed_ms": round(self.elapsed * 1000.0, 3),
        }
        if self.partial_labels:
            d["partial_labels"] = dict(self.partial_labels)
        if self.task_errors:
            d["task_errors"] = dict(self.task_errors)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunRecord":
        predicted = d.get("predicted")
        return cls(
            sentence_id=d["id"],
            method=d["method"],
            predicted=LabelSet.from_dict(predicted) if predicted else None,
            parse_failed=bool(d.get("parse_failed", False)),
            transcript=[tuple(turn) for turn in d.get("transcript", [])],
            backend_calls=int(d.get("backend_calls", 0)),
            cache_hits=int(d.get("cache_hits", 0)),
            elapsed=float(d.get("elapsed_ms", 0.0)) / 1000.0,
            partial_labels=dict(d.get("partial_labels", {})),
            task_errors=dict(d.get("task_errors", {})),
        )


# --- dataset I/O ---


def load_dataset(path, format_hint: str | None = None) -> list:
    """Load a line-delimited JSON dataset, validating every record.

    Rows without an ``id`` get a zero-padded line index. Blank lines are
    skipped. Ordering is preserved.
    """
    if format_hint not in (None, "jsonl"):
        raise ConfigError(f"unsupported dataset format hint: {format_hint!r}")
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)

    records: list = []
    seen_ids: set = set()
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(line_no, f"invalid JSON: {exc.msg}") from exc
            if not isinstance(obj, dict):
                raise MalformedRecord(line_no, "record is not a JSON object")

            text = obj.get("text")
            if not isinstance(text, str) or not text.strip():
                raise MalformedRecord(line_no, "missing nonempty 'text'")
            record_id = obj.get("id")
            if record_id is None:
                record_id = f"{line_no:04d}"
            elif not isinstance(record_id, str) or not record_id:
                raise MalformedRecord(line_no, "'id' must be a nonempty string")
            if record_id in seen_ids:
                raise DuplicateId(record_id)
            seen_ids.add(record_id)

            labels = obj.get("labels")
            if not isinstance(labels, dict):
                raise MalformedRecord(line_no, "missing 'labels' object")
            parsed = {}
            for code in ("od", "ed", "sh"):
                if code not in labels:
                    raise MalformedRecord(line_no, f"missing label '{code}'")
                try:
                    parsed[code] = _check_label(labels[code], code)
                except ValueError as exc:
                    raise MalformedRecord(line_no, str(exc)) from exc

            language = obj.get("language", "und")
            try:
                sentence = InputSentence(id=record_id, text=text, language=language)
            except ValueError as exc:
                raise MalformedRecord(line_no, str(exc)) from exc
            records.append(DatasetRecord(sentence=sentence, gold=LabelSet(**parsed)))
    return records


def save_dataset(records, path) -> None:
    """Write dataset records back out in the load format (round-trip aid)."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                obj = {
                    "id": rec.sentence.id,
                    "text": rec.sentence.text,
                    "language": rec.sentence.language,
                    "labels": rec.gold.to_dict(),
                }
                fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write dataset to {path}: {exc}") from exc


def save_predictions(records, path, extra_fields: dict | None = None) -> None:
    """Write run records as line-delimited JSON, one line per record."""
    path = Path(path)
    try:
        with path.open("w", encoding="utf-8") as fh:
            for rec in records:
                obj = rec.to_dict()
                if extra_fields:
                    obj.update(extra_fields)
                fh.write(json.dumps(obj, ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write predictions to {path}: {exc}") from exc


def load_predictions(path) -> list:
    """Read run records previously written by :func:`save_predictions`."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(RunRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise MalformedRecord(line_no, f"bad run record: {exc}") from exc
    return out


# --- label parsing ---

_FALLBACK_PAIR_RE = re.compile(
    r"""\b(od|ed|sh)\b["']?\s*(?:label|score)?\s*(?:is|[:=\-])?\s*["']?(-?\d+)""",
    re.IGNORECASE,
)
_BARE_INT_RE = re.compile(r"(?<![\w.])(-?\d+)(?!\w)(?!\.?\d)")


def extract_json_objects(text: str) -> list:
    """Return every JSON object parseable from anywhere inside ``text``."""
    decoder = json.JSONDecoder()
    found = []
    idx = 0
    while True:
        start = text.find("{", idx)
        if start == -1:
            break
        try:
            obj, _end = decoder.raw_decode(text, start)
            if isinstance(obj, dict):
                found.append(obj)
        except ValueError:
            pass
        idx = start + 1
    return found


def _int_label(value):
    """Return the value as an int label candidate, or None if not numeric."""
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and re.fullmatch(r"-?\d+", value.strip()):
        return int(value.strip())
    return None


def parse_labels(raw: str) -> LabelSet:
    """Parse a model completion into a full label set.

    Strategy: first a strict pass over any JSON object carrying all three
    od/ed/sh keys (the last such object wins); on failure, a regex fallback
    scans for task-code/integer pairs case-insensitively, keeping the last
    value seen per code. Never invents a label: incomplete output raises
    ParseFailure, values outside {0, 1, 2} raise OutOfRangeLabel.
    """
    strict = None
    for obj in extract_json_objects(raw):
        lowered = {k.lower(): v for k, v in obj.items() if isinstance(k, str)}
        if all(code in lowered for code in ("od", "ed", "sh")):
            values = {code: _int_label(lowered[code]) for code in ("od", "ed", "sh")}
            if all(v is not None for v in values.values()):
                strict = values
    if strict is not None:
        for code, value in strict.items():
            if value not in LABEL_VALUES:
                raise OutOfRangeLabel(value, context=code)
        return LabelSet(**strict)

    found: dict = {}
    for match in _FALLBACK_PAIR_RE.finditer(raw):
        found[match.group(1).lower()] = int(match.group(2))
    missing = [code for code in ("od", "ed", "sh") if code not in found]
    if missing:
        raise ParseFailure(f"no labels found for: {', '.join(missing)}")
    for code, value in found.items():
        if value not in LABEL_VALUES:
            raise OutOfRangeLabel(value, context=code)
    return LabelSet(**found)


def parse_single_label(raw: str, task: str) -> int:
    """Parse a single task's label from a completion.

    Reasoning-style completions may contain intermediate numbers, so the
    last parseable candidate wins: last JSON object carrying the task key,
    else the last ``task: n`` pair, else the last standalone integer.
    """
    code = task.lower()
    if code not in ("od", "ed", "sh"):
        raise ValueError(f"unknown task code: {task!r}")

    picked = None
    for obj in extract_json_objects(raw):
        lowered = {k.lower(): v for k, v in obj.items() if isinstance(k, str)}
        if code in lowered:
            value = _int_label(lowered[code])
            if value is not None:
                picked = value
    if picked is None:
        pair_re = re.compile(
            rf"""\b{code}\b["']?\s*(?:label|score)?\s*(?:is|[:=\-])?\s*["']?(-?\d+)""",
            re.IGNORECASE,
        )
        matches = list(pair_re.finditer(raw))
        if matches:
            picked = int(matches[-1].group(1))
    if picked is None:
        matches = list(_BARE_INT_RE.finditer(raw))
        if matches:
            picked = int(matches[-1].group(1))
    if picked is None:
        raise ParseFailure(f"no label found for task {task}")
    if picked not in LABEL_VALUES:
        raise OutOfRangeLabel(picked, context=task)
    return picked
