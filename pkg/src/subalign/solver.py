"""Classification stage: interpret a sentence against the subculture report,
then label it; plus the zero-shot, chain-of-thought, plan-and-solve, and
self-refine baselines.

Every ``chat`` argument is a client exposing
``complete(messages, stage=...) -> ChatResponse``; per-record call and
cache-hit counts are tallied through a RecordingChat wrapper so records can
be produced from a shared client under concurrency.
"""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass

from .backends.chat import ChatMessage, RecordingChat, assistant, user
from .core import (
    TASK_CODES,
    TASK_NAMES,
    InputSentence,
    LabelSet,
    RunRecord,
    TaskSpec,
    parse_labels,
    parse_single_label,
)
from .errors import AlignmentParseFailure, LabelParseError
from .pipeline import AlignmentReport, render_terminology

logger = logging.getLogger(__name__)

METHODS = ("sas", "zero_shot", "zero_shot_cot", "plan_and_solve", "self_refine")

COT_TRIGGER = "Let's think step by step!"
PLAN_AND_SOLVE_TRIGGER = (
    "Let's first understand the problem and devise a plan to solve the problem. "
    "Then, let's carry out the plan to solve the problem step by step."
)

_ALIGNMENT_RE = re.compile(
    r"DESCRIPTION\s*:\s*(?P<description>.*?)\s*REWRITTEN\s*:\s*(?P<rewritten>.+)",
    re.IGNORECASE | re.DOTALL,
)
_EMPTY_DESCRIPTION = {"", "none", "(none)", "n/a", "-"}
_ACCEPT_RE = re.compile(r"\bACCEPT\b")


@dataclass(frozen=True)
class Interpretation:
    """Per-term explanation plus the plain-language rewrite of a sentence.

    The description may be empty only when the model asserted the sentence
    uses no subcultural expressions.
    """

    description: str
    rewritten: str

    def __post_init__(self) -> None:
        if not self.rewritten.strip():
            raise ValueError("rewritten sentence must be nonempty")


@dataclass(frozen=True)
class DialogueHistory:
    """The alignment exchange carried into the solving prompt."""

    turns: tuple

    def __post_init__(self) -> None:
        turns = tuple(self.turns)
        roles = {t.role for t in turns}
        if "user" not in roles or "assistant" not in roles:
            raise ValueError("dialogue history needs at least one user and one assistant turn")
        object.__setattr__(self, "turns", turns)


@dataclass(frozen=True)
class MethodConfig:
    """Which classification method to run, and its method-specific knobs."""

    method: str
    prompt_language: str = "en"
    refine_limit: int = 3
    report: AlignmentReport | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method: {self.method!r}")
        if self.method == "sas" and self.report is None:
            raise ValueError("method 'sas' requires an alignment report")
        if self.method == "self_refine" and self.refine_limit < 1:
            raise ValueError("self_refine requires refine_limit >= 1")


def _require_full_tasks(task_spec: TaskSpec) -> TaskSpec:
    # A LabelSet always carries all three tasks, so classification needs them all.
    if set(task_spec.tasks) != set(TASK_CODES):
        raise ValueError("classification requires the full OD/ED/SH task set")
    return task_spec


def _render_tasks(task_spec: TaskSpec) -> str:
    return "\n".join(f"- {code}: {TASK_NAMES[code]}" for code in task_spec.tasks)


def _as_transcript(turns) -> list:
    return [(t.role, t.content) for t in turns]


def _parse_interpretation(text: str) -> Interpretation | None:
    match = _ALIGNMENT_RE.search(text)
    if not match:
        return None
    description = match.group("description").strip()
    if description.strip("().").strip().casefold() in _EMPTY_DESCRIPTION:
        description = ""
    rewritten = match.group("rewritten").strip()
    if not rewritten:
        return None
    return Interpretation(description=description, rewritten=rewritten)


def align_sentence(sentence: InputSentence, report: AlignmentReport, template, chat):
    """Interpret the sentence against the report's terminology.

    Returns (Interpretation, DialogueHistory); the history holds the full
    exchange, including the one corrective re-prompt if it was needed.
    """
    prompt = template.render(terminology=render_terminology(report), sentence=sentence.text)
    turns = [user(prompt)]
    response = chat.complete(turns, stage="alignment")
    turns.append(assistant(response.text))

    interpretation = _parse_interpretation(response.text)
    if interpretation is None:
        logger.debug("alignment output for %s unlabeled; re-prompting once", sentence.id)
        turns.append(
            user(
                "Your answer did not follow the required format. Reply again with "
                "exactly two labeled sections: DESCRIPTION: and REWRITTEN:."
            )
        )
        retry = chat.complete(turns, stage="alignment")
        turns.append(assistant(retry.text))
        interpretation = _parse_interpretation(retry.text)
    if interpretation is None:
        raise AlignmentParseFailure(
            f"no DESCRIPTION/REWRITTEN sections in alignment output for {sentence.id}",
            turns=turns,
        )
    return interpretation, DialogueHistory(turns=tuple(turns))


def _solving_message(task_spec: TaskSpec, template) -> ChatMessage:
    # The sentence is deliberately not restated here; the solver sees it
    # through the alignment turns it continues from.
    return user(template.render(tasks=_render_tasks(task_spec)))


def solve_task(task_spec: TaskSpec, history: DialogueHistory, template, chat) -> LabelSet:
    """Append the solving prompt to the alignment exchange and parse labels."""
    _require_full_tasks(task_spec)
    messages = list(history.turns) + [_solving_message(task_spec, template)]
    response = chat.complete(messages, stage="solving")
    return parse_labels(response.text)


def classify_sas(
    sentence: InputSentence,
    report: AlignmentReport,
    templates,
    chat,
    task_spec: TaskSpec | None = None,
):
    """Two-phase classification: align, then solve over the alignment turns.

    Returns (labels_or_None, RunRecord). Stage parse failures are recorded
    in the RunRecord rather than raised; when alignment fails, no solving
    call is issued.
    """
    task_spec = _require_full_tasks(task_spec or TaskSpec())
    recorder = RecordingChat(chat)
    started = time.perf_counter()

    try:
        _interpretation, history = align_sentence(
            sentence, report, templates.get("alignment"), recorder
        )
    except AlignmentParseFailure as exc:
        record = RunRecord(
            sentence_id=sentence.id,
            method="sas",
            predicted=None,
            parse_failed=True,
            transcript=_as_transcript(exc.turns),
            backend_calls=recorder.calls,
            cache_hits=recorder.cache_hits,
            elapsed=time.perf_counter() - started,
            task_errors={"alignment": str(exc)},
        )
        return None, record

    solving = _solving_message(task_spec, templates.get("solving"))
    messages = list(history.turns) + [solving]
    response = recorder.complete(messages, stage="solving")
    transcript = _as_transcript(history.turns) + [
        (solving.role, solving.content),
        ("assistant", response.text),
    ]
    try:
        labels = parse_labels(response.text)
    except LabelParseError as exc:
        record = RunRecord(
            sentence_id=sentence.id,
            method="sas",
            predicted=None,
            parse_failed=True,
            transcript=transcript,
            backend_calls=recorder.calls,
            cache_hits=recorder.cache_hits,
            elapsed=time.perf_counter() - started,
            task_errors={"solving": str(exc)},
        )
        return None, record

    record = RunRecord(
        sentence_id=sentence.id,
        method="sas",
        predicted=labels,
        transcript=transcript,
        backend_calls=recorder.calls,
        cache_hits=recorder.cache_hits,
        elapsed=time.perf_counter() - started,
    )
    return labels, record


def _classify_per_task(
    sentence: InputSentence,
    task_spec: TaskSpec,
    template,
    chat,
    *,
    method: str,
    trigger: str | None = None,
):
    """Shared engine of the zero-shot family: one isolated prompt per task.

    A failed task is recorded per task; any failure marks the whole record
    as a parse failure while the successfully parsed labels are retained in
    ``partial_labels``.
    """
    _require_full_tasks(task_spec)
    recorder = RecordingChat(chat)
    started = time.perf_counter()
    transcript: list = []
    labels: dict = {}
    task_errors: dict = {}

    for code in task_spec.tasks:
        prompt = template.render(
            task_code=code, task_name=TASK_NAMES[code], sentence=sentence.text
        )
        if trigger:
            prompt = f"{prompt}\n\n{trigger}"
        response = recorder.complete([user(prompt)], stage="solving")
        transcript.append(("user", prompt))
        transcript.append(("assistant", response.text))
        try:
            labels[code.lower()] = parse_single_label(response.text, code)
        except LabelParseError as exc:
            task_errors[code] = str(exc)

    elapsed = time.perf_counter() - started
    if task_errors:
        record = RunRecord(
            sentence_id=sentence.id,
            method=method,
            predicted=None,
            parse_failed=True,
            transcript=transcript,
            backend_calls=recorder.calls,
            cache_hits=recorder.cache_hits,
            elapsed=elapsed,
            partial_labels=labels,
            task_errors=task_errors,
        )
        return None, record

    label_set = LabelSet(**labels)
    record = RunRecord(
        sentence_id=sentence.id,
        method=method,
        predicted=label_set,
        transcript=transcript,
        backend_calls=recorder.calls,
        cache_hits=recorder.cache_hits,
        elapsed=elapsed,
    )
    return label_set, record


def classify_zero_shot(sentence, task_spec, template, chat):
    """One plain prompt per task; labels assembled into a LabelSet."""
    return _classify_per_task(sentence, task_spec, template, chat, method="zero_shot")


def classify_zero_shot_cot(sentence, task_spec, template, chat):
    """Zero-shot with the step-by-step trigger appended to every prompt."""
    return _classify_per_task(
        sentence, task_spec, template, chat, method="zero_shot_cot", trigger=COT_TRIGGER
    )


def classify_plan_and_solve(sentence, task_spec, template, chat):
    """Zero-shot with the plan-then-solve trigger appended to every prompt."""
    return _classify_per_task(
        sentence,
        task_spec,
        template,
        chat,
        method="plan_and_solve",
        trigger=PLAN_AND_SOLVE_TRIGGER,
    )


def _self_refine_exchange(sentence, task_spec, templates, chat, limit: int):
    """Answer / feedback / revision loop. Returns (answer, turns, rounds).

    ``rounds`` counts answer productions; feedback is requested only while
    the round count is under the limit, and a feedback of ACCEPT stops the
    loop early.
    """
    if limit < 1:
        raise ValueError("refine limit must be >= 1")
    _require_full_tasks(task_spec)
    tasks_block = _render_tasks(task_spec)

    messages = [
        user(templates.get("classify").render(sentence=sentence.text, tasks=tasks_block))
    ]
    answer = chat.complete(messages, stage="solving").text
    messages.append(assistant(answer))
    rounds = 1

    feedback_template = templates.get("refine_feedback")
    revision_template = templates.get("refine_revision")
    while rounds < limit:
        messages.append(user(feedback_template.render(answer=answer, tasks=tasks_block)))
        feedback = chat.complete(messages, stage="feedback").text
        messages.append(assistant(feedback))
        if _ACCEPT_RE.search(feedback):
            break
        messages.append(user(revision_template.render()))
        answer = chat.complete(messages, stage="solving").text
        messages.append(assistant(answer))
        rounds += 1
    return answer, messages, rounds


def classify_self_refine(sentence, task_spec, templates, chat, limit: int = 3):
    """Iterative self-feedback classification. Returns (labels, rounds_used)."""
    answer, _messages, rounds = _self_refine_exchange(sentence, task_spec, templates, chat, limit)
    return parse_labels(answer), rounds


def classify_sentence(
    sentence: InputSentence,
    config: MethodConfig,
    templates,
    chat,
    task_spec: TaskSpec | None = None,
) -> RunRecord:
    """Run one sentence through the configured method, always returning a
    RunRecord (failures are recorded, not raised)."""
    task_spec = task_spec or TaskSpec()

    if config.method == "sas":
        _, record = classify_sas(sentence, config.report, templates, chat, task_spec)
        return record
    if config.method == "zero_shot":
        _, record = classify_zero_shot(sentence, task_spec, templates.get("zero_shot"), chat)
        return record
    if config.method == "zero_shot_cot":
        _, record = classify_zero_shot_cot(sentence, task_spec, templates.get("zero_shot"), chat)
        return record
    if config.method == "plan_and_solve":
        _, record = classify_plan_and_solve(sentence, task_spec, templates.get("zero_shot"), chat)
        return record

    # self_refine
    recorder = RecordingChat(chat)
    started = time.perf_counter()
    answer, messages, _rounds = _self_refine_exchange(
        sentence, task_spec, templates, recorder, config.refine_limit
    )
    elapsed = time.perf_counter() - started
    transcript = _as_transcript(messages)
    try:
        labels = parse_labels(answer)
    except LabelParseError as exc:
        return RunRecord(
            sentence_id=sentence.id,
            method="self_refine",
            predicted=None,
            parse_failed=True,
            transcript=transcript,
            backend_calls=recorder.calls,
            cache_hits=recorder.cache_hits,
            elapsed=elapsed,
            task_errors={"final_answer": str(exc)},
        )
    return RunRecord(
        sentence_id=sentence.id,
        method="self_refine",
        predicted=labels,
        transcript=transcript,
        backend_calls=recorder.calls,
        cache_hits=recorder.cache_hits,
        elapsed=elapsed,
    )
