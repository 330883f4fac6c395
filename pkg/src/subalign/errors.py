"""Exception hierarchy shared across the package.

Every error carries an ``exit_code`` so the CLI can map failures onto the
documented process statuses: 2 usage/config, 3 backend, 4 data.
"""

from __future__ import annotations


class SubalignError(Exception):
    """Base class for all package errors."""

    exit_code = 1


# --- configuration / usage (exit 2) ---


class ConfigError(SubalignError):
    exit_code = 2


class TemplateError(ConfigError):
    pass


# --- data errors (exit 4) ---


class DataError(SubalignError):
    exit_code = 4


class MissingFile(DataError):
    def __init__(self, path) -> None:
        super().__init__(f"file not found: {path}")
        self.path = str(path)


class MalformedRecord(DataError):
    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateId(DataError):
    def __init__(self, record_id: str) -> None:
        super().__init__(f"duplicate record id: {record_id!r}")
        self.record_id = record_id


class IoFailure(DataError):
    pass


class LengthMismatch(DataError):
    pass


class UnmatchedPrediction(DataError):
    def __init__(self, record_id: str) -> None:
        super().__init__(f"prediction id {record_id!r} has no dataset row")
        self.record_id = record_id


class MissingPrediction(DataError):
    def __init__(self, record_id: str) -> None:
        super().__init__(f"dataset row {record_id!r} has no prediction")
        self.record_id = record_id


# --- label parsing ---


class LabelParseError(SubalignError):
    pass


class ParseFailure(LabelParseError):
    pass


class OutOfRangeLabel(LabelParseError):
    def __init__(self, value, context: str = "") -> None:
        detail = f"label {value!r} outside {{0, 1, 2}}"
        if context:
            detail = f"{detail} ({context})"
        super().__init__(detail)
        self.value = value


# --- backends (exit 3) ---


class BackendError(SubalignError):
    exit_code = 3


class BackendUnavailable(BackendError):
    pass


class AuthFailure(BackendError):
    pass


class BudgetExceeded(BackendError):
    pass


class QuotaExceeded(BackendError):
    pass


class MockScriptError(BackendError):
    """A scripted mock backend received a request it has no answer for."""


# --- stage-output parsing (exit 3: the backend produced unusable output) ---


class StageParseError(SubalignError):
    exit_code = 3


class PlanParseFailure(StageParseError):
    pass


class ReportParseFailure(StageParseError):
    pass


class JudgeParseFailure(StageParseError):
    pass


class AlignmentParseFailure(StageParseError):
    """Carries the conversation turns seen so far in ``turns``."""

    def __init__(self, message: str, turns=()) -> None:
        super().__init__(message)
        self.turns = tuple(turns)


class AllQueriesEmpty(SubalignError):
    exit_code = 3
