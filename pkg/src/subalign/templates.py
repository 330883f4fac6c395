"""Prompt templates: one file per stage per language, `{name}` placeholders.

Each stage declares the placeholders it needs; a template must reference
each of them exactly once and nothing else. Builtin English templates ship
with the package and are used when a template directory does not override
them.
"""

from __future__ import annotations

import hashlib
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .errors import TemplateError

STAGE_PLACEHOLDERS = {
    "query_planning": ("subculture", "language", "country", "n"),
    "report": ("subculture", "results"),
    "alignment": ("terminology", "sentence"),
    "solving": ("tasks",),
    "judge": ("report",),
    "classify": ("sentence", "tasks"),
    "zero_shot": ("task_code", "task_name", "sentence"),
    "refine_feedback": ("answer", "tasks"),
    "refine_revision": (),
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    stage: str
    template: str
    language: str = "en"

    def __post_init__(self) -> None:
        required = STAGE_PLACEHOLDERS.get(self.stage)
        if required is None:
            raise TemplateError(f"unknown template stage: {self.stage!r}")
        counts = Counter(_PLACEHOLDER_RE.findall(self.template))
        for name in required:
            if counts.get(name, 0) != 1:
                raise TemplateError(
                    f"{self.stage} template must reference {{{name}}} exactly once "
                    f"(found {counts.get(name, 0)})"
                )
        unknown = sorted(set(counts) - set(required))
        if unknown:
            raise TemplateError(f"{self.stage} template has unknown placeholders: {unknown}")

    def render(self, **values) -> str:
        missing = [k for k in STAGE_PLACEHOLDERS[self.stage] if k not in values]
        if missing:
            raise TemplateError(f"missing values for placeholders: {missing}")
        return _PLACEHOLDER_RE.sub(lambda m: str(values[m.group(1)]), self.template)

    def digest(self) -> str:
        return hashlib.sha256(self.template.encode("utf-8")).hexdigest()


def _builtin_text(stage: str, language: str):
    base = resources.files("subalign") / "prompts"
    for lang in dict.fromkeys((language, "en")):
        candidate = base / f"{stage}.{lang}.txt"
        if candidate.is_file():
            return candidate.read_text(encoding="utf-8"), lang
    return None, language


class TemplateLibrary:
    """Loads stage templates from a directory, falling back to the builtins."""

    def __init__(self, directory=None, language: str = "en") -> None:
        self.directory = Path(directory) if directory else None
        if self.directory is not None and not self.directory.is_dir():
            raise TemplateError(f"template directory does not exist: {self.directory}")
        self.language = language
        self._cache: dict = {}

    def get(self, stage: str) -> PromptTemplate:
        if stage in self._cache:
            return self._cache[stage]
        text = None
        language = self.language
        if self.directory is not None:
            for lang in dict.fromkeys((self.language, "en")):
                path = self.directory / f"{stage}.{lang}.txt"
                if path.is_file():
                    text = path.read_text(encoding="utf-8")
                    language = lang
                    break
        if text is None:
            text, language = _builtin_text(stage, self.language)
        if text is None:
            raise TemplateError(f"no template available for stage {stage!r}")
        template = PromptTemplate(stage=stage, template=text, language=language)
        self._cache[stage] = template
        return template

    def digests(self, stages) -> dict:
        return {stage: self.get(stage).digest() for stage in stages}
