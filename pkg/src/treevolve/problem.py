"""Seed problems and the line-delimited seed file."""

from __future__ import annotations

import json
import string
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Iterable


class TaskKind(str, Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    CLOSE_ENDED = "close_ended"


class SeedFileError(ValueError):
    pass


@dataclass(frozen=True)
class ProblemInstance:
    """One seed question with its gold answer.

    ``options`` holds option texts in letter order (A, B, ...). The gold
    answer of a multiple-choice problem is the option letter.
    """

    id: str
    prompt: str
    gold_answer: str
    task_kind: TaskKind = TaskKind.CLOSE_ENDED
    options: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        object.__setattr__(self, "options", tuple(self.options))
        if not str(self.id):
            raise ValueError("problem id must be non-empty")
        if not self.gold_answer or not self.gold_answer.strip():
            raise ValueError(f"problem {self.id!r}: gold answer must be non-empty")
        if self.task_kind is TaskKind.MULTIPLE_CHOICE and not self.options:
            raise ValueError(f"problem {self.id!r}: multiple_choice requires options")
        if len(self.options) > len(string.ascii_uppercase):
            raise ValueError(f"problem {self.id!r}: too many options")

    @property
    def is_multiple_choice(self) -> bool:
        return self.task_kind is TaskKind.MULTIPLE_CHOICE

    @property
    def option_letters(self) -> tuple[str, ...]:
        return tuple(string.ascii_uppercase[: len(self.options)])

    def question_text(self) -> str:
        """Prompt text with the option list appended, as shown to the policy."""
        if not self.options:
            return self.prompt
        lines = [f"{letter}. {text}" for letter, text in zip(self.option_letters, self.options)]
        return self.prompt + "\n" + "\n".join(lines)

    def to_record(self) -> dict[str, Any]:
        rec: dict[str, Any] = {
            "id": self.id,
            "prompt": self.prompt,
            "answer": self.gold_answer,
            "task_kind": self.task_kind.value,
        }
        if self.options:
            rec["options"] = list(self.options)
        return rec

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "ProblemInstance":
        options = rec.get("options") or ()
        if isinstance(options, dict):
            options = [options[k] for k in sorted(options)]
        return cls(
            id=str(rec["id"]),
            prompt=rec["prompt"],
            gold_answer=str(rec["answer"]),
            task_kind=TaskKind(rec.get("task_kind", TaskKind.CLOSE_ENDED.value)),
            options=tuple(options),
        )


def load_seed_file(path: str | Path) -> list[ProblemInstance]:
    """Read a seed file; raises SeedFileError on bad lines or an empty file."""
    problems: list[ProblemInstance] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                problem = ProblemInstance.from_record(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
                raise SeedFileError(f"{path}:{lineno}: {exc}") from exc
            if problem.id in seen:
                raise SeedFileError(f"{path}:{lineno}: duplicate id {problem.id!r}")
            seen.add(problem.id)
            problems.append(problem)
    if not problems:
        raise SeedFileError(f"{path}: no problems")
    return problems


def write_seed_file(path: str | Path, problems: Iterable[ProblemInstance]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in problems:
            fh.write(json.dumps(p.to_record(), ensure_ascii=False) + "\n")
