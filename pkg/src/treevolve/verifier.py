"""Rule-based answer extraction and exact-match verification."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from treevolve.problem import ProblemInstance, TaskKind
from treevolve.prompts import ANSWER_MARKER

FORCED_ANSWER_MAX_TOKENS = 20

_MARKER = re.compile(re.escape(ANSWER_MARKER), re.IGNORECASE)
_QUOTES = "\"'`‘’“”"
# terminal punctuation plus closing quotes/brackets
_TRAILING = ".,;:!?" + _QUOTES + ")]}>"
_WS = re.compile(r"\s+")


class Method(str, Enum):
    CHOICE_MATCH = "choice_match"
    PHRASE_MATCH = "phrase_match"
    UNEXTRACTABLE = "unextractable"


@dataclass(frozen=True)
class Verdict:
    extracted: str | None
    correct: bool
    method: Method


@dataclass(frozen=True)
class ForcedContinuation:
    prompt: str
    max_new_tokens: int = FORCED_ANSWER_MAX_TOKENS
    allowed_first_tokens: frozenset[str] | None = None


def extract_answer(response: str) -> str | None:
    """Text after the last "The answer is", trimmed; None without a marker."""
    last = None
    for last in _MARKER.finditer(response):
        pass
    if last is None:
        return None
    answer = response[last.end():].strip()
    answer = answer.lstrip(":").strip()
    answer = answer.rstrip(_TRAILING + " \t\r\n")
    answer = answer.lstrip(_QUOTES + "([{<").strip()
    return answer or None


def normalize_phrase(text: str) -> str:
    text = text.lower()
    text = text.translate({ord(q): None for q in _QUOTES})
    return _WS.sub(" ", text).strip()


def normalize_answer(text: str, task_kind: TaskKind | str | None = None) -> str:
    """Equivalence key for grouping answers; choice answers reduce to a letter."""
    if task_kind is not None and TaskKind(task_kind) is TaskKind.MULTIPLE_CHOICE:
        stripped = text.strip()
        return stripped[:1].lower()
    return normalize_phrase(text)


def verify(extracted: str | None, problem: ProblemInstance) -> Verdict:
    if extracted is None or not extracted.strip():
        return Verdict(extracted, False, Method.UNEXTRACTABLE)
    if problem.is_multiple_choice:
        ok = extracted.strip()[0].lower() == problem.gold_answer.strip()[0].lower()
        return Verdict(extracted, ok, Method.CHOICE_MATCH)
    gold = normalize_phrase(problem.gold_answer)
    ok = bool(gold) and gold in normalize_phrase(extracted)
    return Verdict(extracted, ok, Method.PHRASE_MATCH)


def judge(response: str, problem: ProblemInstance) -> Verdict:
    """Extract then verify in one call."""
    return verify(extract_answer(response), problem)


def build_forced_continuation(
    trajectory: str, problem: ProblemInstance | None = None
) -> ForcedContinuation:
    """Append the answer marker so the model only has to name the answer."""
    prompt = trajectory.rstrip() + "\n\n" + ANSWER_MARKER if trajectory.strip() else ANSWER_MARKER
    allowed = None
    if problem is not None and problem.is_multiple_choice:
        allowed = frozenset(problem.option_letters)
    return ForcedContinuation(prompt=prompt, allowed_first_tokens=allowed)
