"""Prompt templates, step joining and step splitting.

Templates are model-agnostic text: any chat scaffolding is added by the
HTTP adapter. Each template body uses three placeholders, ``{few_shot}``,
``{problem}`` and ``{trajectory}``; the text before ``{trajectory}`` is the
user turn and the rest is the assistant prefix the policy continues.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

from treevolve.problem import ProblemInstance
from treevolve.tree import ROOT_STEP

STEP_SEPARATOR = "\n\n"
REFLECT_PREAMBLE = "Wait, the previous answer maybe incorrect and I need to reconsider other options."
ANSWER_MARKER = "The answer is"

_STEP_MARKER = re.compile(r"Step\s+\d+\s*:")


class PromptKind(str, Enum):
    REASON = "reason"
    FINISH = "finish"
    REFLECT = "reflect"
    ANS = "ans"
    FORCED = "forced"


_EXPERT = "You are a professional medical expert majored at reasoning in hard medical-related problems."
_CONCLUDE = (
    "Use thorough and elaborate steps to complete your reasoning. "
    'Conclude the task by stating: "The answer is {answer}".'
)

DEFAULT_BODIES: dict[PromptKind, str] = {
    PromptKind.REASON: (
        "{few_shot}" + _EXPERT + "\n\n"
        "Think critically about the problem and answer with concise, accurate reasoning. "
        "Please ensure your reasoning is thorough and elaborate, breaking down each step "
        "of your thought process.\n\n"
        "Problem: {problem}\n\n{trajectory}"
    ),
    PromptKind.FINISH: "{few_shot}" + _EXPERT + "\n\n" + _CONCLUDE + "\n\nProblem: {problem}\n\n{trajectory}",
    PromptKind.REFLECT: "{few_shot}" + _EXPERT + "\n\n" + _CONCLUDE + "\n\nProblem: {problem}\n\n{trajectory}",
    PromptKind.ANS: (
        "{few_shot}" + _EXPERT + "\n\n"
        "Based on the reasoning so far, directly give the final answer by stating: "
        '"The answer is {answer}".\n\n'
        "Problem: {problem}\n\n{trajectory}"
    ),
    PromptKind.FORCED: "Problem: {problem}\n\n{trajectory}",
}

TEMPLATE_FILES = {kind: f"{kind.value}.txt" for kind in PromptKind}


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class PromptTemplate:
    kind: PromptKind
    body: str

    def __post_init__(self) -> None:
        if "{trajectory}" not in self.body or "{problem}" not in self.body:
            raise PromptError(f"{self.kind.value} template needs {{problem}} and {{trajectory}}")


def default_templates() -> dict[PromptKind, PromptTemplate]:
    return {k: PromptTemplate(k, body) for k, body in DEFAULT_BODIES.items()}


def load_templates(directory: str | Path | None) -> dict[PromptKind, PromptTemplate]:
    """Defaults, overridden by ``<kind>.txt`` files found in ``directory``."""
    templates = default_templates()
    if directory is None:
        return templates
    for kind, name in TEMPLATE_FILES.items():
        path = Path(directory) / name
        if path.exists():
            templates[kind] = PromptTemplate(kind, path.read_text(encoding="utf-8"))
    return templates


def join_steps(steps: Sequence[str], start: int = 0) -> str:
    return STEP_SEPARATOR.join(f"Step {start + i}: {s}" for i, s in enumerate(steps))


def split_steps(generation: str) -> list[str]:
    """Split text on ``Step <k>:`` markers; markerless text is a single step."""
    parts = _STEP_MARKER.split(generation)
    head, rest = parts[0], parts[1:]
    steps = [p.strip() for p in rest]
    if head.strip():
        steps.insert(0, head.strip())
    return steps


def step_stop_sequences(max_marker: int = 100) -> list[str]:
    return [f"Step {k}:" for k in range(1, max_marker + 1)]


def _assistant_text(kind: PromptKind, trajectory: Sequence[str]) -> str:
    text = join_steps(trajectory)
    if kind in (PromptKind.REASON, PromptKind.FINISH):
        return text + f"{STEP_SEPARATOR}Step {len(trajectory)}:"
    if kind is PromptKind.REFLECT:
        return text + f"{STEP_SEPARATOR}Step {len(trajectory)}: {REFLECT_PREAMBLE}"
    return text


def render_parts(
    kind: PromptKind | str,
    problem: ProblemInstance,
    trajectory: Sequence[str],
    few_shot: str = "",
    templates: Mapping[PromptKind, PromptTemplate] | None = None,
) -> tuple[str, str]:
    """Return ``(user_text, assistant_prefix)`` for one prompt."""
    try:
        kind = PromptKind(kind)
    except ValueError:
        raise PromptError(f"unknown prompt kind {kind!r}") from None
    if not trajectory:
        raise PromptError("trajectory must start with the root step")
    template = (templates or _DEFAULTS)[kind]
    shot = f"Reasoning Example:\n{few_shot.strip()}\n\n" if few_shot.strip() and kind is not PromptKind.FORCED else ""
    user, _, after = template.body.partition("{trajectory}")
    # single pass so placeholder-like text inside the problem is left alone
    fill = {"{few_shot}": shot, "{problem}": problem.question_text()}
    user = re.sub(r"\{few_shot\}|\{problem\}", lambda m: fill[m.group(0)], user)
    return user, _assistant_text(kind, trajectory) + after


def render(
    kind: PromptKind | str,
    problem: ProblemInstance,
    trajectory: Sequence[str],
    few_shot: str = "",
    templates: Mapping[PromptKind, PromptTemplate] | None = None,
) -> str:
    user, assistant = render_parts(kind, problem, trajectory, few_shot, templates)
    return user + assistant


def root_trajectory() -> list[str]:
    return [ROOT_STEP]


_DEFAULTS = default_templates()
