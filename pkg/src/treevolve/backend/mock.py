"""Deterministic scripted backend for tests and desk-scale runs.

Every output is a pure function of (script seed, request content, sample
index), so results do not depend on arrival order or thread scheduling.
Generated steps carry a ``[q=0.xxx]`` tag holding their scripted quality:
the probability that an answer simulated from that step is correct. Rollouts
and forced answers read the last tag in the prompt, which keeps the verifier
and the mock consistent end to end.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from treevolve.backend.base import (
    CallLog,
    GenerationRequest,
    ScoreRequest,
    derive_seed,
    truncate_at_stop,
)
from treevolve.problem import ProblemInstance
from treevolve.prompts import ANSWER_MARKER, split_steps
from treevolve.verifier import extract_answer

_Q_TAG = re.compile(r"\[q=([0-9]*\.?[0-9]+)\]")

_CLUES = (
    "the presenting symptoms",
    "the patient's history",
    "the laboratory findings",
    "the imaging results",
    "the most likely mechanism",
    "the differential diagnosis",
    "the first-line management",
    "the contraindications",
)


@dataclass
class MockScript:
    """Scripted behaviour of a MockGenerator.

    ``correct_prob`` fixes every step's quality; None draws it per step.
    ``table`` overrides quality for specific nodes, keyed ``"<problem>:<path>"``
    where path is the dotted child-index path of the generated node (for
    decoding samples, ``"cot.<i>"``).
    """

    seed: int = 0
    correct_prob: float | None = None
    finish_prob: float = 0.25
    table: Mapping[str, float] = field(default_factory=dict)
    canned_steps: Sequence[str] = ()
    cot_steps: tuple[int, int] = (2, 4)


def _unit(*parts: object) -> float:
    return derive_seed(*parts) / 2**63


def _last_quality(text: str) -> float | None:
    tags = _Q_TAG.findall(text)
    return float(tags[-1]) if tags else None


class MockGenerator:
    def __init__(self, problems: Iterable[ProblemInstance] = (), script: MockScript | None = None):
        self.problems = {p.id: p for p in problems}
        self.script = script or MockScript()
        self.log = CallLog()
        self.requests: list[GenerationRequest] = []
        self._lock = threading.Lock()

    # -- helpers ------------------------------------------------------------

    def _u(self, req: GenerationRequest, *parts: object) -> float:
        return _unit(self.script.seed, req.seed, req.tag, req.prompt, *parts)

    def _quality(self, req: GenerationRequest, key: str | None, i: int) -> float:
        s = self.script
        if key is not None and key in s.table:
            return float(s.table[key])
        if s.correct_prob is not None:
            return s.correct_prob
        return round(self._u(req, i, "q"), 3)

    def _context_quality(self, req: GenerationRequest) -> float:
        q = _last_quality(req.prompt)
        if q is not None:
            return q
        return self.script.correct_prob if self.script.correct_prob is not None else 0.5

    def _answer(self, problem: ProblemInstance | None, correct: bool, req, i) -> str:
        if problem is None:
            return "A"
        if problem.is_multiple_choice:
            if correct:
                return problem.gold_answer.strip()[0].upper()
            wrong = [c for c in problem.option_letters if c != problem.gold_answer.strip()[0].upper()]
            return wrong[int(self._u(req, i, "wrong") * len(wrong))] if wrong else "Z"
        return problem.gold_answer if correct else "unknown"

    # -- per-purpose outputs -------------------------------------------------

    def _reason(self, req, problem, pid, path, i) -> str:
        if self.script.canned_steps:
            return self.script.canned_steps[i % len(self.script.canned_steps)]
        child = f"{path}.{i}" if path else str(i)
        q = self._quality(req, f"{pid}:{child}", i)
        clue = _CLUES[int(self._u(req, i, "clue") * len(_CLUES))]
        if self._u(req, i, "fin") < self.script.finish_prob:
            ans = self._answer(problem, self._u(req, i, "ans") < q, req, i)
            return f" Weighing {clue} settles it [q={q:.3f}]. {ANSWER_MARKER} {ans}."
        return f" Consider {clue} (variant {int(self._u(req, i, 'v') * 1000)}) [q={q:.3f}]."

    def _reflect(self, req, problem, pid, path, i) -> str:
        child = f"{path}.{i}" if path else str(i)
        q = self._quality(req, f"{pid}:{child}", i)
        return f" Re-examining the evidence from another angle [q={q:.3f}]."

    def _finish(self, req, problem, i) -> str:
        q = self._context_quality(req)
        ans = self._answer(problem, self._u(req, i, "ans") < q, req, i)
        return f" Putting the findings together [q={q:.3f}]. {ANSWER_MARKER} {ans}."

    def _rollout(self, req, problem, i) -> str:
        q = self._context_quality(req)
        return " " + self._answer(problem, self._u(req, i, "ans") < q, req, i)

    def _cot(self, req, problem, pid, i) -> str:
        q = self._quality(req, f"{pid}:cot.{i}", i)
        lo, hi = self.script.cot_steps
        n_steps = lo + int(self._u(req, i, "len") * (hi - lo + 1))
        parts = []
        for k in range(n_steps - 1):
            clue = _CLUES[int(self._u(req, i, k, "clue") * len(_CLUES))]
            parts.append(f"Consider {clue} [q={q:.3f}].")
        ans = self._answer(problem, self._u(req, i, "ans") < q, req, i)
        parts.append(f"Putting it together [q={q:.3f}]. {ANSWER_MARKER} {ans}.")
        return " " + "\n\n".join(f"Step {k + 1}: {p}" if k else p for k, p in enumerate(parts))

    def _force(self, req, problem, i) -> str:
        head = req.prompt[: -len(ANSWER_MARKER)] if req.prompt.endswith(ANSWER_MARKER) else req.prompt
        previous = extract_answer(head)
        if previous:
            return " " + previous
        return " " + self._answer(problem, False, req, i)

    # -- public --------------------------------------------------------------

    def generate(self, req: GenerationRequest) -> list[str]:
        pid, purpose, path = (req.tag.rsplit("|", 2) + ["", ""])[:3] if "|" in req.tag else ("", "", "")
        problem = self.problems.get(pid)
        with self._lock:
            self.log.bump(purpose or "untagged")
            self.requests.append(req)
        out = []
        for i in range(req.n):
            if purpose == "reason":
                text = self._reason(req, problem, pid, path, i)
            elif purpose == "reflect":
                text = self._reflect(req, problem, pid, path, i)
            elif purpose == "finish":
                text = self._finish(req, problem, i)
            elif purpose == "rollout":
                text = self._rollout(req, problem, i)
            elif purpose == "cot":
                text = self._cot(req, problem, pid, i)
            elif purpose == "force":
                text = self._force(req, problem, i)
            elif self.script.canned_steps:
                text = self.script.canned_steps[i % len(self.script.canned_steps)]
            else:
                text = f" mock completion {i}"
            if req.allowed_first_tokens:
                text = self._constrain_first(req, text, i)
            out.append(truncate_at_stop(text, req.stop))
        return out

    def _constrain_first(self, req: GenerationRequest, text: str, i: int) -> str:
        allowed = sorted(req.allowed_first_tokens or ())
        body = text.lstrip()
        first = body.split(maxsplit=1)[0] if body else ""
        if first[:1] in allowed:
            return text
        pick = allowed[int(self._u(req, i, "first") * len(allowed))]
        return " " + pick + ("" if not body else " " + body)


class MockScorer:
    """Scripted PRM: scores the last step of each prefix.

    Lookup order: ``fn(request)`` if given, then the first ``table`` key that
    occurs in the last step, then the step's ``[q=...]`` tag, then ``default``.
    """

    def __init__(
        self,
        table: Mapping[str, float] | None = None,
        default: float = 0.5,
        fn: Callable[[ScoreRequest], float] | None = None,
    ):
        self.table = dict(table or {})
        self.default = default
        self.fn = fn
        self.calls = 0
        self._lock = threading.Lock()

    def _score(self, req: ScoreRequest) -> float:
        if self.fn is not None:
            return self.fn(req)
        steps = split_steps(req.prefix)
        last = steps[-1] if steps else ""
        for key, value in self.table.items():
            if key in last:
                return value
        q = _last_quality(last)
        return q if q is not None else self.default

    def score_steps(self, reqs: Sequence[ScoreRequest]) -> list[float]:
        with self._lock:
            self.calls += len(reqs)
        return [min(1.0, max(0.0, float(self._score(r)))) for r in reqs]
