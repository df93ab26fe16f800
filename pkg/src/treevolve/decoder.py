"""Inference-time strategies: CoT, self-consistency, PRM best-of-N, PRM vote-sum."""

from __future__ import annotations

import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

from treevolve.backend.base import (
    DEFAULT_MAX_NEW_TOKENS,
    GenerationRequest,
    Generator,
    ScoreRequest,
    Scorer,
    derive_seed,
)
from treevolve.problem import ProblemInstance, TaskKind
from treevolve.prompts import (
    ANSWER_MARKER,
    PromptKind,
    PromptTemplate,
    join_steps,
    render_parts,
    split_steps,
)
from treevolve.tree import ROOT_STEP
from treevolve.verifier import build_forced_continuation, extract_answer, normalize_answer, verify

DEFAULT_BON_N = 32
METHODS = ("cot", "sc", "bon", "pvs")
REFLECTIVE_TOKENS = ("wait", "reevaluate", "recheck", "however", "but")
_REFLECTIVE = re.compile(r"\b(?:" + "|".join(REFLECTIVE_TOKENS) + r")\b", re.IGNORECASE)


class NoAnswer(ValueError):
    """No candidate yielded an extractable answer."""


@dataclass
class DecodeConfig:
    method: str = "bon"
    n: int = DEFAULT_BON_N
    temperature: float = 1.0
    top_p: float = 0.9
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    force_answer: bool = True
    seed: int = 0
    parallel: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass
class Candidate:
    index: int
    text: str
    steps: list[str]
    extracted_answer: str | None = None
    step_scores: list[float] | None = None
    aggregate: float | None = None
    correct: bool | None = None


@dataclass
class DecodeResult:
    problem_id: str
    method: str
    n: int
    answer: str | None
    correct: bool
    latency_s: float
    chosen_index: int | None = None
    candidates: list[Candidate] = field(default_factory=list, repr=False)

    def to_record(self, iteration: int = 1) -> dict:
        return {
            "problem_id": self.problem_id,
            "method": self.method,
            "n": self.n,
            "answer": self.answer,
            "correct": self.correct,
            "latency_s": round(self.latency_s, 6),
            "iteration": iteration,
        }


@dataclass(frozen=True)
class ReflectiveStats:
    ratio: float
    correct: int
    reflective: int

    @property
    def empty(self) -> bool:
        return self.correct == 0


def _map(fn, items, parallel: int):
    if parallel <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(fn, items))


def _forced_answer(
    problem: ProblemInstance, gen: Generator, steps: list[str], index: int, cfg: DecodeConfig
) -> str | None:
    user, assistant = render_parts(PromptKind.FORCED, problem, [ROOT_STEP, *steps])
    forced = build_forced_continuation(user + assistant, problem)
    req = GenerationRequest(
        prompt=forced.prompt,
        n=1,
        temperature=0.0,
        max_new_tokens=forced.max_new_tokens,
        allowed_first_tokens=forced.allowed_first_tokens,
        tag=f"{problem.id}|force|{index}",
        seed=derive_seed(cfg.seed, problem.id, "force", index),
        assistant_start=len(user),
    )
    return extract_answer(f"{ANSWER_MARKER} {gen.generate(req)[0]}")


def sample_candidates(
    problem: ProblemInstance,
    gen: Generator,
    cfg: DecodeConfig,
    purpose: str = "cot",
    templates: Mapping[PromptKind, PromptTemplate] | None = None,
    few_shot: str = "",
) -> list[Candidate]:
    """Draw ``cfg.n`` full responses and settle each one's answer."""
    greedy = cfg.method == "cot"
    n = 1 if greedy else cfg.n
    user, assistant = render_parts(PromptKind.FINISH, problem, [ROOT_STEP], few_shot, templates)
    req = GenerationRequest(
        prompt=user + assistant,
        n=n,
        temperature=0.0 if greedy else cfg.temperature,
        top_p=1.0 if greedy else cfg.top_p,
        max_new_tokens=cfg.max_new_tokens,
        tag=f"{problem.id}|{purpose}|",
        seed=derive_seed(cfg.seed, problem.id, purpose),
        assistant_start=len(user),
    )
    texts = gen.generate(req)

    def settle(item: tuple[int, str]) -> Candidate:
        i, text = item
        # the prompt already opened "Step 1:"
        steps = split_steps("Step 1:" + text)
        if cfg.force_answer:
            answer = _forced_answer(problem, gen, steps, i, cfg)
        else:
            answer = extract_answer(text)
        return Candidate(i, text, steps, answer, correct=verify(answer, problem).correct)

    return _map(settle, list(enumerate(texts)), cfg.parallel)


def score_candidate(c: Candidate, scorer: Scorer, problem: ProblemInstance) -> Candidate:
    """Score every cumulative step prefix; the aggregate is the minimum."""
    if not c.steps:
        raise ValueError(f"candidate {c.index} has no steps")
    prompt = problem.question_text()
    reqs = [
        ScoreRequest(prompt, join_steps([ROOT_STEP, *c.steps[:k]]), k)
        for k in range(1, len(c.steps) + 1)
    ]
    scores = [float(s) for s in scorer.score_steps(reqs)]
    if len(scores) != len(reqs):
        raise ValueError("scorer returned the wrong number of scores")
    return replace(c, step_scores=scores, aggregate=min(scores))


def _aggregate(c: Candidate) -> float:
    if c.aggregate is not None:
        return c.aggregate
    if c.step_scores:
        return min(c.step_scores)
    raise ValueError(f"candidate {c.index} is not scored")


def best_of_n(
    candidates: Sequence[Candidate],
    scorer: Scorer | None = None,
    problem: ProblemInstance | None = None,
) -> Candidate:
    """Highest min-step score; ties go to the lowest index."""
    if not candidates:
        raise ValueError("best_of_n needs at least one candidate")
    if scorer is not None:
        if problem is None:
            raise ValueError("scoring needs the problem")
        candidates = [c if c.aggregate is not None else score_candidate(c, scorer, problem) for c in candidates]
    best = None
    for c in sorted(candidates, key=lambda c: c.index):
        if best is None or _aggregate(c) > _aggregate(best):
            best = c
    return best


def _groups(candidates: Sequence[Candidate], task_kind) -> dict[str, list[Candidate]]:
    groups: dict[str, list[Candidate]] = {}
    for c in sorted(candidates, key=lambda c: c.index):
        if c.extracted_answer is None or not c.extracted_answer.strip():
            continue
        groups.setdefault(normalize_answer(c.extracted_answer, task_kind), []).append(c)
    if not groups:
        raise NoAnswer("no candidate has an extractable answer")
    return groups


def self_consistency(
    candidates: Sequence[Candidate], task_kind: TaskKind | str | None = None
) -> str:
    """Most frequent normalized answer; ties go to the earliest first occurrence."""
    groups = _groups(candidates, task_kind)
    # dicts keep insertion order, i.e. first occurrence
    return max(groups, key=lambda a: len(groups[a]))


def vote_sum(candidates: Sequence[Candidate], task_kind: TaskKind | str | None = None) -> str:
    """Answer whose candidates have the largest summed aggregate score."""
    groups = _groups(candidates, task_kind)
    return max(groups, key=lambda a: sum(_aggregate(c) for c in groups[a]))


def has_reflective_token(text: str) -> bool:
    return _REFLECTIVE.search(text) is not None


def reflective_ratio(responses: Sequence[tuple[str, bool]]) -> ReflectiveStats:
    """Share of correct responses containing at least one reflective token."""
    correct = [text for text, ok in responses if ok]
    hits = sum(1 for text in correct if has_reflective_token(text))
    return ReflectiveStats(hits / len(correct) if correct else 0.0, len(correct), hits)


def decode_problem(
    problem: ProblemInstance,
    gen: Generator,
    cfg: DecodeConfig,
    scorer: Scorer | None = None,
    templates: Mapping[PromptKind, PromptTemplate] | None = None,
    few_shot: str = "",
) -> DecodeResult:
    if cfg.method in ("bon", "pvs") and scorer is None:
        raise ValueError(f"method {cfg.method} needs a scorer")
    start = time.perf_counter()
    cands = sample_candidates(problem, gen, cfg, templates=templates, few_shot=few_shot)
    chosen_index = None
    answer: str | None
    try:
        if cfg.method == "cot":
            answer = cands[0].extracted_answer
            chosen_index = 0
        elif cfg.method == "sc":
            answer = self_consistency(cands, problem.task_kind)
        else:
            cands = _map(lambda c: score_candidate(c, scorer, problem), cands, cfg.parallel)
            if cfg.method == "bon":
                chosen = best_of_n(cands)
                answer, chosen_index = chosen.extracted_answer, chosen.index
            else:
                answer = vote_sum(cands, problem.task_kind)
    except NoAnswer:
        answer = None
    return DecodeResult(
        problem_id=problem.id,
        method=cfg.method,
        n=len(cands),
        answer=answer,
        correct=verify(answer, problem).correct,
        latency_s=time.perf_counter() - start,
        chosen_index=chosen_index,
        candidates=cands,
    )
