"""Training-corpus extraction from finished trees and the curriculum sampler."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from treevolve.backend.base import Generator
from treevolve.decoder import DecodeConfig, sample_candidates
from treevolve.labeler import LabelConfig, ValuedTrajectory, label_trajectory
from treevolve.prompts import join_steps
from treevolve.problem import ProblemInstance
from treevolve.tree import NodeKind, SearchTree


@dataclass(frozen=True)
class SftRecord:
    problem_id: str
    prompt: str
    response: str
    iteration: int = 1

    def to_record(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DpoRecord:
    """Full chosen text is ``prefix + "\\n\\n" + chosen`` (same for rejected)."""

    problem_id: str
    prompt: str
    prefix: str
    chosen: str
    rejected: str
    gap: float
    parent_id: int = -1
    chosen_id: int = -1
    rejected_id: int = -1
    iteration: int = 1

    def to_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "prompt": self.prompt,
            "prefix": self.prefix,
            "chosen": self.chosen,
            "rejected": self.rejected,
            "gap": self.gap,
            "iteration": self.iteration,
        }


@dataclass(frozen=True)
class PrmRecord:
    problem_id: str
    prompt: str
    steps: tuple[str, ...]
    labels: tuple[int, ...]
    scheme: str
    iteration: int = 1

    def to_record(self) -> dict:
        return {
            "problem_id": self.problem_id,
            "prompt": self.prompt,
            "steps": list(self.steps),
            "labels": list(self.labels),
            "scheme": self.scheme,
            "iteration": self.iteration,
        }


@dataclass(frozen=True)
class AccuracyProfile:
    problem_id: str
    samples: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.samples


def extract_sft(tree: SearchTree) -> list[SftRecord]:
    prompt = tree.problem.question_text()
    return [
        SftRecord(tree.problem.id, prompt, join_steps(tree.steps_to(leaf.id)), tree.iteration)
        for leaf in tree.finish_leaves()
        if leaf.value == 1.0
    ]


def extract_dpo(tree: SearchTree, min_gap: float = 0.0) -> list[DpoRecord]:
    """All ordered sibling pairs whose value gap exceeds ``max(0, min_gap)``.

    Only visited siblings take part: an unvisited node's value is a
    placeholder, not evidence.
    """
    threshold = max(0.0, min_gap)
    prompt = tree.problem.question_text()
    records: list[DpoRecord] = []
    seen: set[tuple[int, int, int]] = set()
    for parent in tree.iter_nodes():
        if parent.kind is NodeKind.FINISH or len(parent.children) < 2:
            continue
        if any(tree[i].kind is NodeKind.FINISH for i in tree.path_to(parent.id)):
            continue
        prefix_steps = tree.steps_to(parent.id)
        prefix = join_steps(prefix_steps)
        k = len(prefix_steps)
        kids = [tree[c] for c in parent.children if tree[c].visits > 0]
        for i, a in enumerate(kids):
            for b in kids[i + 1:]:
                hi, lo = (a, b) if a.value >= b.value else (b, a)
                gap = hi.value - lo.value
                if gap <= threshold:
                    continue
                key = (parent.id, hi.id, lo.id)
                if key in seen:
                    continue
                seen.add(key)
                records.append(
                    DpoRecord(
                        problem_id=tree.problem.id,
                        prompt=prompt,
                        prefix=prefix,
                        chosen=f"Step {k}: {hi.step_text}",
                        rejected=f"Step {k}: {lo.step_text}",
                        gap=gap,
                        parent_id=parent.id,
                        chosen_id=hi.id,
                        rejected_id=lo.id,
                        iteration=tree.iteration,
                    )
                )
    return records


def is_mixed_outcome(tree: SearchTree) -> bool:
    values = {leaf.value for leaf in tree.finish_leaves()}
    return 1.0 in values and any(v != 1.0 for v in values)


def valued_trajectory(tree: SearchTree, leaf_id: int) -> ValuedTrajectory:
    path = tree.path_to(leaf_id)
    steps = tuple((tree[i].step_text, tree[i].value) for i in path[1:])
    return ValuedTrajectory(
        problem_id=tree.problem.id,
        steps=steps,
        terminal_correct=tree[leaf_id].value == 1.0,
        root_value=tree[path[0]].value,
    )


def extract_prm(tree: SearchTree, cfg: LabelConfig = LabelConfig()) -> list[PrmRecord]:
    """One record per Finish leaf, only for trees with both outcomes.

    ``steps`` are s1..sl; the root step s0 is implied and shared by all records.
    """
    if not is_mixed_outcome(tree):
        return []
    prompt = tree.problem.question_text()
    records = []
    for leaf in tree.finish_leaves():
        traj = valued_trajectory(tree, leaf.id)
        labels = label_trajectory(traj, cfg)
        records.append(
            PrmRecord(
                problem_id=tree.problem.id,
                prompt=prompt,
                steps=tuple(text for text, _ in traj.steps),
                labels=tuple(labels),
                scheme=cfg.scheme.value,
                iteration=tree.iteration,
            )
        )
    return records


def profile_accuracy(
    problems: Sequence[ProblemInstance],
    gen: Generator,
    samples: int,
    seed: int = 0,
    parallel: int = 1,
) -> list[AccuracyProfile]:
    """Rejection-sampling pass: direct CoT samples per problem, verified."""
    if samples < 1:
        raise ValueError("samples must be >= 1")
    cfg = DecodeConfig(n=samples, seed=seed)

    def one(problem: ProblemInstance) -> AccuracyProfile:
        cands = sample_candidates(problem, gen, cfg, purpose="cot")
        return AccuracyProfile(problem.id, samples, sum(c.correct for c in cands))

    if parallel <= 1:
        return [one(p) for p in problems]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, problems))


def curriculum_sample(profiles: Iterable[AccuracyProfile], k: int) -> list[str]:
    """Lowest-accuracy problems first, never-solved ones capped at ``k // 3``.

    Always-solved problems are dropped. Returns ids in selection order.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    pool = sorted(
        (p for p in profiles if p.accuracy < 1.0), key=lambda p: (p.accuracy, p.problem_id)
    )
    cap = k // 3
    zeros = [p for p in pool if p.accuracy == 0.0][:cap]
    nonzero = [p for p in pool if p.accuracy > 0.0]
    chosen = (zeros + nonzero)[:k]
    return [p.problem_id for p in chosen]
