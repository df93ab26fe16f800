from __future__ import annotations

from pathlib import Path

import pytest

from treevolve.problem import ProblemInstance, TaskKind, load_seed_file

REPO = Path(__file__).resolve().parent.parent
SEED_FILE = REPO / "fixtures" / "seed_mock.jsonl"


def mc_problem(pid: str = "mc-1", gold: str = "C", n_options: int = 5) -> ProblemInstance:
    options = tuple(f"option {i}" for i in range(n_options))
    return ProblemInstance(
        id=pid,
        prompt="Which finding is most likely?",
        gold_answer=gold,
        task_kind=TaskKind.MULTIPLE_CHOICE,
        options=options,
    )


def ce_problem(pid: str = "ce-1", gold: str = "radiation after surgery") -> ProblemInstance:
    return ProblemInstance(id=pid, prompt="What is the recommended approach?", gold_answer=gold)


@pytest.fixture
def mc() -> ProblemInstance:
    return mc_problem()


@pytest.fixture
def ce() -> ProblemInstance:
    return ce_problem()


@pytest.fixture
def seed_problems() -> list[ProblemInstance]:
    return load_seed_file(SEED_FILE)
