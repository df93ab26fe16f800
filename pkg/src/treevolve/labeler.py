"""Per-step PRM targets derived from search-tree values.

``soft_dual`` penalizes a step whose value dropped below its predecessor's by
the drop seen across it (previous minus next value), so a step that merely
hands off to a recovering reflection stays positive while a step that drags
the trajectory down is marked negative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

# ceil() of a difference that is zero in exact arithmetic but a few ulps
# above zero in floating point would otherwise flip a label to 1
_SNAP = 1e-9


class Scheme(str, Enum):
    SOFT_DUAL = "soft_dual"
    HARD_SINGLE = "hard_single"
    HARD_DUAL = "hard_dual"


@dataclass(frozen=True)
class LabelConfig:
    beta: float = 1.0
    scheme: Scheme = Scheme.SOFT_DUAL

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass(frozen=True)
class ValuedTrajectory:
    """Steps s1..sl of one root-to-Finish path with their tree values."""

    problem_id: str
    steps: tuple[tuple[str, float], ...]
    terminal_correct: bool
    root_value: float = 0.0

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("trajectory has no steps")


def _clamp01(x: int) -> int:
    return min(1, max(0, x))


def soft_dual_label(v_prev: float, v: float, v_next: float, beta: float) -> int:
    if v < v_prev:
        penalty = beta * max(0.0, v_prev - v_next)
        adjusted = v - penalty
        if penalty and abs(adjusted) <= _SNAP:
            adjusted = 0.0
        return _clamp01(math.ceil(adjusted))
    return _clamp01(math.ceil(v))


def hard_single_label(v: float) -> int:
    return 1 if v > 0 else 0


def hard_dual_label(v_prev: float, v: float) -> int:
    return 1 if v > 0 and v >= v_prev else 0


def label_values(
    values: Sequence[float], root_value: float, cfg: LabelConfig = LabelConfig()
) -> list[int]:
    """Labels for a value sequence; the root stands in before the first step
    and the last step stands in for its own successor."""
    labels = []
    n = len(values)
    for i, v in enumerate(values):
        v_prev = values[i - 1] if i > 0 else root_value
        v_next = values[i + 1] if i + 1 < n else v
        if cfg.scheme is Scheme.SOFT_DUAL:
            labels.append(soft_dual_label(v_prev, v, v_next, cfg.beta))
        elif cfg.scheme is Scheme.HARD_SINGLE:
            labels.append(hard_single_label(v))
        else:
            labels.append(hard_dual_label(v_prev, v))
    return labels


def label_trajectory(t: ValuedTrajectory, cfg: LabelConfig = LabelConfig()) -> list[int]:
    return label_values([v for _, v in t.steps], t.root_value, cfg)
