"""Generator / Scorer interfaces and request types."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol, Sequence, runtime_checkable

DEFAULT_MAX_NEW_TOKENS = 8192


class BackendError(RuntimeError):
    pass


class BackendUnavailable(BackendError):
    """Raised once the retry budget for a request is spent."""


class BackendConfigError(BackendError):
    pass


class EmptyGeneration(BackendError):
    pass


@dataclass(frozen=True)
class GenerationRequest:
    prompt: str
    n: int = 1
    temperature: float = 1.0
    top_p: float = 1.0
    stop: tuple[str, ...] = ()
    max_new_tokens: int = DEFAULT_MAX_NEW_TOKENS
    allowed_first_tokens: frozenset[str] | None = None
    tag: str = ""
    seed: int | None = None
    # offset where the assistant prefix starts; lets the HTTP adapter wrap a chat template
    assistant_start: int | None = None

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError("n must be >= 1")
        object.__setattr__(self, "stop", tuple(self.stop))


@dataclass(frozen=True)
class ScoreRequest:
    prompt: str
    prefix: str
    step_index: int = 0


@runtime_checkable
class Generator(Protocol):
    def generate(self, req: GenerationRequest) -> list[str]: ...


@runtime_checkable
class Scorer(Protocol):
    def score_steps(self, reqs: Sequence[ScoreRequest]) -> list[float]: ...


def truncate_at_stop(text: str, stop: Sequence[str]) -> str:
    """Cut ``text`` before the earliest stop sequence (stop text excluded)."""
    cut = len(text)
    for s in stop:
        if s:
            i = text.find(s)
            if i != -1 and i < cut:
                cut = i
    return text[:cut]


def derive_seed(*parts: object) -> int:
    """Stable 63-bit seed from arbitrary parts (process-independent, unlike hash())."""
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


@dataclass
class CallLog:
    """Counts calls per request tag purpose; handy for tests and manifests."""

    calls: dict[str, int] = field(default_factory=dict)

    def bump(self, key: str, by: int = 1) -> None:
        self.calls[key] = self.calls.get(key, 0) + by
