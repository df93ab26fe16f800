from treevolve.backend.base import (
    DEFAULT_MAX_NEW_TOKENS,
    BackendConfigError,
    BackendError,
    BackendUnavailable,
    EmptyGeneration,
    GenerationRequest,
    Generator,
    ScoreRequest,
    Scorer,
    derive_seed,
    truncate_at_stop,
)
from treevolve.backend.mock import MockGenerator, MockScorer, MockScript

__all__ = [
    "DEFAULT_MAX_NEW_TOKENS",
    "BackendConfigError",
    "BackendError",
    "BackendUnavailable",
    "EmptyGeneration",
    "GenerationRequest",
    "Generator",
    "MockGenerator",
    "MockScorer",
    "MockScript",
    "ScoreRequest",
    "Scorer",
    "derive_seed",
    "truncate_at_stop",
]
