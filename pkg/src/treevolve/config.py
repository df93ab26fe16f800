"""Run configuration: nested dataclasses loaded from YAML or JSON."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import typing
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import yaml

from treevolve.backend.base import BackendConfigError
from treevolve.backend.http import HttpBackend, HttpConfig
from treevolve.backend.mock import MockGenerator, MockScorer, MockScript
from treevolve.decoder import DecodeConfig
from treevolve.labeler import LabelConfig
from treevolve.problem import ProblemInstance
from treevolve.tree import SearchConfig

# excluded from the config hash: secrets, not behaviour
_UNHASHED = {"api_key"}


class ConfigError(ValueError):
    pass


@dataclass
class MockConfig:
    seed: int = 0
    correct_prob: float | None = None
    finish_prob: float = 0.25
    table: dict[str, float] = field(default_factory=dict)
    scorer_default: float = 0.5


@dataclass
class BackendSettings:
    kind: str = "mock"
    http: HttpConfig = field(default_factory=HttpConfig)
    mock: MockConfig = field(default_factory=MockConfig)


@dataclass
class CurriculumConfig:
    enabled: bool = True
    samples: int = 8
    k: int | None = None


@dataclass
class RunConfig:
    seed_file: str = ""
    output_dir: str = "runs/latest"
    iteration: int = 1
    parallel: int = 1
    prompts_dir: str | None = None
    few_shot_file: str | None = None
    min_dpo_gap: float = 0.0
    search: SearchConfig = field(default_factory=SearchConfig)
    label: LabelConfig = field(default_factory=LabelConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    backend: BackendSettings = field(default_factory=BackendSettings)

    def __post_init__(self) -> None:
        if self.iteration < 1:
            raise ConfigError("iteration must be >= 1")
        if self.parallel < 1:
            raise ConfigError("parallel must be >= 1")

    @property
    def seed(self) -> int:
        return self.search.seed

    def with_seed(self, seed: int) -> "RunConfig":
        return dataclasses.replace(
            self,
            search=dataclasses.replace(self.search, seed=seed),
            decode=dataclasses.replace(self.decode, seed=seed),
        )

    def few_shot(self) -> str:
        if not self.few_shot_file:
            return ""
        return Path(self.few_shot_file).read_text(encoding="utf-8")


def _build(cls: type, data: Any, where: str) -> Any:
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{where}.{key}")
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data: dict[str, Any]) -> RunConfig:
    return _build(RunConfig, data or {}, "config")


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path, encoding="utf-8") as fh:
        data = yaml.safe_load(fh)
    return config_from_dict(data or {})


def _plain(obj: Any) -> Any:
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items() if k not in _UNHASHED}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def config_to_dict(cfg: RunConfig) -> dict[str, Any]:
    return _plain(asdict(cfg))


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def build_backend(settings: BackendSettings, problems: list[ProblemInstance] = ()):
    """Return ``(generator, scorer)`` for the configured backend kind."""
    if settings.kind == "mock":
        m = settings.mock
        script = MockScript(
            seed=m.seed, correct_prob=m.correct_prob, finish_prob=m.finish_prob, table=m.table
        )
        return MockGenerator(problems, script), MockScorer(default=m.scorer_default)
    if settings.kind == "http":
        backend = HttpBackend(settings.http)
        return backend, backend
    raise BackendConfigError(f"unknown backend kind {settings.kind!r}")
