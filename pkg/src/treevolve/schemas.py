"""JSON schemas for every file the pipeline reads or writes."""

from __future__ import annotations

from typing import Any

import jsonschema

# values persisted as decimal text so float round-trips are bit-exact
_DECIMAL = {"type": "string", "pattern": r"^-?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?$"}

SEED = {
    "type": "object",
    "required": ["id", "prompt", "answer", "task_kind"],
    "properties": {
        "id": {"type": ["string", "integer"]},
        "prompt": {"type": "string"},
        "answer": {"type": "string", "minLength": 1},
        "task_kind": {"enum": ["multiple_choice", "close_ended"]},
        "options": {
            "anyOf": [
                {"type": "array", "items": {"type": "string"}},
                {"type": "object", "additionalProperties": {"type": "string"}},
                {"type": "null"},
            ]
        },
    },
}

_ROLLOUT = {
    "type": "object",
    "required": ["budget", "simulated_answers", "correct_count", "accuracy"],
    "properties": {
        "budget": {"type": "integer", "minimum": 1},
        "simulated_answers": {"type": "array", "items": {"type": ["string", "null"]}},
        "correct_count": {"type": "integer", "minimum": 0},
        "accuracy": _DECIMAL,
    },
}

_NODE = {
    "type": "object",
    "required": ["id", "parent", "kind", "step_text", "value", "visits", "children"],
    "properties": {
        "id": {"type": "integer", "minimum": 0},
        "parent": {"type": ["integer", "null"]},
        "kind": {"enum": ["root", "reason", "reflect", "finish"]},
        "step_text": {"type": "string"},
        "value": _DECIMAL,
        "visits": {"type": "integer", "minimum": 0},
        "rollout": {"anyOf": [_ROLLOUT, {"type": "null"}]},
        "children": {"type": "array", "items": {"type": "integer"}},
    },
}

TREE = {
    "type": "object",
    "required": ["problem", "config_hash", "root_id", "nodes"],
    "properties": {
        "problem": SEED,
        "config_hash": {"type": "string"},
        "iteration": {"type": "integer", "minimum": 1},
        "root_id": {"type": "integer"},
        "correct_leaf_count": {"type": "integer", "minimum": 0},
        "expansion_trials": {"type": "integer", "minimum": 0},
        "termination": {"enum": ["", "correct", "exhausted"]},
        "nodes": {"type": "array", "minItems": 1, "items": _NODE},
        "events": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["node", "kind", "value"],
                "properties": {
                    "node": {"type": "integer"},
                    "kind": {"enum": ["rollout", "verify"]},
                    "value": _DECIMAL,
                },
            },
        },
    },
}

SFT = {
    "type": "object",
    "required": ["problem_id", "prompt", "response"],
    "properties": {
        "problem_id": {"type": "string"},
        "prompt": {"type": "string"},
        "response": {"type": "string", "minLength": 1},
        "iteration": {"type": "integer"},
    },
}

DPO = {
    "type": "object",
    "required": ["problem_id", "prompt", "prefix", "chosen", "rejected", "gap"],
    "properties": {
        "problem_id": {"type": "string"},
        "prompt": {"type": "string"},
        "prefix": {"type": "string"},
        "chosen": {"type": "string"},
        "rejected": {"type": "string"},
        "gap": {"type": "number", "exclusiveMinimum": 0},
        "iteration": {"type": "integer"},
    },
}

PRM = {
    "type": "object",
    "required": ["problem_id", "prompt", "steps", "labels", "scheme"],
    "properties": {
        "problem_id": {"type": "string"},
        "prompt": {"type": "string"},
        "steps": {"type": "array", "minItems": 1, "items": {"type": "string"}},
        "labels": {"type": "array", "minItems": 1, "items": {"enum": [0, 1]}},
        "scheme": {"enum": ["soft_dual", "hard_single", "hard_dual"]},
        "iteration": {"type": "integer"},
    },
}

REPORT_ROW = {
    "type": "object",
    "required": ["problem_id", "method", "n", "answer", "correct", "latency_s"],
    "properties": {
        "problem_id": {"type": "string"},
        "method": {"enum": ["cot", "sc", "bon", "pvs"]},
        "n": {"type": "integer", "minimum": 1},
        "answer": {"type": ["string", "null"]},
        "correct": {"type": "boolean"},
        "latency_s": {"type": "number", "minimum": 0},
        "iteration": {"type": "integer"},
    },
}

MANIFEST = {
    "type": "object",
    "required": ["config_hash", "seed", "iteration", "counts", "wall_time_s"],
    "properties": {
        "config_hash": {"type": "string"},
        "seed": {"type": "integer"},
        "iteration": {"type": "integer"},
        "counts": {"type": "object"},
        "wall_time_s": {"type": "number"},
        "selected": {"type": "array", "items": {"type": "string"}},
        "failed": {"type": "array"},
    },
}

BY_NAME: dict[str, dict[str, Any]] = {
    "seed": SEED,
    "tree": TREE,
    "sft": SFT,
    "dpo": DPO,
    "prm": PRM,
    "report": REPORT_ROW,
    "manifest": MANIFEST,
}


class SchemaViolation(ValueError):
    """Raised when a record does not match its schema; ``path`` locates the field."""

    def __init__(self, message: str, path: str = "$"):
        super().__init__(f"{path}: {message}")
        self.path = path


def _format_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate(record: Any, schema: dict[str, Any]) -> None:
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(record), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        raise SchemaViolation(err.message, _format_path(err.absolute_path))
