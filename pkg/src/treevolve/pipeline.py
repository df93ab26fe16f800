"""Batch commands: evolve, extract, decode, stats, validate."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

from treevolve.backend.base import Generator, Scorer
from treevolve.config import RunConfig, build_backend, config_hash
from treevolve.decoder import DecodeConfig, decode_problem, reflective_ratio
from treevolve.forge import (
    curriculum_sample,
    extract_dpo,
    extract_prm,
    extract_sft,
    is_mixed_outcome,
    profile_accuracy,
)
from treevolve.io import read_jsonl, safe_name, write_json, write_jsonl
from treevolve.labeler import LabelConfig
from treevolve.problem import ProblemInstance, load_seed_file
from treevolve.prompts import join_steps, load_templates
from treevolve.schemas import BY_NAME, SchemaViolation, validate
from treevolve.search import run_batch
from treevolve.tree import SearchTree, deserialize_tree, serialize_tree

log = logging.getLogger(__name__)

SHORT_BELOW = 256
LONG_ABOVE = 512


@dataclass
class EvolveResult:
    trees_dir: Path
    manifest: dict[str, Any]
    trees: list[SearchTree] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        counts = self.manifest["counts"]
        return not (counts["trees"] == 0 and counts["failed"] > 0)


def cmd_evolve(
    run: RunConfig,
    gen: Generator | None = None,
    problems: Sequence[ProblemInstance] | None = None,
) -> EvolveResult:
    """Profile, curriculum-select, then search every selected problem."""
    start = time.perf_counter()
    if problems is None:
        problems = load_seed_file(run.seed_file)
    if not problems:
        raise ValueError("no seed problems")
    if gen is None:
        gen, _ = build_backend(run.backend, list(problems))
    chash = config_hash(run)
    templates = load_templates(run.prompts_dir)
    few_shot = run.few_shot()

    profiles = []
    selected = list(problems)
    if run.curriculum.enabled:
        profiles = profile_accuracy(
            problems, gen, run.curriculum.samples, seed=run.seed, parallel=run.parallel
        )
        ids = curriculum_sample(profiles, run.curriculum.k or len(problems))
        by_id = {p.id: p for p in problems}
        selected = [by_id[i] for i in ids]

    outcomes = run_batch(
        selected,
        gen,
        run.search,
        parallel=run.parallel,
        templates=templates,
        few_shot=few_shot,
        config_hash=chash,
        iteration=run.iteration,
    )
    out = Path(run.output_dir)
    trees_dir = out / "trees"
    trees_dir.mkdir(parents=True, exist_ok=True)
    trees = []
    failed = []
    for outcome in outcomes:
        if outcome.tree is None:
            failed.append({"id": outcome.problem.id, "error": outcome.error})
            continue
        trees.append(outcome.tree)
        path = trees_dir / f"{safe_name(outcome.problem.id)}.json"
        write_json(path, serialize_tree(outcome.tree))
    manifest = {
        "config_hash": chash,
        "seed": run.seed,
        "iteration": run.iteration,
        "counts": {
            "problems": len(problems),
            "profiled": len(profiles),
            "selected": len(selected),
            "trees": len(trees),
            "failed": len(failed),
            "correct_trees": sum(1 for t in trees if t.correct_leaf_count > 0),
        },
        "selected": [p.id for p in selected],
        "profiles": [
            {"id": p.problem_id, "samples": p.samples, "correct": p.correct} for p in profiles
        ],
        "failed": failed,
        "wall_time_s": round(time.perf_counter() - start, 3),
    }
    write_json(out / "manifest.json", manifest)
    return EvolveResult(trees_dir, manifest, trees)


def load_trees(trees_dir: str | Path) -> tuple[list[SearchTree], list[str]]:
    """Load every ``*.json`` dump in name order; corrupt ones are skipped."""
    trees, corrupt = [], []
    for path in sorted(Path(trees_dir).glob("*.json")):
        try:
            with open(path, encoding="utf-8") as fh:
                trees.append(deserialize_tree(json.load(fh)))
        except (OSError, json.JSONDecodeError, SchemaViolation) as exc:
            log.warning("skipping corrupt tree dump %s: %s", path, exc)
            corrupt.append(path.name)
    return trees, corrupt


def cmd_extract(
    trees_dir: str | Path,
    out_dir: str | Path,
    label: LabelConfig = LabelConfig(),
    min_gap: float = 0.0,
) -> dict[str, Any]:
    trees, corrupt = load_trees(trees_dir)
    sft, dpo, prm = [], [], []
    all_correct = all_incorrect = no_finish = 0
    for tree in trees:
        leaves = tree.finish_leaves()
        if not leaves:
            no_finish += 1
        elif all(leaf.value == 1.0 for leaf in leaves):
            all_correct += 1
        elif not is_mixed_outcome(tree):
            all_incorrect += 1
        sft.extend(r.to_record() for r in extract_sft(tree))
        dpo.extend(r.to_record() for r in extract_dpo(tree, min_gap))
        prm.extend(r.to_record() for r in extract_prm(tree, label))
    out = Path(out_dir)
    write_jsonl(out / "sft.jsonl", sft)
    write_jsonl(out / "dpo.jsonl", dpo)
    write_jsonl(out / "prm.jsonl", prm)
    filtered = all_correct + all_incorrect + no_finish
    summary = {
        "trees": len(trees),
        "corrupt": corrupt,
        "records": {"sft": len(sft), "dpo": len(dpo), "prm": len(prm)},
        "prm_filter": {
            "all_correct_trees": all_correct,
            "all_incorrect_trees": all_incorrect,
            "no_finish_trees": no_finish,
            "single_outcome_filtered": filtered,
        },
        "label": {"scheme": label.scheme.value, "beta": label.beta},
        "iterations": sorted({t.iteration for t in trees}),
    }
    if trees and filtered == len(trees):
        summary["note"] = (
            "every tree has only correct or only incorrect Finish leaves; "
            "PRM corpus is empty by design"
        )
    write_json(out / "summary.json", summary)
    return summary


def cmd_decode(
    problems: Sequence[ProblemInstance],
    cfg: DecodeConfig,
    gen: Generator,
    scorer: Scorer | None = None,
    out_dir: str | Path | None = None,
    iteration: int = 1,
    templates=None,
    few_shot: str = "",
) -> dict[str, Any]:
    results = [
        decode_problem(p, gen, cfg, scorer, templates=templates, few_shot=few_shot)
        for p in problems
    ]
    rows = [r.to_record(iteration) for r in results]
    accuracy = sum(r.correct for r in results) / len(results) if results else 0.0
    reflective = reflective_ratio(
        [(c.text, bool(c.correct)) for r in results for c in r.candidates]
    )
    summary = {
        "method": cfg.method,
        "n": 1 if cfg.method == "cot" else cfg.n,
        "problems": len(results),
        "accuracy": accuracy,
        "reflective_ratio": None if reflective.empty else reflective.ratio,
        "iteration": iteration,
    }
    if out_dir is not None:
        out = Path(out_dir)
        write_jsonl(out / "report.jsonl", rows)
        write_json(out / "report_summary.json", summary)
    return {"summary": summary, "rows": rows, "results": results}


# -- stats -------------------------------------------------------------------


def word_length(text: str) -> int:
    return len(text.split())


def length_buckets(lengths: Iterable[int], short_below=SHORT_BELOW, long_above=LONG_ABOVE):
    buckets = {"short": 0, "mid": 0, "long": 0}
    for n in lengths:
        if n < short_below:
            buckets["short"] += 1
        elif n > long_above:
            buckets["long"] += 1
        else:
            buckets["mid"] += 1
    return buckets


def _trajectories(paths: Sequence[str | Path]) -> list[tuple[str, bool | None]]:
    """(text, correct) pairs from tree directories and corpus files."""
    out: list[tuple[str, bool | None]] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            trees, _ = load_trees(path)
            for tree in trees:
                for leaf in tree.finish_leaves():
                    out.append((join_steps(tree.steps_to(leaf.id)), leaf.value == 1.0))
            continue
        for rec in read_jsonl(path):
            if "response" in rec:
                out.append((rec["response"], True))
            elif "steps" in rec:
                out.append((join_steps(rec["steps"], start=1), None))
    return out


def _group_stats(lengths: list[int]) -> dict[str, Any] | None:
    if not lengths:
        return None
    return {
        "count": len(lengths),
        "mean_length": sum(lengths) / len(lengths),
        "buckets": length_buckets(lengths),
    }


def cmd_stats(paths: Sequence[str | Path], out_path: str | Path | None = None) -> dict[str, Any]:
    items = _trajectories(paths)
    lengths = [word_length(t) for t, _ in items]
    correct = [word_length(t) for t, ok in items if ok is True]
    incorrect = [word_length(t) for t, ok in items if ok is False]
    reflective = reflective_ratio([(t, ok is True) for t, ok in items])
    report = {
        "count": len(items),
        "length_unit": "whitespace words",
        "boundaries": {"short_below": SHORT_BELOW, "long_above": LONG_ABOVE},
        "buckets": length_buckets(lengths),
        "correct": _group_stats(correct),
        "incorrect": _group_stats(incorrect),
        "reflective": {
            "ratio": None if reflective.empty else reflective.ratio,
            "correct": reflective.correct,
            "reflective": reflective.reflective,
        },
    }
    if out_path is not None:
        write_json(out_path, report)
    return report


def cmd_validate(kind: str, paths: Sequence[str | Path]) -> list[str]:
    """Check files against a named schema; returns violation messages."""
    schema = BY_NAME[kind]
    problems: list[str] = []
    for raw in paths:
        path = Path(raw)
        try:
            if path.suffix == ".jsonl":
                records = list(read_jsonl(path))
            else:
                with open(path, encoding="utf-8") as fh:
                    records = [json.load(fh)]
        except (OSError, json.JSONDecodeError) as exc:
            problems.append(f"{path}: {exc}")
            continue
        for i, rec in enumerate(records):
            try:
                if kind == "tree":
                    deserialize_tree(rec)
                else:
                    validate(rec, schema)
            except SchemaViolation as exc:
                problems.append(f"{path}:{i + 1}: {exc}")
    return problems
