"""Evolve, extract, and summarize one iteration on the bundled mock fixture.

Usage: python3 scripts/run_mock_evolution.py [--out runs/mock] [--seed 7]
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

from treevolve.config import load_config
from treevolve.pipeline import cmd_evolve, cmd_extract, cmd_stats, cmd_validate

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", type=Path, default=REPO / "fixtures" / "mock_run.yaml")
    ap.add_argument("--out", type=Path, default=Path("runs/mock"))
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args()

    run = load_config(args.config)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    run = dataclasses.replace(
        run, output_dir=str(args.out), seed_file=str(REPO / "fixtures" / "seed_mock.jsonl")
    )
    result = cmd_evolve(run)
    print("evolve:", json.dumps(result.manifest["counts"]))

    data_dir = args.out / "data"
    summary = cmd_extract(result.trees_dir, data_dir, run.label, run.min_dpo_gap)
    print("extract:", json.dumps(summary["records"]))

    for kind in ("sft", "dpo", "prm"):
        errors = cmd_validate(kind, sorted(data_dir.glob(f"{kind}*.jsonl")))
        print(f"validate {kind}: {'ok' if not errors else errors[:3]}")

    stats = cmd_stats([result.trees_dir])
    print("stats:", json.dumps(stats, indent=2))


if __name__ == "__main__":
    main()
