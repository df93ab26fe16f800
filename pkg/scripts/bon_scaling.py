"""Best-of-N accuracy versus N, compared with self-consistency, on the mock backend.

Candidates for a problem are nested across N (candidate i does not depend on N),
so the curve isolates the effect of the selection rule.

The mock draws a quality per candidate and the scripted PRM reads it back, so
higher-quality samples are both more often correct and scored higher.

Usage: python3 scripts/bon_scaling.py [--max-n 32] [--seed 3]
"""

from __future__ import annotations

import argparse
from pathlib import Path

from treevolve.backend import MockGenerator, MockScorer, MockScript
from treevolve.decoder import (
    DecodeConfig,
    NoAnswer,
    best_of_n,
    sample_candidates,
    score_candidate,
    self_consistency,
)
from treevolve.problem import load_seed_file
from treevolve.verifier import verify

REPO = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed-file", type=Path, default=REPO / "fixtures" / "seed_mock.jsonl")
    ap.add_argument("--max-n", type=int, default=32)
    ap.add_argument("--seed", type=int, default=3)
    args = ap.parse_args()

    problems = load_seed_file(args.seed_file)
    gen = MockGenerator(problems, MockScript(seed=args.seed))
    scorer = MockScorer()
    ladder = [n for n in (1, 2, 4, 8, 16, 32, 64, 128) if n <= args.max_n]

    bon = {n: 0 for n in ladder}
    sc = {n: 0 for n in ladder}
    for p in problems:
        cands = sample_candidates(p, gen, DecodeConfig(n=ladder[-1]))
        cands = [score_candidate(c, scorer, p) for c in cands]
        for n in ladder:
            bon[n] += verify(best_of_n(cands[:n]).extracted_answer, p).correct
            try:
                sc[n] += verify(self_consistency(cands[:n], p.task_kind), p).correct
            except NoAnswer:
                pass

    print(f"{'N':>4}  {'BoN':>6}  {'SC':>6}")
    for n in ladder:
        print(f"{n:>4}  {bon[n] / len(problems):6.2f}  {sc[n] / len(problems):6.2f}")


if __name__ == "__main__":
    main()
