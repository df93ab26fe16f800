"""Command line entry point: ``treevolve {evolve,extract,decode,stats,validate}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from treevolve.config import ConfigError, build_backend, load_config
from treevolve.decoder import METHODS
from treevolve.pipeline import cmd_decode, cmd_evolve, cmd_extract, cmd_stats, cmd_validate
from treevolve.problem import SeedFileError, load_seed_file
from treevolve.prompts import load_templates
from treevolve.schemas import BY_NAME


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML or JSON run config")
    p.add_argument("--seed", type=int, help="global seed (search and sampling)")
    p.add_argument("--parallel", type=_positive, help="problems processed concurrently")
    p.add_argument("--backend", choices=["http", "mock"], help="override backend kind")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="treevolve", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evolve", help="curriculum-sample seeds and run tree search")
    _common(p)
    p.add_argument("--seed-file", type=Path)
    p.add_argument("--output", type=Path, help="run directory")
    p.add_argument("--iteration", type=int, choices=[1, 2])
    p.add_argument("--no-curriculum", action="store_true")

    p = sub.add_parser("extract", help="build SFT / DPO / PRM corpora from tree dumps")
    p.add_argument("trees", type=Path)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--config", type=Path)
    p.add_argument("--beta", type=float)
    p.add_argument("--scheme", choices=["soft_dual", "hard_single", "hard_dual"])
    p.add_argument("--min-gap", type=float)

    p = sub.add_parser("decode", help="evaluate a decoding strategy on a problem file")
    _common(p)
    p.add_argument("problems", type=Path)
    p.add_argument("--method", choices=METHODS, default=None)
    p.add_argument("--n", type=_positive)
    p.add_argument("--output", type=Path)

    p = sub.add_parser("stats", help="length buckets and reflective-token ratios")
    p.add_argument("inputs", nargs="+", type=Path)
    p.add_argument("--output", type=Path)

    p = sub.add_parser("validate", help="schema-check files; nonzero exit on violations")
    p.add_argument("kind", choices=sorted(BY_NAME))
    p.add_argument("files", nargs="+", type=Path)
    return parser


def _run_config(args):
    run = load_config(args.config)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    if args.parallel is not None:
        run = dataclasses.replace(run, parallel=args.parallel)
    if args.backend is not None:
        run = dataclasses.replace(
            run, backend=dataclasses.replace(run.backend, kind=args.backend)
        )
    return run


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _dispatch(args)
    except (ConfigError, SeedFileError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def _dispatch(args) -> int:
    if args.command == "evolve":
        run = _run_config(args)
        changes = {}
        if args.seed_file is not None:
            changes["seed_file"] = str(args.seed_file)
        if args.output is not None:
            changes["output_dir"] = str(args.output)
        if args.iteration is not None:
            changes["iteration"] = args.iteration
        if args.no_curriculum:
            changes["curriculum"] = dataclasses.replace(run.curriculum, enabled=False)
        run = dataclasses.replace(run, **changes)
        if not run.seed_file:
            raise ConfigError("no seed file given (--seed-file or seed_file in config)")
        problems = load_seed_file(run.seed_file)
        result = cmd_evolve(run, problems=problems)
        print(json.dumps(result.manifest["counts"]))
        return 0 if result.ok else 1

    if args.command == "extract":
        run = load_config(args.config)
        label = run.label
        if args.beta is not None or args.scheme is not None:
            label = dataclasses.replace(
                label,
                beta=label.beta if args.beta is None else args.beta,
                scheme=label.scheme if args.scheme is None else args.scheme,
            )
        min_gap = run.min_dpo_gap if args.min_gap is None else args.min_gap
        summary = cmd_extract(args.trees, args.output, label, min_gap)
        print(json.dumps(summary["records"]))
        return 0

    if args.command == "decode":
        run = _run_config(args)
        decode = run.decode
        if args.method is not None:
            decode = dataclasses.replace(decode, method=args.method)
        if args.n is not None:
            decode = dataclasses.replace(decode, n=args.n)
        problems = load_seed_file(args.problems)
        gen, scorer = build_backend(run.backend, problems)
        report = cmd_decode(
            problems,
            decode,
            gen,
            scorer,
            out_dir=args.output,
            iteration=run.iteration,
            templates=load_templates(run.prompts_dir),
            few_shot=run.few_shot(),
        )
        print(json.dumps(report["summary"]))
        return 0

    if args.command == "stats":
        report = cmd_stats(args.inputs, args.output)
        print(json.dumps(report, indent=2))
        return 0

    if args.command == "validate":
        violations = cmd_validate(args.kind, args.files)
        for v in violations:
            print(v, file=sys.stderr)
        return 1 if violations else 0
    raise AssertionError(args.command)


if __name__ == "__main__":
    sys.exit(main())
