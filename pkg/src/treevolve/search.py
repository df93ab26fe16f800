"""MCTS loop: select, expand (Reason / Reflect / fast-path Finish), roll out,
backpropagate, terminate."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

from treevolve.backend.base import (
    BackendError,
    EmptyGeneration,
    GenerationRequest,
    Generator,
    derive_seed,
)
from treevolve.problem import ProblemInstance
from treevolve.prompts import (
    ANSWER_MARKER,
    REFLECT_PREAMBLE,
    PromptKind,
    PromptTemplate,
    render_parts,
    step_stop_sequences,
)
from treevolve.tree import (
    NodeKind,
    RolloutRecord,
    SearchConfig,
    SearchTree,
    TreeError,
    TreeExhausted,
    TreeNode,
    record_event,
    select_path,
)
from treevolve.verifier import build_forced_continuation, extract_answer, judge, verify

log = logging.getLogger(__name__)


class ActionKind(str, Enum):
    REASON = "reason"
    REFLECT = "reflect"
    FINISH_FAST = "finish_fast"


@dataclass(frozen=True)
class ExpansionAction:
    kind: ActionKind
    samples: int = 1


@dataclass(frozen=True)
class Decision:
    stop: bool
    reason: str | None = None


@dataclass
class SearchContext:
    gen: Generator
    config: SearchConfig
    templates: Mapping[PromptKind, PromptTemplate] | None = None
    few_shot: str = ""


def choose_action(
    node: TreeNode, config: SearchConfig, tree: SearchTree | None = None
) -> ExpansionAction:
    if node.kind is NodeKind.FINISH:
        raise TreeError("Finish nodes are not expandable")
    if node.value >= config.fast_path_threshold:
        return ExpansionAction(ActionKind.FINISH_FAST, 1)
    wrong = node.kind is not NodeKind.ROOT and node.visits > 0 and node.value == 0.0
    has_reflect = tree is not None and any(
        tree[c].kind is NodeKind.REFLECT for c in node.children
    )
    if wrong and not has_reflect:
        return ExpansionAction(ActionKind.REFLECT, 1)
    return ExpansionAction(ActionKind.REASON, config.branch_factor)


def rollout_budget(depth: int, config: SearchConfig) -> int:
    if depth < 1:
        raise ValueError("rollouts start at depth 1")
    return max(config.rollout_floor, -(-config.rollout_base // depth))


def _request(
    tree: SearchTree, node_id: int, purpose: str, ctx: SearchContext, kind: PromptKind, **kw
) -> GenerationRequest:
    path = tree.child_path(node_id)
    user, assistant = render_parts(
        kind, tree.problem, tree.steps_to(node_id), ctx.few_shot, ctx.templates
    )
    prompt = kw.pop("prompt", None)
    return GenerationRequest(
        prompt=prompt if prompt is not None else user + assistant,
        temperature=ctx.config.temperature,
        top_p=ctx.config.top_p,
        tag=f"{tree.problem.id}|{purpose}|{path}",
        seed=derive_seed(ctx.config.seed, tree.problem.id, purpose, path),
        assistant_start=len(user),
        **kw,
    )


def expand(
    tree: SearchTree, node_id: int, action: ExpansionAction, ctx: SearchContext
) -> list[int]:
    """Sample children for ``node_id``; returns the new node ids in order."""
    node = tree[node_id]
    if node.kind is NodeKind.FINISH:
        raise TreeError("Finish nodes are not expandable")
    cfg = ctx.config
    tree.expansion_trials += 1
    if action.kind is ActionKind.REASON:
        req = _request(
            tree, node_id, "reason", ctx, PromptKind.REASON,
            n=action.samples,
            stop=tuple(step_stop_sequences(cfg.max_step_marker)),
            max_new_tokens=cfg.max_new_tokens,
        )
        texts = [t.strip() for t in ctx.gen.generate(req)]
        texts = [t for t in texts if t]
        if not texts:
            raise EmptyGeneration(f"node {node_id}: backend returned only whitespace")
        new = []
        for text in texts:
            kind = NodeKind.FINISH if extract_answer(text) is not None else NodeKind.REASON
            new.append(tree.add_child(node_id, kind, text).id)
        return new
    if action.kind is ActionKind.REFLECT:
        req = _request(
            tree, node_id, "reflect", ctx, PromptKind.REFLECT,
            stop=tuple(step_stop_sequences(cfg.max_step_marker)),
            max_new_tokens=cfg.max_new_tokens,
        )
        text = ctx.gen.generate(req)[0].strip()
        if not text:
            raise EmptyGeneration(f"node {node_id}: empty reflection")
        return [tree.add_child(node_id, NodeKind.REFLECT, f"{REFLECT_PREAMBLE} {text}").id]
    req = _request(
        tree, node_id, "finish", ctx, PromptKind.FINISH, max_new_tokens=cfg.max_new_tokens
    )
    text = ctx.gen.generate(req)[0].strip()
    if not text:
        raise EmptyGeneration(f"node {node_id}: empty completion")
    return [tree.add_child(node_id, NodeKind.FINISH, text).id]


def rollout(tree: SearchTree, node_id: int, ctx: SearchContext) -> RolloutRecord:
    """Simulate forced answers from ``node_id`` and set its value to the accuracy."""
    node = tree[node_id]
    if node.kind in (NodeKind.FINISH, NodeKind.ROOT):
        raise TreeError(f"cannot roll out a {node.kind.value} node")
    if node.rollout is not None:
        raise TreeError(f"node {node_id} already rolled out")
    budget = rollout_budget(tree.depth(node_id), ctx.config)
    user, assistant = render_parts(
        PromptKind.ANS, tree.problem, tree.steps_to(node_id), ctx.few_shot, ctx.templates
    )
    forced = build_forced_continuation(user + assistant, tree.problem)
    req = _request(
        tree, node_id, "rollout", ctx, PromptKind.ANS,
        prompt=forced.prompt,
        n=budget,
        max_new_tokens=forced.max_new_tokens,
        allowed_first_tokens=forced.allowed_first_tokens,
    )
    completions = ctx.gen.generate(req)
    if len(completions) != budget:
        raise BackendError(f"expected {budget} simulations, got {len(completions)}")
    answers: list[str | None] = []
    correct = 0
    for text in completions:
        extracted = extract_answer(f"{ANSWER_MARKER} {text}")
        answers.append(extracted)
        correct += verify(extracted, tree.problem).correct
    record = RolloutRecord(budget=budget, simulated_answers=answers, correct_count=correct)
    node.rollout = record
    node.value = record.accuracy
    return record


def verify_finish(tree: SearchTree, node_id: int) -> int:
    node = tree[node_id]
    if node.kind is not NodeKind.FINISH:
        raise TreeError(f"node {node_id} is not a Finish node")
    node.value = 1.0 if judge(node.step_text, tree.problem).correct else 0.0
    tree.correct_leaf_count = tree.count_correct_leaves()
    return int(node.value)


def should_terminate(tree: SearchTree, config: SearchConfig) -> Decision:
    if tree.correct_leaf_count >= config.min_correct:
        return Decision(True, "correct")
    if tree.expansion_trials >= config.max_expansion_trials:
        return Decision(True, "exhausted")
    return Decision(False)


def _finish_leaf(tree: SearchTree, leaf_id: int, ctx: SearchContext) -> None:
    leaf = tree[leaf_id]
    if leaf.kind is not NodeKind.ROOT and leaf.rollout is None:
        rollout(tree, leaf_id, ctx)
        record_event(tree, leaf_id, "rollout")
    try:
        (child,) = expand(tree, leaf_id, ExpansionAction(ActionKind.FINISH_FAST), ctx)
    except EmptyGeneration:
        log.warning("%s: empty forced finish at node %d", tree.problem.id, leaf_id)
        child = tree.add_child(leaf_id, NodeKind.FINISH, "").id
    verify_finish(tree, child)
    record_event(tree, child, "verify")


def force_finish(tree: SearchTree, ctx: SearchContext) -> None:
    """Give every non-Finish leaf a Finish child (exhaustion path)."""
    for leaf in tree.leaves():
        if leaf.kind is not NodeKind.FINISH:
            _finish_leaf(tree, leaf.id, ctx)


def run_search(
    problem: ProblemInstance,
    gen: Generator,
    config: SearchConfig,
    *,
    templates: Mapping[PromptKind, PromptTemplate] | None = None,
    few_shot: str = "",
    config_hash: str = "",
    iteration: int = 1,
) -> SearchTree:
    ctx = SearchContext(gen=gen, config=config, templates=templates, few_shot=few_shot)
    tree = SearchTree.new(problem, config_hash=config_hash, iteration=iteration)
    while True:
        decision = should_terminate(tree, config)
        if decision.stop:
            if decision.reason == "exhausted":
                force_finish(tree, ctx)
            tree.termination = decision.reason or ""
            return tree
        try:
            path = select_path(tree, config)
        except TreeExhausted:
            tree.termination = "exhausted"
            return tree
        target = tree[path[-1]]
        if target.kind is not NodeKind.ROOT and target.rollout is None:
            rollout(tree, target.id, ctx)
            record_event(tree, target.id, "rollout")
            continue
        try:
            new_ids = expand(tree, target.id, choose_action(target, config, tree), ctx)
        except EmptyGeneration as exc:
            log.debug("%s: %s", problem.id, exc)
            continue
        for child_id in new_ids:
            if tree[child_id].kind is NodeKind.FINISH:
                verify_finish(tree, child_id)
                record_event(tree, child_id, "verify")


@dataclass
class SearchOutcome:
    problem: ProblemInstance
    tree: SearchTree | None
    error: str | None = None


def run_batch(
    problems: Sequence[ProblemInstance],
    gen: Generator,
    config: SearchConfig,
    parallel: int = 1,
    **kwargs,
) -> list[SearchOutcome]:
    """Search every problem; a failing tree is reported, not raised."""

    def one(problem: ProblemInstance) -> SearchOutcome:
        try:
            return SearchOutcome(problem, run_search(problem, gen, config, **kwargs))
        except (BackendError, TreeError) as exc:
            log.error("search for %s aborted: %s", problem.id, exc)
            return SearchOutcome(problem, None, f"{type(exc).__name__}: {exc}")

    if parallel <= 1:
        return [one(p) for p in problems]
    with ThreadPoolExecutor(max_workers=parallel) as pool:
        return list(pool.map(one, problems))
