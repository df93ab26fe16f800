"""Search tree: nodes, UCB selection, value backpropagation, serialization."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterator

from treevolve.problem import ProblemInstance
from treevolve.schemas import TREE, SchemaViolation, validate

ROOT_STEP = "Let's break down this problem step by step."

# sentinel UCB for unvisited children: they are always tried before visited siblings
UNVISITED_UCB = math.inf


class NodeKind(str, Enum):
    ROOT = "root"
    REASON = "reason"
    REFLECT = "reflect"
    FINISH = "finish"


class TreeError(RuntimeError):
    pass


class CorruptTree(TreeError):
    pass


class TreeExhausted(TreeError):
    """Every leaf is a Finish node; nothing left to select."""


@dataclass
class SearchConfig:
    gamma: float = 2.0
    branch_factor: int = 3
    fast_path_threshold: float = 0.9
    rollout_base: int = 15
    rollout_floor: int = 3
    min_correct: int = 3
    max_expansion_trials: int = 64
    temperature: float = 1.0
    top_p: float = 1.0
    max_new_tokens: int = 8192
    max_step_marker: int = 100
    seed: int = 0

    def __post_init__(self) -> None:
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.branch_factor < 1:
            raise ValueError("branch_factor must be >= 1")
        if not 0.0 <= self.fast_path_threshold <= 1.0:
            raise ValueError("fast_path_threshold must lie in [0, 1]")
        if self.rollout_base < 1 or self.rollout_floor < 1:
            raise ValueError("rollout budget parameters must be >= 1")
        if self.min_correct < 1 or self.max_expansion_trials < 1:
            raise ValueError("termination parameters must be >= 1")


@dataclass
class RolloutRecord:
    budget: int
    simulated_answers: list[str | None]
    correct_count: int

    def __post_init__(self) -> None:
        if self.budget < 1 or len(self.simulated_answers) != self.budget:
            raise ValueError("rollout needs exactly `budget` simulated answers")
        if not 0 <= self.correct_count <= self.budget:
            raise ValueError("correct_count out of range")

    @property
    def accuracy(self) -> float:
        return self.correct_count / self.budget


@dataclass
class TreeNode:
    id: int
    parent: int | None
    kind: NodeKind
    step_text: str
    value: float = 0.0
    visits: int = 0
    rollout: RolloutRecord | None = None
    children: list[int] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class Event:
    """A value-setting event: a rollout or a Finish verification at ``node``."""

    node: int
    kind: str
    value: float


@dataclass
class SearchTree:
    problem: ProblemInstance
    nodes: dict[int, TreeNode]
    root_id: int = 0
    correct_leaf_count: int = 0
    expansion_trials: int = 0
    events: list[Event] = field(default_factory=list)
    config_hash: str = ""
    iteration: int = 1
    termination: str = ""

    @classmethod
    def new(cls, problem: ProblemInstance, **kwargs: Any) -> "SearchTree":
        root = TreeNode(id=0, parent=None, kind=NodeKind.ROOT, step_text=ROOT_STEP)
        return cls(problem=problem, nodes={0: root}, root_id=0, **kwargs)

    @property
    def root(self) -> TreeNode:
        return self.nodes[self.root_id]

    def __getitem__(self, node_id: int) -> TreeNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise CorruptTree(f"node {node_id} missing") from None

    def add_child(self, parent_id: int, kind: NodeKind, step_text: str) -> TreeNode:
        parent = self[parent_id]
        if parent.kind is NodeKind.FINISH:
            raise TreeError("Finish nodes cannot have children")
        if kind is NodeKind.ROOT:
            raise TreeError("only one root per tree")
        if kind is NodeKind.REFLECT and any(
            self.nodes[c].kind is NodeKind.REFLECT for c in parent.children
        ):
            raise TreeError(f"node {parent_id} already has a Reflect child")
        node_id = max(self.nodes) + 1
        node = TreeNode(id=node_id, parent=parent_id, kind=kind, step_text=step_text)
        self.nodes[node_id] = node
        parent.children.append(node_id)
        return node

    def path_to(self, node_id: int) -> list[int]:
        """Node ids from the root down to ``node_id`` inclusive."""
        path = []
        cur: int | None = node_id
        seen = set()
        while cur is not None:
            if cur in seen:
                raise CorruptTree(f"cycle through node {cur}")
            seen.add(cur)
            path.append(cur)
            cur = self[cur].parent
        if path[-1] != self.root_id:
            raise CorruptTree(f"node {node_id} is not connected to the root")
        path.reverse()
        return path

    def depth(self, node_id: int) -> int:
        return len(self.path_to(node_id)) - 1

    def steps_to(self, node_id: int) -> list[str]:
        """Step texts s0..sk along the root-to-node path."""
        return [self.nodes[i].step_text for i in self.path_to(node_id)]

    def child_path(self, node_id: int) -> str:
        """Dotted child-index path, '' for the root (e.g. '0.2')."""
        ids = self.path_to(node_id)
        return ".".join(
            str(self.nodes[p].children.index(c)) for p, c in zip(ids, ids[1:])
        )

    def iter_nodes(self) -> Iterator[TreeNode]:
        for node_id in sorted(self.nodes):
            yield self.nodes[node_id]

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.iter_nodes() if n.is_leaf]

    def finish_leaves(self) -> list[TreeNode]:
        return [n for n in self.iter_nodes() if n.kind is NodeKind.FINISH]

    def count_correct_leaves(self) -> int:
        return sum(1 for n in self.finish_leaves() if n.value == 1.0)


def ucb_score(node: TreeNode, parent_visits: int, gamma: float) -> float:
    """Upper confidence bound of a child; unvisited children score +inf."""
    if node.visits == 0:
        return UNVISITED_UCB
    if parent_visits < 1:
        raise ValueError("parent of a visited node must have visits >= 1")
    return node.value + gamma * math.sqrt(math.log(parent_visits) / node.visits)


def _open_subtrees(tree: SearchTree) -> set[int]:
    """Ids of nodes whose subtree still contains a non-Finish leaf."""
    order = [tree.root_id]
    for node_id in order:
        order.extend(tree[node_id].children)
    open_ids: set[int] = set()
    for node_id in reversed(order):
        node = tree.nodes[node_id]
        if node.is_leaf:
            if node.kind is not NodeKind.FINISH:
                open_ids.add(node_id)
        elif any(c in open_ids for c in node.children):
            open_ids.add(node_id)
    return open_ids


def select_path(tree: SearchTree, config: SearchConfig) -> list[int]:
    """Descend from the root by UCB argmax to a non-Finish leaf.

    Fully finished subtrees are skipped. Ties go to the lowest child index.
    """
    open_ids = _open_subtrees(tree)
    if tree.root_id not in open_ids:
        raise TreeExhausted("every leaf is a Finish node")
    path = [tree.root_id]
    node = tree.root
    while node.children:
        best_id, best = None, -math.inf
        for child_id in node.children:
            if child_id not in open_ids:
                continue
            score = ucb_score(tree[child_id], node.visits, config.gamma)
            if score > best:
                best_id, best = child_id, score
        assert best_id is not None
        path.append(best_id)
        node = tree[best_id]
    return path


def backpropagate(tree: SearchTree, from_id: int) -> dict[int, tuple[float, int]]:
    """Count a visit at ``from_id`` and refresh every ancestor's value.

    The start node keeps the value its rollout or verification assigned.
    Each ancestor averages its own value with the visit-weighted mean of its
    visited children. Returns ``{node_id: (value, visits)}`` for changed nodes.
    """
    path = tree.path_to(from_id)
    changed: dict[int, tuple[float, int]] = {}
    start = tree[from_id]
    start.visits += 1
    changed[from_id] = (start.value, start.visits)
    for node_id in reversed(path[:-1]):
        node = tree[node_id]
        node.visits += 1
        weighted = 0.0
        total = 0
        for child_id in node.children:
            child = tree[child_id]
            if child.visits > 0:
                weighted += child.value * child.visits
                total += child.visits
        if total:
            node.value = 0.5 * (node.value + weighted / total)
        changed[node_id] = (node.value, node.visits)
    return changed


def record_event(tree: SearchTree, node_id: int, kind: str) -> dict[int, tuple[float, int]]:
    """Log the value-setting event at ``node_id`` and backpropagate it."""
    tree.events.append(Event(node=node_id, kind=kind, value=tree[node_id].value))
    return backpropagate(tree, node_id)


# -- serialization -----------------------------------------------------------


def _num(x: float) -> str:
    return format(x, ".17g")


def serialize_tree(tree: SearchTree) -> dict[str, Any]:
    nodes = []
    for node in tree.iter_nodes():
        rec: dict[str, Any] = {
            "id": node.id,
            "parent": node.parent,
            "kind": node.kind.value,
            "step_text": node.step_text,
            "value": _num(node.value),
            "visits": node.visits,
            "children": list(node.children),
        }
        if node.rollout is not None:
            r = node.rollout
            rec["rollout"] = {
                "budget": r.budget,
                "simulated_answers": list(r.simulated_answers),
                "correct_count": r.correct_count,
                "accuracy": _num(r.accuracy),
            }
        nodes.append(rec)
    return {
        "problem": tree.problem.to_record(),
        "config_hash": tree.config_hash,
        "iteration": tree.iteration,
        "root_id": tree.root_id,
        "correct_leaf_count": tree.correct_leaf_count,
        "expansion_trials": tree.expansion_trials,
        "termination": tree.termination,
        "nodes": nodes,
        "events": [
            {"node": e.node, "kind": e.kind, "value": _num(e.value)} for e in tree.events
        ],
    }


def deserialize_tree(record: dict[str, Any]) -> SearchTree:
    """Rebuild a tree from its record; raises SchemaViolation on bad input."""
    validate(record, TREE)
    try:
        problem = ProblemInstance.from_record(record["problem"])
    except ValueError as exc:
        raise SchemaViolation(str(exc), "$.problem") from exc
    nodes: dict[int, TreeNode] = {}
    for i, rec in enumerate(record["nodes"]):
        rollout = None
        if rec.get("rollout") is not None:
            r = rec["rollout"]
            try:
                rollout = RolloutRecord(
                    budget=r["budget"],
                    simulated_answers=list(r["simulated_answers"]),
                    correct_count=r["correct_count"],
                )
            except ValueError as exc:
                raise SchemaViolation(str(exc), f"$.nodes[{i}].rollout") from exc
        if rec["id"] in nodes:
            raise SchemaViolation(f"duplicate node id {rec['id']}", f"$.nodes[{i}].id")
        nodes[rec["id"]] = TreeNode(
            id=rec["id"],
            parent=rec["parent"],
            kind=NodeKind(rec["kind"]),
            step_text=rec["step_text"],
            value=float(rec["value"]),
            visits=rec["visits"],
            rollout=rollout,
            children=list(rec["children"]),
        )
    root_id = record["root_id"]
    if root_id not in nodes:
        raise SchemaViolation(f"root {root_id} not among nodes", "$.root_id")
    for i, node in enumerate(nodes.values()):
        where = f"$.nodes[{i}]"
        if (node.kind is NodeKind.ROOT) != (node.id == root_id):
            raise SchemaViolation("exactly the root node must have kind 'root'", where + ".kind")
        if node.kind is NodeKind.FINISH and node.children:
            raise SchemaViolation("Finish node with children", where + ".children")
        if node.id != root_id and (node.parent not in nodes or node.id not in nodes[node.parent].children):
            raise SchemaViolation("parent link broken", where + ".parent")
        for c in node.children:
            if c not in nodes or nodes[c].parent != node.id:
                raise SchemaViolation(f"child link to {c} broken", where + ".children")
    tree = SearchTree(
        problem=problem,
        nodes=nodes,
        root_id=root_id,
        correct_leaf_count=record.get("correct_leaf_count", 0),
        expansion_trials=record.get("expansion_trials", 0),
        events=[
            Event(node=e["node"], kind=e["kind"], value=float(e["value"]))
            for e in record.get("events", [])
        ],
        config_hash=record["config_hash"],
        iteration=record.get("iteration", 1),
        termination=record.get("termination", ""),
    )
    try:
        for node_id in nodes:
            tree.path_to(node_id)
    except CorruptTree as exc:
        raise SchemaViolation(str(exc), "$.nodes") from exc
    return tree
