"""Tree-search self-evolution engine for step-wise LLM reasoning.

Runs Monte-Carlo Tree Search against a pluggable generation backend,
labels steps for process-reward training, extracts SFT / DPO / PRM
corpora and decodes with PRM-guided strategies.
"""

from treevolve.problem import ProblemInstance, TaskKind
from treevolve.tree import NodeKind, SearchConfig, SearchTree, TreeNode

__all__ = [
    "NodeKind",
    "ProblemInstance",
    "SearchConfig",
    "SearchTree",
    "TaskKind",
    "TreeNode",
]

__version__ = "0.1.0"
