"""Tree search over candidate agent responses with critic-guided refinement.

The tree grows one expansion at a time: a node is picked (UCT for MCTS,
deepest-frontier for DFS), the critic critiques its solution, the generator
produces a refined solution conditioned on that critique, and the critic
scores the refinement.  The score becomes the new child's reward and is
propagated back to the root.

Two callables drive the process and are deliberately duck-typed so that both
real model pipelines and scripted test doubles fit:

* ``generator.initial(problem) -> str`` and
  ``generator.refine(problem, solution, critique) -> str``
* ``critic.critique(problem, solution) -> str`` and
  ``critic.score(problem, solution) -> FeedbackResult``
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from .feedback import FeedbackResult

UCT_FORMS = ("standard_uct", "log_over_log")
Q_UPDATES = ("min_mean", "mean")
ALGORITHMS = ("mcts", "dfs")


class NoExpandableNodeError(Exception):
    """Every node is at max depth or has exhausted its expansion budget."""


@dataclass
class SearchConfig:
    """Knobs for one search run.

    ``uct_form`` selects between textbook UCT (``standard_uct``, the default)
    and ``log_over_log``, which divides log(parent visits) by log(child
    visits); the latter is undefined at one visit, so a ``+ 1 + epsilon``
    guard is applied inside the logarithm.  ``q_update`` picks the Q
    recomputation applied over the rewards reachable in a node's subtree.
    """

    algorithm: str = "mcts"
    max_iterations: int = 10
    exploration_weight: float = 1.0
    uct_form: str = "standard_uct"
    epsilon: float = 1e-6
    children_per_expansion: int = 1
    max_depth: int = 10
    q_update: str = "min_mean"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm: {self.algorithm!r}")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.exploration_weight < 0:
            raise ValueError("exploration_weight must be >= 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.children_per_expansion < 1:
            raise ValueError("children_per_expansion must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.uct_form not in UCT_FORMS:
            raise ValueError(f"unknown uct_form: {self.uct_form!r}")
        if self.q_update not in Q_UPDATES:
            raise ValueError(f"unknown q_update: {self.q_update!r}")

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "max_iterations": self.max_iterations,
            "exploration_weight": self.exploration_weight,
            "uct_form": self.uct_form,
            "epsilon": self.epsilon,
            "children_per_expansion": self.children_per_expansion,
            "max_depth": self.max_depth,
            "q_update": self.q_update,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SearchConfig":
        return cls(**raw)


@dataclass
class SearchNode:
    """One candidate response in the tree.

    ``rewards`` holds every scalar reward in [0, 1] attached to this node
    (one at expansion; rollout-style re-evaluations may append more).
    ``critique`` is the critic text that produced this node's refinement.
    """

    id: int
    parent: Optional[int]
    solution: str
    critique: Optional[str] = None
    rewards: list[float] = field(default_factory=list)
    visits: int = 0
    q_value: float = 0.0
    depth: int = 0
    parse_failed: bool = False
    verdict: Optional[dict] = None
    children: list[int] = field(default_factory=list)

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "solution": self.solution,
            "critique": self.critique,
            "rewards": self.rewards,
            "visits": self.visits,
            "q_value": self.q_value,
            "depth": self.depth,
            "parse_failed": self.parse_failed,
            "verdict": self.verdict,
        }


class SearchTree:
    """Id-indexed node store with exactly one root (id 0).

    A tree is mutated by one logical worker at a time; distinct trees may be
    searched fully in parallel.
    """

    def __init__(self, problem: str, config: SearchConfig, rng_seed: int = 0):
        self.problem = problem
        self.config = config
        self.rng_seed = rng_seed
        self.nodes: dict[int, SearchNode] = {}
        self.root = 0
        self.iteration_count = 0
        self.early_stop_node: Optional[int] = None
        self._next_id = 0

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[SearchNode]:
        for node_id in sorted(self.nodes):
            yield self.nodes[node_id]

    def add_node(
        self,
        solution: str,
        parent: Optional[int] = None,
        critique: Optional[str] = None,
        reward: Optional[float] = None,
        parse_failed: bool = False,
        verdict: Optional[dict] = None,
    ) -> SearchNode:
        if parent is None and self.nodes:
            raise ValueError("tree already has a root")
        if parent is not None and parent not in self.nodes:
            raise KeyError(f"unknown parent id {parent}")
        depth = 0 if parent is None else self.nodes[parent].depth + 1
        node = SearchNode(
            id=self._next_id,
            parent=parent,
            solution=solution,
            critique=critique,
            rewards=[] if reward is None else [float(reward)],
            depth=depth,
            parse_failed=parse_failed,
            verdict=verdict,
        )
        node.q_value = _q_from_rewards(node.rewards, self.config.q_update)
        self.nodes[node.id] = node
        if parent is not None:
            self.nodes[parent].children.append(node.id)
        self._next_id += 1
        return node

    def subtree_rewards(self, node_id: int) -> list[float]:
        """All rewards reachable in the subtree rooted at ``node_id``."""
        out: list[float] = []
        stack = [node_id]
        while stack:
            node = self.nodes[stack.pop()]
            out.extend(node.rewards)
            stack.extend(node.children)
        return out

    def path_to_root(self, node_id: int) -> list[int]:
        if node_id not in self.nodes:
            raise KeyError(f"unknown leaf id {node_id}")
        path = [node_id]
        while self.nodes[path[-1]].parent is not None:
            path.append(self.nodes[path[-1]].parent)
        return path

    def to_json(self) -> str:
        """Canonical JSON serialization; byte-identical for identical trees."""
        doc = {
            "problem": self.problem,
            "seed": self.rng_seed,
            "iteration_count": self.iteration_count,
            "early_stop_node": self.early_stop_node,
            "config": self.config.to_dict(),
            "nodes": [self.nodes[i].to_record() for i in sorted(self.nodes)],
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, blob: str) -> "SearchTree":
        doc = json.loads(blob)
        tree = cls(problem=doc["problem"], config=SearchConfig.from_dict(doc["config"]), rng_seed=doc["seed"])
        tree.iteration_count = doc["iteration_count"]
        tree.early_stop_node = doc.get("early_stop_node")
        for record in doc["nodes"]:
            node = SearchNode(
                id=record["id"],
                parent=record["parent"],
                solution=record["solution"],
                critique=record["critique"],
                rewards=list(record["rewards"]),
                visits=record["visits"],
                q_value=record["q_value"],
                depth=record["depth"],
                parse_failed=record.get("parse_failed", False),
                verdict=record.get("verdict"),
            )
            tree.nodes[node.id] = node
        for node in tree.nodes.values():
            if node.parent is not None:
                tree.nodes[node.parent].children.append(node.id)
        for node in tree.nodes.values():
            node.children.sort()
        tree._next_id = max(tree.nodes) + 1 if tree.nodes else 0
        return tree


def _q_from_rewards(rewards: list[float], strategy: str) -> float:
    if not rewards:
        return 0.0
    mean = sum(rewards) / len(rewards)
    if strategy == "mean":
        return mean
    return 0.5 * (min(rewards) + mean)


def uct_score(node: SearchNode, parent_visits: int, config: SearchConfig) -> float:
    """Exploration/exploitation score of a node under its parent.

    ``standard_uct``:  Q + w * sqrt(ln(parent_visits) / (visits + epsilon))
    ``log_over_log``:     Q + w * sqrt(log(parent_visits) / log(visits + 1 + epsilon))

    Never returns a non-finite value for parent_visits >= 1.
    """
    if parent_visits < 1:
        raise ValueError("parent_visits must be >= 1")
    if node.visits < 0:
        raise ValueError("node.visits must be >= 0")
    w = config.exploration_weight
    if w == 0:
        return node.q_value
    if config.uct_form == "log_over_log":
        exploration = math.sqrt(math.log(parent_visits) / math.log(node.visits + 1 + config.epsilon))
    else:
        exploration = math.sqrt(math.log(parent_visits) / (node.visits + config.epsilon))
    return node.q_value + w * exploration


def is_expandable(tree: SearchTree, node: SearchNode, config: SearchConfig) -> bool:
    """Whether a node may receive more children.

    Depth is the only limit for MCTS (a node may be refined repeatedly).
    DFS grants each node a single expansion, so a node with children is
    exhausted there.
    """
    if node.depth >= config.max_depth:
        return False
    if config.algorithm == "dfs" and node.children:
        return False
    return True


def select_frontier(tree: SearchTree, config: SearchConfig) -> int:
    """UCT-maximizing expandable node; ties broken by lowest node id."""
    if not tree.nodes:
        raise NoExpandableNodeError("tree is empty")
    best_id = None
    best_score = -math.inf
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        if not is_expandable(tree, node, config):
            continue
        parent_visits = tree.nodes[node.parent].visits if node.parent is not None else node.visits
        score = uct_score(node, max(1, parent_visits), config)
        if score > best_score:
            best_score = score
            best_id = node_id
    if best_id is None:
        raise NoExpandableNodeError("no expandable node")
    return best_id


def expand(tree: SearchTree, node_id: int, generator, critic, config: SearchConfig) -> list[int]:
    """Refine a node's solution into ``children_per_expansion`` new children.

    Each child records the critique that produced it and carries a single
    reward: the critic's normalized score of the refined solution.  A
    persistent score-parse failure yields reward 0 and a parse-failure flag
    (the reprompt policy lives in the critic).
    """
    if node_id not in tree.nodes:
        raise KeyError(f"unknown node id {node_id}")
    node = tree.nodes[node_id]
    if not is_expandable(tree, node, config):
        raise NoExpandableNodeError(f"node {node_id} is not expandable")
    new_ids = []
    for _ in range(config.children_per_expansion):
        critique = critic.critique(tree.problem, node.solution)
        refined = generator.refine(tree.problem, node.solution, critique)
        result: FeedbackResult = critic.score(tree.problem, refined)
        child = tree.add_node(
            solution=refined,
            parent=node_id,
            critique=critique,
            reward=result.reward,
            parse_failed=not result.parse_ok,
            verdict=result.verdict.to_dict() if result.verdict is not None else None,
        )
        new_ids.append(child.id)
    return new_ids


def backpropagate(tree: SearchTree, leaf_id: int, reward: float) -> None:
    """Update visit counts and Q-values on the path from a leaf to the root.

    ``reward`` is validated but not appended: rewards are attached to nodes
    at expansion (and by explicit rollout re-evaluations), and each node's
    Q-value is recomputed from the rewards reachable in its subtree.
    """
    if not 0.0 <= reward <= 1.0:
        raise ValueError(f"reward must be in [0, 1], got {reward}")
    for node_id in tree.path_to_root(leaf_id):
        node = tree.nodes[node_id]
        node.visits += 1
        node.q_value = _q_from_rewards(tree.subtree_rewards(node_id), tree.config.q_update)


def _seed_root(tree: SearchTree, problem: str, generator, critic) -> SearchNode:
    """Create and score the root: the agent's unrefined first answer."""
    solution = generator.initial(problem)
    result: FeedbackResult = critic.score(problem, solution)
    root = tree.add_node(
        solution=solution,
        parent=None,
        reward=result.reward,
        parse_failed=not result.parse_ok,
        verdict=result.verdict.to_dict() if result.verdict is not None else None,
    )
    root.visits = 1
    return root


def run_mcts(
    problem: str,
    generator,
    critic,
    config: SearchConfig,
    stop: Optional[Callable[[str], bool]] = None,
    seed: int = 0,
) -> SearchTree:
    """Full MCTS loop: seed the root, then select/expand/backpropagate.

    ``stop`` is the early-stopping rule (typically ground-truth answer
    verification); when it accepts a node's solution the search halts and
    that node is flagged on the tree.  Without a rule the loop always runs
    ``max_iterations`` iterations (or until nothing is expandable).
    """
    if config.algorithm != "mcts":
        raise ValueError("config.algorithm must be 'mcts'")
    tree = SearchTree(problem=problem, config=config, rng_seed=seed)
    root = _seed_root(tree, problem, generator, critic)
    if stop is not None and stop(root.solution):
        tree.early_stop_node = root.id
        return tree
    for iteration in range(1, config.max_iterations + 1):
        try:
            frontier_id = select_frontier(tree, config)
        except NoExpandableNodeError:
            break
        child_ids = expand(tree, frontier_id, generator, critic, config)
        for child_id in child_ids:
            child = tree.nodes[child_id]
            backpropagate(tree, child_id, child.rewards[-1])
        tree.iteration_count = iteration
        if stop is not None:
            for child_id in child_ids:
                if stop(tree.nodes[child_id].solution):
                    tree.early_stop_node = child_id
                    return tree
    return tree


def run_dfs(
    problem: str,
    generator,
    critic,
    config: SearchConfig,
    seed: int = 0,
) -> SearchTree:
    """Depth-first refinement chains sharing the MCTS bookkeeping.

    Always expands the most recently created expandable node, driving a
    chain down to ``max_depth``; it then backtracks to the most recent node
    with remaining expansion budget (each node expands at most once).  Total
    expansions never exceed ``max_iterations``.
    """
    if config.algorithm != "dfs":
        raise ValueError("config.algorithm must be 'dfs'")
    tree = SearchTree(problem=problem, config=config, rng_seed=seed)
    _seed_root(tree, problem, generator, critic)
    for iteration in range(1, config.max_iterations + 1):
        frontier = [n.id for n in tree.nodes.values() if is_expandable(tree, n, config)]
        if not frontier:
            break
        node_id = max(frontier)
        child_ids = expand(tree, node_id, generator, critic, config)
        for child_id in child_ids:
            child = tree.nodes[child_id]
            backpropagate(tree, child_id, child.rewards[-1])
        tree.iteration_count = iteration
    return tree


def run_search(
    problem: str,
    generator,
    critic,
    config: SearchConfig,
    stop: Optional[Callable[[str], bool]] = None,
    seed: int = 0,
) -> SearchTree:
    """Dispatch to the configured algorithm.

    Early stopping is an MCTS feature; passing a rule alongside a DFS config
    is rejected rather than silently ignored.
    """
    if config.algorithm == "dfs":
        if stop is not None:
            raise ValueError("early stopping is not supported with DFS")
        return run_dfs(problem, generator, critic, config, seed=seed)
    return run_mcts(problem, generator, critic, config, stop=stop, seed=seed)
