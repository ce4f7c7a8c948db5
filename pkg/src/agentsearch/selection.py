"""Final-answer selection strategies over a completed search tree.

Four strategies cover the usual aggregation menu: ``random`` (uniform over
nodes, seeded), ``majority`` (modal vote key), ``max_reward`` (argmax of a
node's aggregated reward), and ``weighted_majority`` (vote keys weighted by
node rewards).  All are pure functions of (tree, config): repeated calls
agree, and every tie is broken toward the earliest-created node so that runs
replay deterministically.

A *vote key* is the canonical string identifying an answer equivalence
class: a normalized number for math, a canonical tool-call encoding or the
``turn-complete`` marker for the tool task.  ``key_fn(node)`` may return
None when answer extraction fails; such nodes contribute no vote and lose
every reward comparison.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Optional

from .search import SearchNode, SearchTree

VoteKey = str

STRATEGIES = ("random", "majority", "max_reward", "weighted_majority")
REWARD_AGGS = ("mean", "max")

KeyFn = Callable[[SearchNode], Optional[VoteKey]]


@dataclass
class SelectionConfig:
    """Which strategy to run and how to collapse a node's reward list."""

    strategy: str = "majority"
    node_reward_agg: str = "mean"
    rng_seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown selection strategy: {self.strategy!r}")
        if self.node_reward_agg not in REWARD_AGGS:
            raise ValueError(f"unknown node reward aggregation: {self.node_reward_agg!r}")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "node_reward_agg": self.node_reward_agg,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SelectionConfig":
        return cls(**raw)


def node_reward(node: SearchNode, agg: str) -> float:
    """Collapse a node's reward list with mean or max aggregation."""
    if not node.rewards:
        raise ValueError(f"node {node.id} has no rewards")
    if agg == "max":
        return max(node.rewards)
    if agg == "mean":
        return sum(node.rewards) / len(node.rewards)
    raise ValueError(f"unknown node reward aggregation: {agg!r}")


def select_random(tree: SearchTree, config: SelectionConfig) -> SearchNode:
    """Uniform draw over all nodes, deterministic given ``config.rng_seed``."""
    nodes = [tree.nodes[i] for i in sorted(tree.nodes)]
    if not nodes:
        raise ValueError("tree is empty")
    rng = random.Random(config.rng_seed)
    return rng.choice(nodes)


def _tally(tree: SearchTree, key_fn: KeyFn, weight_fn) -> dict[VoteKey, dict]:
    tallies: dict[VoteKey, dict] = {}
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        key = key_fn(node)
        if key is None:
            continue
        entry = tallies.setdefault(key, {"count": 0, "weight": 0.0, "first_node": node_id})
        entry["count"] += 1
        entry["weight"] += weight_fn(node)
    return tallies


def select_majority(tree: SearchTree, key_fn: KeyFn) -> Optional[VoteKey]:
    """Modal vote key over all nodes.

    Ties go to the key whose earliest contributing node has the lowest id.
    Returns None when no node yields a key.
    """
    tallies = _tally(tree, key_fn, lambda node: 0.0)
    if not tallies:
        return None
    return min(tallies, key=lambda k: (-tallies[k]["count"], tallies[k]["first_node"]))


def select_max_reward(tree: SearchTree, config: SelectionConfig, key_fn: KeyFn | None = None) -> SearchNode:
    """Node with the highest aggregated reward; ties go to the lowest id.

    When ``key_fn`` is supplied, nodes whose answer extraction fails are
    pushed to the bottom of the ranking instead of aborting the run.
    """
    if not tree.nodes:
        raise ValueError("tree is empty")
    best = None
    best_reward = -float("inf")
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        if key_fn is not None and key_fn(node) is None:
            reward = -float("inf")
        else:
            reward = node_reward(node, config.node_reward_agg)
        if reward > best_reward:
            best = node
            best_reward = reward
    if best is None:
        best = tree.nodes[min(tree.nodes)]
    return best


def select_weighted_majority(tree: SearchTree, key_fn: KeyFn, config: SelectionConfig) -> Optional[VoteKey]:
    """Vote key maximizing the summed node rewards of its contributors.

    Ties go to the key whose earliest contributing node has the lowest id.
    """
    tallies = _tally(tree, key_fn, lambda node: node_reward(node, config.node_reward_agg))
    if not tallies:
        return None
    return min(tallies, key=lambda k: (-tallies[k]["weight"], tallies[k]["first_node"]))


def representative_node(tree: SearchTree, key: VoteKey, key_fn: KeyFn) -> SearchNode:
    """Earliest-created node carrying the given vote key."""
    for node_id in sorted(tree.nodes):
        if key_fn(tree.nodes[node_id]) == key:
            return tree.nodes[node_id]
    raise KeyError(f"no node carries vote key {key!r}")


@dataclass
class SelectionOutcome:
    """What gets logged in the run transcript for one selection."""

    strategy: str
    node_reward_agg: str
    rng_seed: int
    chosen_node: Optional[int]
    key: Optional[VoteKey]
    tallies: dict

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "node_reward_agg": self.node_reward_agg,
            "rng_seed": self.rng_seed,
            "chosen_node": self.chosen_node,
            "key": self.key,
            "tallies": self.tallies,
        }


def select(tree: SearchTree, config: SelectionConfig, key_fn: KeyFn) -> SelectionOutcome:
    """Run the configured strategy and package the outcome for transcripts."""
    if config.strategy == "random":
        node = select_random(tree, config)
        return SelectionOutcome(
            strategy=config.strategy,
            node_reward_agg=config.node_reward_agg,
            rng_seed=config.rng_seed,
            chosen_node=node.id,
            key=key_fn(node),
            tallies={},
        )
    if config.strategy == "max_reward":
        node = select_max_reward(tree, config, key_fn=key_fn)
        return SelectionOutcome(
            strategy=config.strategy,
            node_reward_agg=config.node_reward_agg,
            rng_seed=config.rng_seed,
            chosen_node=node.id,
            key=key_fn(node),
            tallies={},
        )
    if config.strategy == "majority":
        tallies = _tally(tree, key_fn, lambda node: 0.0)
        key = select_majority(tree, key_fn)
    else:
        tallies = _tally(tree, key_fn, lambda node: node_reward(node, config.node_reward_agg))
        key = select_weighted_majority(tree, key_fn, config)
    if key is None:
        return SelectionOutcome(
            strategy=config.strategy,
            node_reward_agg=config.node_reward_agg,
            rng_seed=config.rng_seed,
            chosen_node=None,
            key=None,
            tallies={},
        )
    node = representative_node(tree, key, key_fn)
    public_tallies = {
        k: (v["count"] if config.strategy == "majority" else v["weight"]) for k, v in tallies.items()
    }
    return SelectionOutcome(
        strategy=config.strategy,
        node_reward_agg=config.node_reward_agg,
        rng_seed=config.rng_seed,
        chosen_node=node.id,
        key=key,
        tallies=public_tallies,
    )
