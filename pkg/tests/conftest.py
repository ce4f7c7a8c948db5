"""Shared test doubles and random-structure builders."""

from __future__ import annotations

import random

import pytest

from agentsearch.feedback import FeedbackResult
from agentsearch.search import SearchConfig, SearchTree


class ScriptedGenerator:
    """Protocol double: initial() returns the first solution, refine() the rest."""

    def __init__(self, solutions: list[str]):
        self.solutions = list(solutions)
        self.cursor = 0

    def _next(self) -> str:
        if self.cursor >= len(self.solutions):
            raise IndexError("scripted generator exhausted")
        value = self.solutions[self.cursor]
        self.cursor += 1
        return value

    def initial(self, problem: str) -> str:
        return self._next()

    def refine(self, problem: str, solution: str, critique: str) -> str:
        return self._next()


class ScriptedCritic:
    """Protocol double emitting fixed critiques and rewards in order."""

    def __init__(self, rewards: list[float], critique_text: str = "needs work"):
        self.rewards = list(rewards)
        self.cursor = 0
        self.critique_text = critique_text
        self.critique_calls = 0
        self.score_calls = 0

    def critique(self, problem: str, solution: str) -> str:
        self.critique_calls += 1
        return self.critique_text

    def score(self, problem: str, solution: str) -> FeedbackResult:
        self.score_calls += 1
        if self.cursor >= len(self.rewards):
            raise IndexError("scripted critic exhausted")
        reward = self.rewards[self.cursor]
        self.cursor += 1
        return FeedbackResult(critique=f"scored {reward}", raw_score=None, reward=reward, parse_ok=True)


def build_random_tree(rng: random.Random, max_nodes: int = 20, answer_pool: int = 4) -> SearchTree:
    """Random well-formed tree for oracle-equivalence tests.

    Solutions end in ``#### <k>`` with k drawn from a small pool so vote keys
    collide; every node gets 1-3 rewards, visits >= 1, and a q_value in [0, 1].
    """
    config = SearchConfig(max_depth=6)
    tree = SearchTree(problem="oracle", config=config, rng_seed=rng.randint(0, 10**6))
    n_nodes = rng.randint(1, max_nodes)
    for i in range(n_nodes):
        parent = None if i == 0 else rng.randrange(i)
        answer = rng.randrange(answer_pool)
        node = tree.add_node(
            solution=f"candidate {i} gives #### {answer}",
            parent=parent,
            critique=None if i == 0 else "random critique",
            reward=round(rng.random(), 6),
        )
        for _ in range(rng.randint(0, 2)):
            node.rewards.append(round(rng.random(), 6))
        node.visits = rng.randint(1, 20)
        node.q_value = round(rng.random(), 6)
    return tree


@pytest.fixture
def rng() -> random.Random:
    return random.Random(20240901)
