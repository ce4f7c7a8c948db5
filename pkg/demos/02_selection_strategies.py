"""Show how the four answer-selection strategies can disagree on one tree.

The tree is built by hand: the answer 5 appears on two low-reward nodes,
while the answer 3 appears once with a high reward.  Majority voting and
weighted majority voting then pull in different directions, and max-reward
ignores vote counts entirely.
"""

from agentsearch.math_task import math_vote_key
from agentsearch.search import SearchConfig, SearchTree
from agentsearch.selection import SelectionConfig, select

REWARDS_AND_ANSWERS = [
    (0.20, 5),  # root: weak answer
    (0.20, 5),  # refinement that repeats it
    (0.90, 3),  # strong dissenting refinement
]


def build_tree() -> SearchTree:
    tree = SearchTree("toy problem", SearchConfig())
    for i, (reward, answer) in enumerate(REWARDS_AND_ANSWERS):
        node = tree.add_node(
            f"attempt {i}: the answer is #### {answer}",
            parent=None if i == 0 else 0,
            reward=reward,
        )
        node.visits = 1
    return tree


def main():
    tree = build_tree()
    print("tree nodes:")
    for node in tree:
        print(f"  node {node.id}: answer {math_vote_key(node)}, reward {node.rewards[0]:.2f}")
    print()
    for strategy in ("random", "majority", "max_reward", "weighted_majority"):
        outcome = select(tree, SelectionConfig(strategy=strategy, rng_seed=7), math_vote_key)
        print(f"{strategy:18s} -> answer {outcome.key!r:6s} (node {outcome.chosen_node}, tallies {outcome.tallies})")
    print()
    print("Majority counts heads: two votes for 5 beat one vote for 3.")
    print("Weighted majority sums rewards: 0.9 for 3 beats 0.4 for 5.")
    print("Max-reward picks the single best-scored node, answer 3.")


if __name__ == "__main__":
    main()
