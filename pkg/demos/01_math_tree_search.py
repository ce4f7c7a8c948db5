"""Walk through one MCTS run over candidate math solutions.

A scripted agent proposes an answer, a scripted critic critiques and scores
it, and the search loop grows a tree of refinements: select the most
promising node by UCT, refine it, score the refinement, and propagate the
reward back up.  Everything is deterministic, so you can trace each step.
"""

from agentsearch.gateway import ModelEndpointConfig, ModelGateway
from agentsearch.math_task import MathCritic, MathGenerator
from agentsearch.search import SearchConfig, run_dfs, run_mcts

PROBLEM = "A baker sells 12 muffins for 3 dollars each. What is the total revenue?"

# The agent's scripted trajectory: a wrong first answer, then refinements
# that eventually land on 36.  The critic's scores (on the [-100, 100]
# scale) reward the better attempts.
AGENT_SCRIPT = [
    "12 muffins at 3 dollars is 12 + 3 = 15. #### 15",
    "Multiplying instead of adding: 12 * 3 = 35. #### 35",
    "12 * 3 = 36, so the revenue is 36 dollars. #### 36",
    "Revenue = price times quantity = 3 * 12 = 36. #### 36",
    "Checking: 12 * 3 = 36. #### 36",
]
CRITIC_SCRIPT = [
    "Score: -60",
    "Addition is the wrong operation here; multiply the price by the count.",
    "Score: -20",
    "The operation is right now but the arithmetic slipped: 12 * 3 is not 35.",
    "Score: 80",
    "This is correct; nothing substantial to improve.",
    "Score: 85",
    "Correct and clearly explained.",
    "Score: 90",
]


def _gateway() -> ModelGateway:
    return ModelGateway(
        {
            "agent": ModelEndpointConfig(kind="scripted", script=AGENT_SCRIPT),
            "critic": ModelEndpointConfig(kind="scripted", script=CRITIC_SCRIPT),
        }
    )


def main():
    gateway = _gateway()
    config = SearchConfig(algorithm="mcts", max_iterations=4, exploration_weight=1.0)
    tree = run_mcts(PROBLEM, MathGenerator(gateway), MathCritic(gateway), config, seed=1)

    print(f"problem: {PROBLEM}")
    print(f"iterations run: {tree.iteration_count}, nodes: {len(tree)}\n")
    for node in tree:
        indent = "  " * node.depth
        reward = node.rewards[0] if node.rewards else None
        print(f"{indent}node {node.id} (depth {node.depth}, visits {node.visits})")
        print(f"{indent}  solution: {node.solution!r}")
        if node.critique:
            print(f"{indent}  refined after critique: {node.critique!r}")
        print(f"{indent}  reward {reward}, Q {node.q_value:.3f}")
    print("\nThe Q-value of an inner node blends the worst and the average")
    print("reward in its subtree, so a branch with one bad refinement keeps")
    print("a memory of that risk even after better children arrive.")

    # Same scripts under DFS: no selection step, just the deepest chain of
    # refinements until the depth cap or the budget runs out.
    gateway = _gateway()
    dfs_config = SearchConfig(algorithm="dfs", max_iterations=4, max_depth=4)
    chain = run_dfs(PROBLEM, MathGenerator(gateway), MathCritic(gateway), dfs_config, seed=1)
    shape = " -> ".join(f"node {node.id}@d{node.depth}" for node in chain)
    print(f"\nDFS with the same scripts builds a single chain: {shape}")


if __name__ == "__main__":
    main()
