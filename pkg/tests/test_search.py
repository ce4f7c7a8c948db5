"""Search core: UCT arithmetic, selection oracle, expansion, backprop, loops."""

from __future__ import annotations

import math

import pytest

from agentsearch.feedback import FeedbackResult
from agentsearch.search import (
    NoExpandableNodeError,
    SearchConfig,
    SearchNode,
    SearchTree,
    backpropagate,
    expand,
    run_dfs,
    run_mcts,
    select_frontier,
    uct_score,
)

from conftest import ScriptedCritic, ScriptedGenerator, build_random_tree


def _node(q=0.5, visits=1, depth=0, node_id=0):
    return SearchNode(id=node_id, parent=None, solution="s", rewards=[q], visits=visits, q_value=q, depth=depth)


def frontier_oracle(tree: SearchTree, config: SearchConfig):
    """Independent exhaustive argmax over the UCT formula."""
    best_id, best_score = None, None
    for node_id in sorted(tree.nodes):
        node = tree.nodes[node_id]
        if node.depth >= config.max_depth:
            continue
        if config.algorithm == "dfs" and node.children:
            continue
        pv = tree.nodes[node.parent].visits if node.parent is not None else node.visits
        pv = max(1, pv)
        if config.exploration_weight == 0:
            score = node.q_value
        elif config.uct_form == "log_over_log":
            score = node.q_value + config.exploration_weight * math.sqrt(
                math.log(pv) / math.log(node.visits + 1 + config.epsilon)
            )
        else:
            score = node.q_value + config.exploration_weight * math.sqrt(
                math.log(pv) / (node.visits + config.epsilon)
            )
        if best_score is None or score > best_score:
            best_id, best_score = node_id, score
    return best_id


class TestUctScore:
    def test_zero_weight_reduces_to_q(self):
        config = SearchConfig(exploration_weight=0.0)
        assert uct_score(_node(q=0.7, visits=3), parent_visits=9, config=config) == 0.7

    def test_hand_arithmetic(self):
        # 0.5 + sqrt(ln 8 / 2) with a negligible epsilon
        config = SearchConfig(exploration_weight=1.0, epsilon=1e-12)
        value = uct_score(_node(q=0.5, visits=2), parent_visits=8, config=config)
        assert value == pytest.approx(1.5197, abs=1e-4)

    def test_unvisited_node_dominates(self):
        config = SearchConfig(exploration_weight=1.0, epsilon=1e-6)
        value = uct_score(_node(q=0.5, visits=0), parent_visits=2, config=config)
        assert value > 100
        assert value == pytest.approx(0.5 + math.sqrt(math.log(2) / 1e-6), rel=1e-9)

    def test_paper_form_literal(self):
        config = SearchConfig(uct_form="log_over_log", exploration_weight=1.0, epsilon=1e-6)
        node = _node(q=0.5, visits=2)
        expected = 0.5 + math.sqrt(math.log(8) / math.log(3 + 1e-6))
        assert uct_score(node, parent_visits=8, config=config) == pytest.approx(expected, rel=1e-12)

    def test_paper_form_is_finite_everywhere(self):
        config = SearchConfig(uct_form="log_over_log")
        for visits in range(0, 6):
            for parent_visits in range(1, 8):
                value = uct_score(_node(visits=visits), parent_visits=parent_visits, config=config)
                assert math.isfinite(value)

    def test_standard_form_is_finite_everywhere(self):
        config = SearchConfig()
        for visits in range(0, 6):
            for parent_visits in range(1, 8):
                assert math.isfinite(uct_score(_node(visits=visits), parent_visits, config))

    def test_rejects_unvisited_parent(self):
        with pytest.raises(ValueError):
            uct_score(_node(), parent_visits=0, config=SearchConfig())


class TestSelectFrontier:
    def test_single_root(self):
        config = SearchConfig()
        tree = SearchTree("p", config)
        root = tree.add_node("root", reward=0.5)
        root.visits = 1
        assert select_frontier(tree, config) == root.id

    def test_matches_bruteforce_on_random_trees(self, rng):
        config = SearchConfig()
        for _ in range(300):
            tree = build_random_tree(rng)
            assert select_frontier(tree, config) == frontier_oracle(tree, config)

    def test_tie_breaks_to_lowest_id(self):
        config = SearchConfig(exploration_weight=0.0)
        tree = SearchTree("p", config)
        root = tree.add_node("root", reward=0.4)
        root.visits = 3
        a = tree.add_node("a", parent=0, reward=0.9)
        b = tree.add_node("b", parent=0, reward=0.9)
        a.visits = b.visits = 1
        a.q_value = b.q_value = 0.9
        assert select_frontier(tree, config) == a.id

    def test_greedy_mode_takes_max_q(self, rng):
        config = SearchConfig(exploration_weight=0.0)
        for _ in range(50):
            tree = build_random_tree(rng)
            # Make q-values distinct so argmax is unambiguous.
            for offset, node_id in enumerate(sorted(tree.nodes)):
                tree.nodes[node_id].q_value = (offset * 37 % len(tree.nodes)) / (len(tree.nodes) + 1)
            expandable = [n for n in tree.nodes.values() if n.depth < config.max_depth]
            expected = max(expandable, key=lambda n: n.q_value).id
            assert select_frontier(tree, config) == expected

    def test_error_when_everything_at_max_depth(self):
        config = SearchConfig(max_depth=1)
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.5).visits = 1
        tree.add_node("child", parent=0, reward=0.5).visits = 1
        tree.nodes[0].depth = 1  # force the root past the limit
        with pytest.raises(NoExpandableNodeError):
            select_frontier(tree, config)


class TestExpand:
    def test_scripted_expansion(self):
        config = SearchConfig()
        tree = SearchTree("p", config)
        tree.add_node("answer: 5", reward=0.2).visits = 1

        class FixedCritic:
            def critique(self, problem, solution):
                return "wrong sign"

            def score(self, problem, solution):
                return FeedbackResult(critique="good", raw_score=80, reward=0.9, parse_ok=True)

        ids = expand(tree, 0, _refine_only(["answer: 4"]), FixedCritic(), config)
        assert len(ids) == 1
        child = tree.nodes[ids[0]]
        assert child.solution == "answer: 4"
        assert child.rewards == [0.9]
        assert child.critique == "wrong sign"
        assert child.depth == 1
        assert child.parent == 0

    def test_children_per_expansion_two(self):
        config = SearchConfig(children_per_expansion=2)
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.5).visits = 1
        generator = ScriptedGenerator(["seed", "c1", "c2"])
        generator.initial("p")
        critic = ScriptedCritic([0.3, 0.6])
        ids = expand(tree, 0, generator, critic, config)
        assert len(ids) == 2
        assert len(set(ids)) == 2

    def test_expand_at_max_depth_rejected(self):
        config = SearchConfig(max_depth=1)
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.5).visits = 1
        child = tree.add_node("c", parent=0, reward=0.5)
        with pytest.raises(NoExpandableNodeError):
            expand(tree, child.id, ScriptedGenerator(["x"]), ScriptedCritic([0.5]), config)

    def test_parse_failure_marks_child(self):
        config = SearchConfig()
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.5).visits = 1

        class FailingCritic:
            def critique(self, problem, solution):
                return "meh"

            def score(self, problem, solution):
                return FeedbackResult(critique="???", raw_score=None, reward=0.0, parse_ok=False)

        ids = expand(tree, 0, _refine_only(["kid"]), FailingCritic(), config)
        child = tree.nodes[ids[0]]
        assert child.rewards == [0.0]
        assert child.parse_failed


def _refine_only(solutions):
    gen = ScriptedGenerator(solutions)

    class RefineOnly:
        def initial(self, problem):
            raise AssertionError("initial not expected")

        def refine(self, problem, solution, critique):
            return gen._next()

    return RefineOnly()


class TestBackpropagate:
    def test_single_node_fixed_point(self):
        config = SearchConfig()
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.8)
        backpropagate(tree, 0, 0.8)
        assert tree.nodes[0].q_value == pytest.approx(0.8)
        assert tree.nodes[0].visits == 1

    def test_subtree_min_mean_formula(self):
        config = SearchConfig()
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.2).visits = 1
        child = tree.add_node("c", parent=0, reward=0.8)
        backpropagate(tree, child.id, 0.8)
        # subtree rewards {0.2, 0.8}: 0.5 * (min + mean) = 0.5 * (0.2 + 0.5)
        assert tree.nodes[0].q_value == pytest.approx(0.35)
        assert child.q_value == pytest.approx(0.8)

    def test_plain_mean_strategy(self):
        config = SearchConfig(q_update="mean")
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.2).visits = 1
        child = tree.add_node("c", parent=0, reward=0.8)
        backpropagate(tree, child.id, 0.8)
        assert tree.nodes[0].q_value == pytest.approx(0.5)

    def test_root_visit_counting(self):
        config = SearchConfig()
        tree = SearchTree("p", config)
        tree.add_node("root", reward=0.5).visits = 1
        for i in range(4):
            child = tree.add_node(f"c{i}", parent=0, reward=0.5)
            backpropagate(tree, child.id, 0.5)
        assert tree.nodes[0].visits == 1 + 4

    def test_unknown_leaf(self):
        tree = SearchTree("p", SearchConfig())
        tree.add_node("root", reward=0.5)
        with pytest.raises(KeyError):
            backpropagate(tree, 99, 0.5)

    def test_reward_range_validated(self):
        tree = SearchTree("p", SearchConfig())
        tree.add_node("root", reward=0.5)
        with pytest.raises(ValueError):
            backpropagate(tree, 0, 1.5)


def _mcts_models(n_iterations: int, answers=None):
    """Scripted generator/critic pair sized for one MCTS run."""
    if answers is None:
        answers = [f"answer #### {i}" for i in range(n_iterations + 1)]
    rewards = [round(0.3 + 0.04 * i, 4) for i in range(n_iterations + 1)]
    return ScriptedGenerator(answers), ScriptedCritic(rewards)


class TestRunMcts:
    def test_node_count_is_iterations_plus_root(self):
        config = SearchConfig(max_iterations=10, children_per_expansion=1)
        generator, critic = _mcts_models(10)
        tree = run_mcts("p", generator, critic, config)
        assert len(tree) == 11
        assert tree.iteration_count == 10

    def test_no_stopping_runs_all_iterations(self):
        config = SearchConfig(max_iterations=6)
        generator, critic = _mcts_models(6)
        tree = run_mcts("p", generator, critic, config)
        assert tree.iteration_count == config.max_iterations
        assert tree.early_stop_node is None

    def test_ground_truth_stop_at_iteration_three(self):
        config = SearchConfig(max_iterations=10)
        answers = ["#### 1", "#### 2", "#### 3", "#### 42", "#### 5", "#### 6"]
        generator, critic = _mcts_models(10, answers=answers + ["#### 9"] * 5)
        tree = run_mcts("p", generator, critic, config, stop=lambda text: "42" in text)
        assert tree.iteration_count == 3
        assert tree.early_stop_node is not None
        assert "42" in tree.nodes[tree.early_stop_node].solution

    def test_determinism_byte_identical(self):
        config = SearchConfig(max_iterations=5)
        blobs = []
        for _ in range(2):
            generator, critic = _mcts_models(5)
            blobs.append(run_mcts("p", generator, critic, config, seed=7).to_json())
        assert blobs[0] == blobs[1]

    def test_visit_and_q_invariants(self):
        config = SearchConfig(max_iterations=10)
        generator, critic = _mcts_models(10)
        tree = run_mcts("p", generator, critic, config)
        for node in tree:
            assert 0.0 <= node.q_value <= 1.0
            child_visits = sum(tree.nodes[c].visits for c in node.children)
            assert child_visits <= node.visits
        assert tree.nodes[tree.root].visits == 1 + tree.iteration_count

    def test_wrong_algorithm_rejected(self):
        config = SearchConfig(algorithm="dfs")
        with pytest.raises(ValueError):
            run_mcts("p", ScriptedGenerator(["x"]), ScriptedCritic([0.5]), config)


class TestRunDfs:
    def test_single_chain(self):
        config = SearchConfig(algorithm="dfs", max_iterations=3, max_depth=3)
        generator, critic = _mcts_models(3)
        tree = run_dfs("p", generator, critic, config)
        assert len(tree) == 4
        depths = sorted(node.depth for node in tree)
        assert depths == [0, 1, 2, 3]
        for node in tree:
            assert len(node.children) <= 1

    def test_budget_exhaustion_leaves_valid_tree(self):
        config = SearchConfig(algorithm="dfs", max_iterations=5, max_depth=2, children_per_expansion=2)
        generator, critic = _mcts_models(11)
        tree = run_dfs("p", generator, critic, config)
        assert tree.iteration_count <= 5
        for node in tree:
            if node.parent is not None:
                assert node.parent in tree.nodes
                assert node.id in tree.nodes[node.parent].children
            assert node.rewards

    def test_backtracking_branches(self):
        # With two children per expansion and depth 2, DFS descends then
        # backtracks to expand earlier still-unexpanded nodes.
        config = SearchConfig(algorithm="dfs", max_iterations=4, max_depth=2, children_per_expansion=2)
        generator, critic = _mcts_models(9)
        tree = run_dfs("p", generator, critic, config)
        expanded = [node.id for node in tree if node.children]
        assert len(expanded) == tree.iteration_count
        assert max(node.depth for node in tree) == 2

    def test_stop_rule_rejected(self):
        from agentsearch.search import run_search

        config = SearchConfig(algorithm="dfs", max_iterations=2)
        with pytest.raises(ValueError, match="early stopping"):
            run_search("p", *(_mcts_models(2)), config, stop=lambda s: True)

    def test_determinism(self):
        config = SearchConfig(algorithm="dfs", max_iterations=4, max_depth=4)
        blobs = []
        for _ in range(2):
            generator, critic = _mcts_models(4)
            blobs.append(run_dfs("p", generator, critic, config, seed=3).to_json())
        assert blobs[0] == blobs[1]


class TestSerialization:
    def test_roundtrip(self, rng):
        for _ in range(25):
            tree = build_random_tree(rng)
            clone = SearchTree.from_json(tree.to_json())
            assert clone.to_json() == tree.to_json()

    def test_schema_fields(self):
        import json

        config = SearchConfig(max_iterations=2)
        generator, critic = _mcts_models(2)
        doc = json.loads(run_mcts("p", generator, critic, config).to_json())
        assert set(doc) == {"problem", "seed", "iteration_count", "early_stop_node", "config", "nodes"}
        node_keys = {
            "id", "parent", "solution", "critique", "rewards", "visits",
            "q_value", "depth", "parse_failed", "verdict",
        }
        assert set(doc["nodes"][0]) == node_keys


class TestQValueBounds:
    def test_arbitrary_operation_sequences_stay_bounded(self, rng):
        config = SearchConfig()
        for _ in range(40):
            tree = SearchTree("p", config)
            tree.add_node("root", reward=rng.random()).visits = 1
            for _ in range(rng.randint(1, 15)):
                parent = rng.choice(sorted(tree.nodes))
                if tree.nodes[parent].depth >= config.max_depth:
                    continue
                child = tree.add_node("c", parent=parent, reward=rng.random())
                if rng.random() < 0.3:
                    child.rewards.append(rng.random())
                backpropagate(tree, child.id, child.rewards[-1])
            for node in tree:
                assert 0.0 <= node.q_value <= 1.0
