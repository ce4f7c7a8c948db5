"""Inference-time tree search for language agents.

Builds MCTS or DFS trees of candidate agent responses refined under critic
feedback, offers pluggable answer-selection strategies over finished trees,
and evaluates the whole pipeline on a math word-problem task and a
teacher-forced simulated tool-calling environment.
"""

from .feedback import (
    FeedbackConfig,
    FeedbackResult,
    GroundingContext,
    HallucinationVerdict,
    IclExemplar,
    ModelJudge,
    ParameterCheck,
    RuleBasedJudge,
    build_feedback_prompt,
    critique_and_score,
    detect_hallucination,
    generate_critique,
    load_exemplars,
)
from .gateway import (
    ChatMessage,
    ModelEndpointConfig,
    ModelGateway,
    ModelReply,
    ResponseCache,
    ScriptedModel,
    cache_key,
)
from .math_task import (
    CanonicalNumber,
    MathCritic,
    MathGenerator,
    MathProblem,
    extract_final_answer,
    ground_truth_stopper,
    load_problems,
    math_vote_key,
    score_accuracy,
    verify,
)
from .search import (
    NoExpandableNodeError,
    SearchConfig,
    SearchNode,
    SearchTree,
    backpropagate,
    expand,
    run_dfs,
    run_mcts,
    run_search,
    select_frontier,
    uct_score,
)
from .selection import (
    SelectionConfig,
    SelectionOutcome,
    node_reward,
    select,
    select_majority,
    select_max_reward,
    select_random,
    select_weighted_majority,
)

__version__ = "0.1.0"
