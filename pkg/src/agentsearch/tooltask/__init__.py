"""Simulated tool-calling task: scenarios, simulator, rollout, metrics."""

from .metrics import MetricsReport, TurnMatch, calls_match, compute_metrics, f1_score, match_tool_calls
from .rollout import (
    AgentStep,
    DirectToolAgent,
    ScriptedScenarioAgent,
    SearchToolAgent,
    TurnContext,
    parse_agent_response,
    render_turn_body,
    replay_gold_state,
    teacher_forced_rollout,
    tool_vote_key,
)
from .scenarios import BUNDLED_SCENARIOS, load_bundled_scenario, load_bundled_scenarios, load_scenario_dir, load_scenario_file
from .simulator import SPECIAL_TOOLS, ToolRegistry, WorldState, build_default_registry, build_world
from .types import Scenario, ToolCall, ToolParameter, ToolSpec, TurnPrediction, TurnRecord, normalize_value

__all__ = [
    "AgentStep",
    "BUNDLED_SCENARIOS",
    "DirectToolAgent",
    "MetricsReport",
    "Scenario",
    "ScriptedScenarioAgent",
    "SearchToolAgent",
    "SPECIAL_TOOLS",
    "ToolCall",
    "ToolParameter",
    "ToolRegistry",
    "ToolSpec",
    "TurnContext",
    "TurnMatch",
    "TurnPrediction",
    "TurnRecord",
    "WorldState",
    "build_default_registry",
    "build_world",
    "calls_match",
    "compute_metrics",
    "f1_score",
    "load_bundled_scenario",
    "load_bundled_scenarios",
    "load_scenario_dir",
    "load_scenario_file",
    "match_tool_calls",
    "normalize_value",
    "parse_agent_response",
    "render_turn_body",
    "replay_gold_state",
    "teacher_forced_rollout",
    "tool_vote_key",
]
