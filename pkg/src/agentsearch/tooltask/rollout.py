"""Teacher-forced evaluation loop over simulated tool-calling dialogues.

Each turn is decoded against a context rebuilt purely from the ground-truth
transcript of the preceding turns, so one turn's mistakes never leak into
the next (the world state is likewise replayed from the gold calls).  Within
a turn the agent is invoked one response at a time: a tool call is executed
against the simulator and its result appended to the local context; a plain
text response completes the turn.

Search-backed agents build a whole candidate tree per decode step.  Tool
calls are never executed while searching; only the finally selected call
touches the simulator.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from ..feedback import FeedbackConfig, FeedbackResult, GroundingContext, critique_and_score, generate_critique, load_prompt, render_prompt
from ..gateway import ChatMessage, ModelGateway
from ..search import SearchConfig, SearchTree, run_search
from ..selection import SelectionConfig, SelectionOutcome, select
from .simulator import SPECIAL_TOOLS, ToolRegistry, WorldState, build_world
from .types import Scenario, ToolCall, TurnPrediction

_CALL_START_RE = re.compile(r"^([A-Za-z_]\w*)\s*\(")

DEFAULT_TURN_BUDGET = 8


def parse_agent_response(text: str) -> Optional[ToolCall]:
    """Parse an agent response into a ToolCall, or None for plain text.

    Recognized call syntax is a tool name followed by parenthesized
    ``key: value`` arguments, one per line or comma-separated on a single
    line.  ``[a, b]`` values become lists.  Anything else is turn-completing
    text.
    """
    stripped = text.strip()
    m = _CALL_START_RE.match(stripped)
    if not m or not stripped.endswith(")"):
        return None
    inner = stripped[m.end():-1].strip()
    if not inner:
        return ToolCall(tool_name=m.group(1))
    entries = inner.splitlines() if "\n" in inner else _split_args(inner)
    arguments = {}
    for entry in entries:
        entry = entry.strip().rstrip(",")
        if not entry:
            continue
        if ":" not in entry:
            return None
        key, value = entry.split(":", 1)
        key = key.strip()
        if not key or not key.replace("_", "").isalnum():
            return None
        arguments[key] = _parse_value(value.strip())
    return ToolCall(tool_name=m.group(1), arguments=arguments)


def _split_args(inner: str) -> list[str]:
    """Split single-line arguments on commas outside brackets."""
    parts = []
    depth = 0
    current = []
    for ch in inner:
        if ch in "[(":
            depth += 1
        elif ch in "])":
            depth -= 1
        if ch == "," and depth == 0:
            parts.append("".join(current))
            current = []
        else:
            current.append(ch)
    if current:
        parts.append("".join(current))
    return parts


def _parse_value(raw: str):
    if raw.startswith("[") and raw.endswith("]"):
        body = raw[1:-1].strip()
        if not body:
            return []
        return [item.strip() for item in body.split(",")]
    return raw


def render_call(call: ToolCall) -> str:
    """Render a call in the multiline transcript syntax."""
    lines = [f"{call.tool_name}("]
    for key, value in call.arguments.items():
        if isinstance(value, (list, tuple)):
            value = "[" + ", ".join(str(v) for v in value) + "]"
        lines.append(f"{key}: {value}")
    lines.append(")")
    return "\n".join(lines)


def render_response(response: dict) -> str:
    return "\n".join(f"{key}: {response[key]}" for key in sorted(response))


@dataclass
class TurnContext:
    """Everything an agent sees when decoding one step of one turn."""

    system_prompt: str
    body: str
    turn_index: int
    step_index: int
    grounding: GroundingContext

    @property
    def full(self) -> str:
        return self.system_prompt + "\n\n" + self.body


@dataclass
class AgentStep:
    """One agent decision: the response text plus optional search artifacts."""

    text: str
    tree: Optional[SearchTree] = None
    selection: Optional[SelectionOutcome] = None


def render_turn_body(scenario: Scenario, turn_index: int) -> str:
    """Context body for a turn: metadata, gold history, current utterance.

    Only ground-truth turns feed this rendering, which is what makes the
    evaluation teacher-forced.
    """
    lines = ["Metadata:"]
    for key in ("location", "timestamp", "session_token", "username"):
        if key in scenario.metadata:
            lines.append(f"{key}: {scenario.metadata[key]}")
    lines.append("")
    for prev in scenario.turns[:turn_index]:
        lines.append(f"User: {prev.user_utterance}")
        for call, response in prev.gold_tool_calls:
            lines.append("Assistant:")
            lines.append(render_call(call))
            lines.append("Tool:")
            lines.append(render_response(response))
        if prev.gold_assistant_text:
            lines.append(f"Assistant: {prev.gold_assistant_text}")
        lines.append("")
    lines.append(f"User: {scenario.turns[turn_index].user_utterance}")
    return "\n".join(lines)


def replay_gold_state(scenario: Scenario, turn_index: int, registry: ToolRegistry) -> WorldState:
    """World state at the start of a turn, replayed from gold calls only."""
    state = build_world(scenario)
    for prev in scenario.turns[:turn_index]:
        for call, _ in prev.gold_tool_calls:
            _, state = registry.simulate(call, state)
    return state


def grounding_for_turn(scenario: Scenario, turn_index: int) -> GroundingContext:
    utterances = [t.user_utterance for t in scenario.turns[: turn_index + 1]]
    return GroundingContext(user_utterances=utterances, metadata=dict(scenario.metadata))


def teacher_forced_rollout(
    scenario: Scenario,
    agent,
    registry: ToolRegistry,
    budget: int = DEFAULT_TURN_BUDGET,
    system_prompt: str | None = None,
) -> list[TurnPrediction]:
    """Decode every turn of a scenario under teacher forcing.

    ``agent`` is called once per decode step with a TurnContext and returns
    either a plain string or an AgentStep.  Special user-interaction tools
    (AskUserForInformation, FinishTask, AbortTask) complete the turn and are
    not counted as predicted calls.  Turns that exhaust the per-turn budget
    are truncated and flagged.
    """
    if system_prompt is None:
        system_prompt = load_prompt("agent_tools_system")
    predictions = []
    for turn_index in range(len(scenario.turns)):
        base_body = render_turn_body(scenario, turn_index)
        state = replay_gold_state(scenario, turn_index, registry)
        grounding = grounding_for_turn(scenario, turn_index)
        body = base_body
        calls: list[ToolCall] = []
        steps: list[dict] = []
        completion: Optional[str] = None
        truncated = False
        for step_index in range(budget):
            ctx = TurnContext(
                system_prompt=system_prompt,
                body=body,
                turn_index=turn_index,
                step_index=step_index,
                grounding=grounding,
            )
            decision = agent(ctx)
            if isinstance(decision, str):
                decision = AgentStep(text=decision)
            call = parse_agent_response(decision.text)
            record = {
                "chosen": decision.text,
                "call": None,
                "response": None,
                "tree": decision.tree.to_json() if decision.tree is not None else None,
                "selection": decision.selection.to_dict() if decision.selection is not None else None,
            }
            if call is None or call.tool_name in SPECIAL_TOOLS:
                completion = decision.text
                steps.append(record)
                break
            response, state = registry.simulate(call, state)
            calls.append(call)
            record["call"] = call.to_dict()
            record["response"] = response
            steps.append(record)
            body = body + "\nAssistant:\n" + render_call(call) + "\nTool:\n" + render_response(response)
        else:
            truncated = True
            completion = ""
        predictions.append(
            TurnPrediction(
                predicted_tool_calls=calls,
                completion_text=completion,
                truncated=truncated,
                context=system_prompt + "\n\n" + base_body,
                steps=steps,
            )
        )
    return predictions


def tool_vote_key(node) -> Optional[str]:
    """Vote key for tool-task aggregation.

    Tool calls vote by their canonical encoding; any plain-text response
    (including the special user-interaction tools) votes for the single
    ``turn-complete`` class.
    """
    call = parse_agent_response(node.solution)
    if call is None or call.tool_name in SPECIAL_TOOLS:
        return "turn-complete"
    return "call:" + call.canonical()


class DirectToolAgent:
    """No-search baseline: one agent model call per decode step."""

    def __init__(self, models: ModelGateway):
        self.models = models

    def __call__(self, ctx: TurnContext) -> AgentStep:
        messages = [
            ChatMessage(role="system", content=ctx.system_prompt),
            ChatMessage(role="user", content=ctx.body),
        ]
        return AgentStep(text=self.models.complete("agent", messages).text)


class ScriptedScenarioAgent:
    """Replays a scenario's bundled scripted-agent variant.

    Responses are indexed by (turn, step); running past a turn's script
    yields an empty completion so the rollout always terminates.
    """

    def __init__(self, scenario: Scenario, variant: str):
        if variant not in scenario.agent_scripts:
            raise KeyError(f"scenario {scenario.id} has no agent script {variant!r}")
        self.script = scenario.agent_scripts[variant]

    def __call__(self, ctx: TurnContext) -> AgentStep:
        if ctx.turn_index >= len(self.script):
            return AgentStep(text="")
        turn_script = self.script[ctx.turn_index]
        if ctx.step_index >= len(turn_script):
            return AgentStep(text="")
        return AgentStep(text=turn_script[ctx.step_index])


class _ToolCandidateGenerator:
    """Search generator over complete candidate responses for one decode step."""

    def __init__(self, models: ModelGateway, system_prompt: str):
        self.models = models
        self.system_prompt = system_prompt

    def initial(self, problem: str) -> str:
        messages = [
            ChatMessage(role="system", content=self.system_prompt),
            ChatMessage(role="user", content=problem),
        ]
        return self.models.complete("agent", messages).text

    def refine(self, problem: str, solution: str, critique: str) -> str:
        messages = [
            ChatMessage(role="system", content=self.system_prompt),
            ChatMessage(
                role="user",
                content=render_prompt(
                    "tool_refine_request",
                    {"context": problem, "solution": solution, "critique": critique},
                ),
            ),
        ]
        return self.models.complete("agent", messages).text


class _ToolCandidateCritic:
    """Scores candidate responses; in module mode, runs the grounding check
    on the candidate's parsed call first."""

    def __init__(self, models: ModelGateway, config: FeedbackConfig, grounding: GroundingContext, judge=None):
        self.models = models
        self.config = config
        self.grounding = grounding
        self.judge = judge

    def critique(self, problem: str, solution: str) -> str:
        return generate_critique(solution, problem, self.models, self.config)

    def score(self, problem: str, solution: str) -> FeedbackResult:
        call = parse_agent_response(solution)
        if call is not None and call.tool_name in SPECIAL_TOOLS:
            call = None
        return critique_and_score(
            solution,
            problem,
            self.models,
            self.config,
            call=call,
            grounding=self.grounding,
            judge=self.judge,
        )


class SearchToolAgent:
    """Agent that searches over complete candidate responses per decode step.

    The tree is built without executing any tool; the configured selection
    strategy picks the node whose response the rollout then acts on.
    """

    def __init__(
        self,
        models: ModelGateway,
        search_config: SearchConfig,
        selection_config: SelectionConfig,
        feedback_config: FeedbackConfig | None = None,
        judge=None,
        seed: int = 0,
    ):
        self.models = models
        self.search_config = search_config
        self.selection_config = selection_config
        self.feedback_config = feedback_config or FeedbackConfig()
        self.judge = judge
        self.seed = seed

    def __call__(self, ctx: TurnContext) -> AgentStep:
        generator = _ToolCandidateGenerator(self.models, ctx.system_prompt)
        critic = _ToolCandidateCritic(self.models, self.feedback_config, ctx.grounding, judge=self.judge)
        tree = run_search(ctx.body, generator, critic, self.search_config, seed=self.seed)
        outcome = select(tree, self.selection_config, tool_vote_key)
        if outcome.chosen_node is None:
            return AgentStep(text=tree.nodes[tree.root].solution, tree=tree, selection=outcome)
        return AgentStep(text=tree.nodes[outcome.chosen_node].solution, tree=tree, selection=outcome)
