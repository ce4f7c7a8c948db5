"""Domain types for the simulated tool-calling environment."""

from __future__ import annotations

from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from typing import Callable, Optional


def normalize_value(value) -> object:
    """Canonical form used for argument comparison and vote keys.

    Strings are trimmed and case-folded, numerics collapse to one canonical
    decimal rendering ("14", 14 and "14.0" all agree), booleans become
    "true"/"false", and lists normalize element-wise.
    """
    if isinstance(value, (list, tuple)):
        return tuple(normalize_value(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    text = str(value).strip()
    try:
        dec = Decimal(text)
    except InvalidOperation:
        return text.casefold()
    rendered = format(dec.normalize(), "f")
    return "0" if rendered in ("-0", "0") else rendered


@dataclass
class ToolCall:
    """One tool invocation: name plus an argument map of scalars or lists."""

    tool_name: str
    arguments: dict = field(default_factory=dict)

    def canonical(self) -> str:
        """Canonical encoding: name with sorted, normalized argument pairs."""
        pairs = []
        for key in sorted(self.arguments):
            value = normalize_value(self.arguments[key])
            if isinstance(value, tuple):
                value = "[" + ",".join(str(v) for v in value) + "]"
            pairs.append(f"{key}={value}")
        return f"{self.tool_name}({','.join(pairs)})"

    def to_dict(self) -> dict:
        return {"name": self.tool_name, "args": dict(self.arguments)}

    @classmethod
    def from_dict(cls, raw: dict) -> "ToolCall":
        return cls(tool_name=raw["name"], arguments=dict(raw.get("args", {})))


@dataclass
class ToolParameter:
    name: str
    type: str = "string"
    required: bool = False
    description: str = ""


@dataclass
class ToolSpec:
    """A registered tool: schema, side-effect classification, and simulator.

    ``simulate`` is a deterministic handler from (arguments, WorldState) to a
    response dict; it may mutate the (already copied) state it receives.
    Side-effecting tools are the "action" tools counted by the bad-action
    metric.
    """

    name: str
    parameters: list[ToolParameter] = field(default_factory=list)
    side_effecting: bool = False
    simulate: Optional[Callable] = None

    def __post_init__(self):
        names = [p.name for p in self.parameters]
        if len(names) != len(set(names)):
            raise ValueError(f"duplicate parameter names in tool {self.name}")

    def required_parameters(self) -> list[str]:
        return [p.name for p in self.parameters if p.required]


@dataclass
class TurnRecord:
    """One user turn with its ground-truth tool calls and responses."""

    user_utterance: str
    gold_tool_calls: list[tuple[ToolCall, dict]] = field(default_factory=list)
    gold_assistant_text: Optional[str] = None


@dataclass
class Scenario:
    """A full dialogue: metadata, turns, initial world, and scripted agents.

    ``world`` seeds the simulator (existing users, events, preassigned
    session tokens and verification codes).  ``agent_scripts`` holds named
    scripted-agent variants: per-turn lists of canned responses.
    """

    id: str
    metadata: dict = field(default_factory=dict)
    turns: list[TurnRecord] = field(default_factory=list)
    world: dict = field(default_factory=dict)
    agent_scripts: dict[str, list[list[str]]] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        turns = []
        for turn in raw["turns"]:
            gold = [
                (ToolCall(tool_name=c["name"], arguments=dict(c.get("args", {}))), dict(c.get("response", {})))
                for c in turn.get("gold_calls", [])
            ]
            turns.append(
                TurnRecord(
                    user_utterance=turn["user"],
                    gold_tool_calls=gold,
                    gold_assistant_text=turn.get("gold_text"),
                )
            )
        return cls(
            id=raw["id"],
            metadata=dict(raw.get("metadata", {})),
            turns=turns,
            world=dict(raw.get("world", {})),
            agent_scripts={k: [list(t) for t in v] for k, v in raw.get("agent_scripts", {}).items()},
        )

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "metadata": dict(self.metadata),
            "turns": [
                {
                    "user": t.user_utterance,
                    "gold_calls": [
                        {"name": c.tool_name, "args": dict(c.arguments), "response": dict(r)}
                        for c, r in t.gold_tool_calls
                    ],
                    "gold_text": t.gold_assistant_text,
                }
                for t in self.turns
            ],
            "world": dict(self.world),
            "agent_scripts": {k: [list(t) for t in v] for k, v in self.agent_scripts.items()},
        }


@dataclass
class TurnPrediction:
    """The agent's output for one turn under teacher forcing.

    A turn always ends with completion text (possibly after zero or more
    tool calls); ``truncated`` marks turns cut off by the per-turn call
    budget.  ``context`` is the exact context string the turn was decoded
    from, and ``steps`` holds per-decode-step transcript records.
    """

    predicted_tool_calls: list[ToolCall] = field(default_factory=list)
    completion_text: Optional[str] = None
    truncated: bool = False
    context: str = ""
    steps: list[dict] = field(default_factory=list)
