"""Critic feedback in four modes, plus the per-parameter grounding check.

Modes:

* ``generic``: plain critic system prompt.
* ``guidelines``: critic system prompt extended with explicit instructions
  to penalize hallucinated tool parameters.
* ``icl``: generic prompt with in-context exemplars (hallucinated and
  factual responses with their ratings) prepended to the payload.
* ``module``: a separate detector first checks every tool parameter for
  grounding, and its verdict is passed to the critic.

Critics are prompted for an integer score on a ``Score: <n>`` line, which is
normalized into [0, 1] before the search layer ever sees it.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Optional

from .gateway import ChatMessage, ModelGateway

FEEDBACK_MODES = ("generic", "guidelines", "icl", "module")

_SCORE_RE = re.compile(r"score\s*:\s*(-?\d+)", re.IGNORECASE)


def load_prompt(name: str) -> str:
    """Load a prompt template bundled with the package (stripped of the trailing newline)."""
    text = resources.files("agentsearch.data.prompts").joinpath(f"{name}.txt").read_text("utf-8")
    return text.rstrip("\n")


def render_prompt(template_name: str, mapping: dict) -> str:
    """Expand a bundled template, raising on any unresolved variable."""
    try:
        return Template(load_prompt(template_name)).substitute(mapping)
    except KeyError as exc:
        raise ValueError(f"missing template variable: {exc.args[0]}") from None


@dataclass
class ParameterCheck:
    """Grounding verdict for a single tool-call parameter."""

    name: str
    grounded: bool
    rationale: str = ""


@dataclass
class HallucinationVerdict:
    """Aggregate of per-parameter grounding checks.

    With the default aggregation the overall verdict is the boolean OR of the
    per-parameter negations: one ungrounded parameter makes the whole
    response hallucinated.  An empty parameter list is never hallucinated.
    """

    per_parameter: list[ParameterCheck] = field(default_factory=list)
    overall_hallucinated: bool = False

    @classmethod
    def aggregate(cls, checks: list[ParameterCheck], min_ungrounded: int = 1) -> "HallucinationVerdict":
        ungrounded = sum(1 for c in checks if not c.grounded)
        return cls(per_parameter=list(checks), overall_hallucinated=ungrounded >= min_ungrounded)

    def to_dict(self) -> dict:
        return {
            "overall_hallucinated": self.overall_hallucinated,
            "per_parameter": [
                {"name": c.name, "grounded": c.grounded, "rationale": c.rationale}
                for c in self.per_parameter
            ],
        }


@dataclass
class FeedbackResult:
    """Critique text plus the scalar reward parsed from it.

    ``raw_score`` is the integer as emitted by the critic (None when parsing
    failed twice); ``reward`` is its normalization into [0, 1].
    """

    critique: str
    raw_score: Optional[int]
    reward: float
    parse_ok: bool
    verdict: Optional[HallucinationVerdict] = None


@dataclass
class IclExemplar:
    """One in-context example shown to the critic in ``icl`` mode."""

    agent_response: str
    label: str
    reward: int
    rationale: str

    def __post_init__(self):
        if self.label not in ("hallucinated", "factual"):
            raise ValueError(f"unknown exemplar label: {self.label!r}")


@dataclass
class FeedbackConfig:
    """Settings shared by every critic invocation."""

    mode: str = "generic"
    score_min: int = -100
    score_max: int = 100
    exemplars: Optional[list[IclExemplar]] = None
    min_ungrounded: int = 1

    def __post_init__(self):
        if self.mode not in FEEDBACK_MODES:
            raise ValueError(f"unknown feedback mode: {self.mode!r}")
        if self.score_max <= self.score_min:
            raise ValueError("score_max must exceed score_min")
        if self.min_ungrounded < 1:
            raise ValueError("min_ungrounded must be >= 1")


def load_exemplars() -> list[IclExemplar]:
    """Load the bundled exemplars, checking label/reward-band consistency."""
    raw = json.loads(resources.files("agentsearch.data").joinpath("icl_exemplars.json").read_text("utf-8"))
    exemplars = [IclExemplar(**entry) for entry in raw["exemplars"]]
    for ex in exemplars:
        validate_exemplar_band(ex)
    return exemplars


def validate_exemplar_band(ex: IclExemplar, score_min: int = -100, score_max: int = 100) -> None:
    """Hallucinated exemplars must sit in the low half of the score range."""
    midpoint = (score_min + score_max) / 2
    if ex.label == "hallucinated" and ex.reward >= midpoint:
        raise ValueError(f"hallucinated exemplar has a high-band reward {ex.reward}")
    if ex.label == "factual" and ex.reward < midpoint:
        raise ValueError(f"factual exemplar has a low-band reward {ex.reward}")


def parse_score(text: str) -> Optional[int]:
    """Extract the integer from the last ``Score: <n>`` line, if any."""
    matches = _SCORE_RE.findall(text)
    if not matches:
        return None
    return int(matches[-1])


def normalize_score(raw: int, score_min: int, score_max: int) -> float:
    """Map the critic's integer onto [0, 1], clamping out-of-range values."""
    if score_max <= score_min:
        raise ValueError("score_max must exceed score_min")
    reward = (raw - score_min) / (score_max - score_min)
    return min(1.0, max(0.0, reward))


def _render_exemplars(exemplars: list[IclExemplar]) -> str:
    blocks = []
    for ex in exemplars:
        blocks.append(
            f"Example ({ex.label}):\nAgent response:\n{ex.agent_response}\n"
            f"Assessment: {ex.rationale}\nScore: {ex.reward}"
        )
    return "Here are graded examples of agent responses:\n\n" + "\n\n".join(blocks)


def _render_verdict(verdict: HallucinationVerdict) -> str:
    lines = ["A separate grounding check was run on this response:"]
    for c in verdict.per_parameter:
        status = "grounded" if c.grounded else "NOT grounded"
        suffix = f" ({c.rationale})" if c.rationale else ""
        lines.append(f'- parameter "{c.name}": {status}{suffix}')
    if verdict.overall_hallucinated:
        lines.append(
            "Overall: the response contains hallucinated parameters. "
            "This must result in a very low score."
        )
    else:
        lines.append("Overall: no hallucinated parameters were detected.")
    return "\n".join(lines)


def critic_system_prompt(mode: str) -> str:
    if mode == "guidelines":
        return load_prompt("critic_hallucination_system")
    return load_prompt("critic_system")


def build_feedback_prompt(mode: str, payload: dict) -> str:
    """Deterministic user-message construction for one critic invocation.

    ``payload`` must provide ``context``, ``solution``, ``score_min`` and
    ``score_max``; ``icl`` mode additionally takes ``exemplars`` and
    ``module`` mode takes ``verdict``.  Identical inputs yield identical
    prompt bytes.
    """
    if mode not in FEEDBACK_MODES:
        raise ValueError(f"unknown feedback mode: {mode!r}")
    for required in ("context", "solution", "score_min", "score_max"):
        if required not in payload:
            raise ValueError(f"missing template variable: {required}")
    body = render_prompt(
        "critic_score_request",
        {
            "context": payload["context"],
            "solution": payload["solution"],
            "score_min": payload["score_min"],
            "score_max": payload["score_max"],
        },
    )
    if mode == "icl":
        exemplars = payload.get("exemplars")
        if exemplars is None:
            raise ValueError("missing template variable: exemplars")
        return _render_exemplars(exemplars) + "\n\n" + body
    if mode == "module":
        verdict = payload.get("verdict")
        if verdict is None:
            raise ValueError("missing template variable: verdict")
        return body + "\n\n" + _render_verdict(verdict)
    return body


class RuleBasedJudge:
    """Deterministic grounding judge: a value is grounded iff it literally
    occurs (case-insensitively) in the user's utterances or the metadata."""

    def check(self, tool_name: str, parameter: str, value, grounding: "GroundingContext") -> tuple[bool, str]:
        haystack = grounding.search_text().casefold()
        values = value if isinstance(value, (list, tuple)) else [value]
        missing = [str(v) for v in values if str(v).strip().casefold() not in haystack]
        if missing:
            return False, f"value {missing[0]!r} does not appear in the user's utterances or metadata"
        return True, "value appears verbatim in the conversation"


class ModelJudge:
    """Grounding judge backed by the ``judge`` model role."""

    def __init__(self, models: ModelGateway):
        self.models = models

    def check(self, tool_name: str, parameter: str, value, grounding: "GroundingContext") -> tuple[bool, str]:
        prompt = render_prompt(
            "judge_parameter_request",
            {
                "context": grounding.search_text(),
                "tool_name": tool_name,
                "parameter": parameter,
                "value": value,
            },
        )
        messages = [
            ChatMessage(role="system", content=load_prompt("judge_system")),
            ChatMessage(role="user", content=prompt),
        ]
        reply = self.models.complete("judge", messages).text
        first = reply.strip().splitlines()[0].strip().casefold() if reply.strip() else ""
        if first.startswith("yes"):
            return True, reply.strip()
        if first.startswith("no"):
            return False, reply.strip()
        raise ValueError(f"judge reply is not a yes/no answer: {reply[:80]!r}")


@dataclass
class GroundingContext:
    """What the grounding judge is allowed to look at: the user's own words
    plus the conversation metadata."""

    user_utterances: list[str] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def search_text(self) -> str:
        parts = list(self.user_utterances)
        parts.extend(f"{k}: {v}" for k, v in sorted(self.metadata.items()))
        return "\n".join(parts)


def detect_hallucination(call, grounding: GroundingContext, judge, min_ungrounded: int = 1) -> HallucinationVerdict:
    """Check every parameter of a tool call for grounding, one judge query each.

    ``call`` is anything with ``tool_name`` and ``arguments`` attributes.  A
    judge failure on a parameter marks it ungrounded (conservative) with the
    failure recorded in the rationale.  Parameter checks are independent, so
    the result does not depend on evaluation order.
    """
    checks: list[ParameterCheck] = []
    for name in call.arguments:
        value = call.arguments[name]
        try:
            grounded, rationale = judge.check(call.tool_name, name, value, grounding)
        except Exception as exc:
            grounded, rationale = False, f"judge failure, conservatively ungrounded: {exc}"
        checks.append(ParameterCheck(name=name, grounded=grounded, rationale=rationale))
    return HallucinationVerdict.aggregate(checks, min_ungrounded=min_ungrounded)


def generate_critique(solution: str, context: str, models: ModelGateway, config: FeedbackConfig) -> str:
    """Ask the critic for a plain critique (no score line) of a solution."""
    messages = [
        ChatMessage(role="system", content=critic_system_prompt(config.mode)),
        ChatMessage(
            role="user",
            content=render_prompt("critic_critique_request", {"context": context, "solution": solution}),
        ),
    ]
    return models.complete("critic", messages).text


def critique_and_score(
    solution: str,
    context: str,
    models: ModelGateway,
    config: FeedbackConfig,
    call=None,
    grounding: GroundingContext | None = None,
    judge=None,
) -> FeedbackResult:
    """Score a candidate solution with the configured feedback mode.

    In ``module`` mode the grounding detector runs first (when the caller
    supplies the parsed ``call`` and a ``grounding`` context) and its verdict
    is appended to the critic prompt.  An unparseable score triggers exactly
    one reprompt asking for the score line alone; a second failure yields
    reward 0 with ``parse_ok`` False.
    """
    verdict = None
    if config.mode == "module":
        if call is not None and grounding is not None:
            if judge is None:
                judge = ModelJudge(models)
            verdict = detect_hallucination(call, grounding, judge, config.min_ungrounded)
        else:
            verdict = HallucinationVerdict(per_parameter=[], overall_hallucinated=False)
    payload = {
        "context": context,
        "solution": solution,
        "score_min": config.score_min,
        "score_max": config.score_max,
    }
    if config.mode == "icl":
        payload["exemplars"] = config.exemplars if config.exemplars is not None else load_exemplars()
    if config.mode == "module":
        payload["verdict"] = verdict
    messages = [
        ChatMessage(role="system", content=critic_system_prompt(config.mode)),
        ChatMessage(role="user", content=build_feedback_prompt(config.mode, payload)),
    ]
    reply = models.complete("critic", messages)
    critique = reply.text
    raw = parse_score(critique)
    if raw is None:
        reprompt = render_prompt("score_reprompt", {"score_min": config.score_min, "score_max": config.score_max})
        retry_messages = messages + [
            ChatMessage(role="assistant", content=critique),
            ChatMessage(role="user", content=reprompt),
        ]
        raw = parse_score(models.complete("critic", retry_messages).text)
    if raw is None:
        return FeedbackResult(critique=critique, raw_score=None, reward=0.0, parse_ok=False, verdict=verdict)
    reward = normalize_score(raw, config.score_min, config.score_max)
    return FeedbackResult(critique=critique, raw_score=raw, reward=reward, parse_ok=True, verdict=verdict)
