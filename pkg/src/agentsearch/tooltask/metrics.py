"""Tool-call matching and precision/recall/F1/bad-action metrics.

Matching is greedy and in order: a predicted call matches the first
still-unmatched gold call with the same name whose every gold argument the
prediction reproduces after canonical normalization (case-insensitive
strings, trimmed whitespace, numeric equivalence).  Extra predicted
arguments never block a match; a missing or different gold argument does.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from .simulator import ToolRegistry
from .types import ToolCall, normalize_value


def calls_match(predicted: ToolCall, gold: ToolCall) -> bool:
    """Name equality plus normalized equality on every gold argument."""
    if predicted.tool_name != gold.tool_name:
        return False
    for key, gold_value in gold.arguments.items():
        if key not in predicted.arguments:
            return False
        if normalize_value(predicted.arguments[key]) != normalize_value(gold_value):
            return False
    return True


@dataclass
class TurnMatch:
    """Outcome of matching one turn's predictions against its gold calls."""

    matched: list[tuple[ToolCall, ToolCall]] = field(default_factory=list)
    unmatched_predicted: list[ToolCall] = field(default_factory=list)
    unmatched_gold: list[ToolCall] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "matched": [[p.to_dict(), g.to_dict()] for p, g in self.matched],
            "unmatched_predicted": [c.to_dict() for c in self.unmatched_predicted],
            "unmatched_gold": [c.to_dict() for c in self.unmatched_gold],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "TurnMatch":
        return cls(
            matched=[(ToolCall.from_dict(p), ToolCall.from_dict(g)) for p, g in raw["matched"]],
            unmatched_predicted=[ToolCall.from_dict(c) for c in raw["unmatched_predicted"]],
            unmatched_gold=[ToolCall.from_dict(c) for c in raw["unmatched_gold"]],
        )


def match_tool_calls(predicted: list[ToolCall], gold: list[ToolCall]) -> TurnMatch:
    """Greedy one-to-one matching in order; matched counts are symmetric."""
    taken = [False] * len(gold)
    match = TurnMatch()
    for pred in predicted:
        hit = None
        for idx, gold_call in enumerate(gold):
            if not taken[idx] and calls_match(pred, gold_call):
                hit = idx
                break
        if hit is None:
            match.unmatched_predicted.append(pred)
        else:
            taken[hit] = True
            match.matched.append((pred, gold[hit]))
    match.unmatched_gold = [g for idx, g in enumerate(gold) if not taken[idx]]
    return match


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean, defined as 0 when both components vanish."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class MetricsReport:
    """Pooled precision/recall/F1 and bad-action rate with per-scenario breakdown.

    ``bad_action_rate`` is the fraction of predicted side-effecting
    ("action") tool calls that match no ground-truth call, 0 when no such
    call was predicted.  Tools absent from the registry have no side-effect
    classification and are excluded from the bad-action accounting.
    """

    precision: float
    recall: float
    f1: float
    bad_action_rate: float
    total_predicted: int = 0
    total_gold: int = 0
    total_matched: int = 0
    per_scenario: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "bad_action_rate": self.bad_action_rate,
            "total_predicted": self.total_predicted,
            "total_gold": self.total_gold,
            "total_matched": self.total_matched,
            "per_scenario": self.per_scenario,
        }


def _counts(matches: list[TurnMatch], registry: ToolRegistry) -> dict:
    matched = sum(len(m.matched) for m in matches)
    predicted = matched + sum(len(m.unmatched_predicted) for m in matches)
    gold = matched + sum(len(m.unmatched_gold) for m in matches)
    action_predicted = 0
    action_unmatched = 0
    for m in matches:
        for call, _ in m.matched:
            if registry.is_side_effecting(call.tool_name):
                action_predicted += 1
        for call in m.unmatched_predicted:
            if registry.is_side_effecting(call.tool_name):
                action_predicted += 1
                action_unmatched += 1
    return {
        "matched": matched,
        "predicted": predicted,
        "gold": gold,
        "action_predicted": action_predicted,
        "action_unmatched": action_unmatched,
    }


def compute_metrics(matches_by_scenario: dict[str, list[TurnMatch]], registry: ToolRegistry) -> MetricsReport:
    """Pool matching counts across scenarios into one report.

    Precision is matched-predicted over total predicted (0 when nothing was
    predicted), recall is matched-gold over total gold, and F1 follows from
    the two.
    """
    if not matches_by_scenario:
        raise ValueError("at least one scenario is required")
    totals = {"matched": 0, "predicted": 0, "gold": 0, "action_predicted": 0, "action_unmatched": 0}
    per_scenario = {}
    for scenario_id, matches in matches_by_scenario.items():
        counts = _counts(matches, registry)
        for key in totals:
            totals[key] += counts[key]
        sp = counts["matched"] / counts["predicted"] if counts["predicted"] else 0.0
        sr = counts["matched"] / counts["gold"] if counts["gold"] else 0.0
        per_scenario[scenario_id] = {
            "precision": sp,
            "recall": sr,
            "f1": f1_score(sp, sr),
            "bad_action_rate": (
                counts["action_unmatched"] / counts["action_predicted"] if counts["action_predicted"] else 0.0
            ),
            "predicted": counts["predicted"],
            "gold": counts["gold"],
            "matched": counts["matched"],
        }
    precision = totals["matched"] / totals["predicted"] if totals["predicted"] else 0.0
    recall = totals["matched"] / totals["gold"] if totals["gold"] else 0.0
    bad_action = totals["action_unmatched"] / totals["action_predicted"] if totals["action_predicted"] else 0.0
    return MetricsReport(
        precision=precision,
        recall=recall,
        f1=f1_score(precision, recall),
        bad_action_rate=bad_action,
        total_predicted=totals["predicted"],
        total_gold=totals["gold"],
        total_matched=totals["matched"],
        per_scenario=per_scenario,
    )


def metrics_csv(rows: list[dict]) -> str:
    """Render (method, aggregation) metric rows as CSV text."""
    if not rows:
        return ""
    fieldnames = list(rows[0].keys())
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=fieldnames)
    writer.writeheader()
    for row in rows:
        writer.writerow(row)
    return buffer.getvalue()
