"""Math word-problem task: dataset ingestion, answer extraction, verification.

Answers are compared as exact canonical decimals (no tolerance): "1,234",
"1234" and "1234.0" all denote the same number.  Extraction prefers an
explicit ``#### <number>`` marker and falls back to the last number token in
free-form text, a documented heuristic for unformatted model output.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Optional

from .feedback import FeedbackConfig, FeedbackResult, critique_and_score, generate_critique, load_prompt, render_prompt
from .gateway import ChatMessage, ModelGateway

# Optional currency prefix ($, pound, euro), digits with thousands commas,
# optional decimal part.
_NUMBER_TOKEN_RE = re.compile(r"[-+]?[\$£€]?\d[\d,]*(?:\.\d+)?")
_MARKER_RE = re.compile(r"####\s*([^\n]*)")


@dataclass(frozen=True)
class CanonicalNumber:
    """Exact decimal wrapper whose equality ignores formatting differences."""

    value: Decimal

    @property
    def canonical(self) -> str:
        """Plain-notation string with trailing zeros stripped (idempotent)."""
        text = format(self.value.normalize(), "f")
        return "0" if text in ("-0", "0") else text

    def __str__(self) -> str:
        return self.canonical


def parse_number(token: str) -> Optional[CanonicalNumber]:
    """Parse one numeric token, stripping commas, currency, and a trailing dot."""
    cleaned = token.strip().rstrip(".")
    cleaned = re.sub(r"[,\$£€\s]", "", cleaned)
    if not cleaned:
        return None
    try:
        return CanonicalNumber(Decimal(cleaned))
    except InvalidOperation:
        return None


def extract_final_answer(solution_text: str) -> Optional[CanonicalNumber]:
    """Pull the final numeric answer out of a solution.

    A ``#### <number>`` marker wins when present; otherwise the last number
    token in the text is used.  Returns None when extraction fails.
    """
    markers = _MARKER_RE.findall(solution_text)
    if markers:
        tokens = _NUMBER_TOKEN_RE.findall(markers[-1])
        return parse_number(tokens[0]) if tokens else None
    tokens = _NUMBER_TOKEN_RE.findall(solution_text)
    if not tokens:
        return None
    return parse_number(tokens[-1])


@dataclass
class MathProblem:
    """One problem with its gold answer already canonicalized."""

    id: str
    question: str
    gold_answer: CanonicalNumber


def verify(answer: Optional[CanonicalNumber], problem: MathProblem) -> bool:
    """Exact canonical equality against the gold answer."""
    return answer is not None and answer.value == problem.gold_answer.value


def score_accuracy(results: list[tuple[MathProblem, Optional[CanonicalNumber]]]) -> float:
    """Fraction of problems whose selected answer verifies.

    Problems with failed extraction count as incorrect.
    """
    if not results:
        raise ValueError("cannot score an empty result list")
    correct = sum(1 for problem, answer in results if verify(answer, problem))
    return correct / len(results)


def load_problems(path: str | Path) -> list[MathProblem]:
    """Read a line-delimited JSON dataset of {id?, question, answer} records.

    The ``answer`` field may be a bare number or a worked solution ending in
    a ``#### <number>`` marker, so public GSM8K-format files drop in without
    conversion.  Records without an ``id`` get one from their line number.
    """
    problems = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            record = json.loads(line)
            gold = extract_final_answer(str(record["answer"]))
            if gold is None:
                raise ValueError(f"line {lineno}: answer field contains no parseable number")
            problems.append(
                MathProblem(
                    id=str(record.get("id", f"line-{lineno}")),
                    question=record["question"],
                    gold_answer=gold,
                )
            )
    return problems


def ground_truth_stopper(problem: MathProblem) -> Callable[[str], bool]:
    """Early-stopping rule: accept a solution whose extracted answer verifies."""

    def stop(solution_text: str) -> bool:
        return verify(extract_final_answer(solution_text), problem)

    return stop


def math_vote_key(node) -> Optional[str]:
    """Vote key for answer aggregation: the canonical extracted number."""
    answer = extract_final_answer(node.solution)
    return answer.canonical if answer is not None else None


class MathGenerator:
    """Agent adapter producing initial solutions and critique-guided rewrites."""

    def __init__(self, models: ModelGateway):
        self.models = models
        self._system = load_prompt("math_system")

    def initial(self, problem: str) -> str:
        messages = [
            ChatMessage(role="system", content=self._system),
            ChatMessage(role="user", content=render_prompt("math_initial_request", {"problem": problem})),
        ]
        return self.models.complete("agent", messages).text

    def refine(self, problem: str, solution: str, critique: str) -> str:
        messages = [
            ChatMessage(role="system", content=self._system),
            ChatMessage(
                role="user",
                content=render_prompt(
                    "math_refine_request",
                    {"problem": problem, "solution": solution, "critique": critique},
                ),
            ),
        ]
        return self.models.complete("agent", messages).text


class MathCritic:
    """Critic adapter: plain critiques plus score-line feedback."""

    def __init__(self, models: ModelGateway, config: FeedbackConfig | None = None):
        self.models = models
        self.config = config or FeedbackConfig()

    def critique(self, problem: str, solution: str) -> str:
        return generate_critique(solution, problem, self.models, self.config)

    def score(self, problem: str, solution: str) -> FeedbackResult:
        return critique_and_score(solution, problem, self.models, self.config)
