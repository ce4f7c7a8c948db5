"""Experiment orchestration: seeded runs, aggregation, transcripts, replay.

A run evaluates every problem (math) or scenario (tool) once per seed,
writes one transcript file per seed, and aggregates per-run metrics into a
report carrying both the standard deviation and the standard error across
runs.  Transcripts embed the full search trees, so every selection strategy
can be recomputed offline later (``replay``) without a single model call.
"""

from __future__ import annotations

import hashlib
import json
import math as _math
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .feedback import FeedbackConfig, RuleBasedJudge
from .gateway import ModelEndpointConfig, ModelGateway, ResponseCache
from .math_task import (
    MathCritic,
    MathGenerator,
    MathProblem,
    extract_final_answer,
    ground_truth_stopper,
    load_problems,
    math_vote_key,
    parse_number,
    verify,
)
from .search import SearchConfig, SearchTree, run_search
from .selection import SelectionConfig, select
from .tooltask import (
    DirectToolAgent,
    SearchToolAgent,
    ToolCall,
    TurnMatch,
    build_default_registry,
    compute_metrics,
    load_bundled_scenarios,
    load_scenario_dir,
    load_scenario_file,
    match_tool_calls,
    parse_agent_response,
    teacher_forced_rollout,
    tool_vote_key,
)
from .tooltask.metrics import metrics_csv
from .tooltask.simulator import SPECIAL_TOOLS

TASKS = ("math", "tool")
STOPPING_RULES = ("none", "ground_truth")
JUDGES = ("model", "rule")


class ConfigError(ValueError):
    """Validation failure naming the offending config field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field_name = field_name


@dataclass
class ExperimentConfig:
    """Full specification of one experiment."""

    task: str
    dataset: str
    models: dict[str, ModelEndpointConfig]
    search: Optional[SearchConfig] = None
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    feedback: FeedbackConfig = field(default_factory=FeedbackConfig)
    stopping: str = "none"
    runs: int = 5
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5])
    output_dir: str = "out"
    workers: int = 1
    cache_enabled: bool = False
    cache_path: Optional[str] = None
    judge: str = "model"
    turn_budget: int = 8

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError("task", f"must be one of {TASKS}")
        if self.stopping not in STOPPING_RULES:
            raise ConfigError("stopping", f"must be one of {STOPPING_RULES}")
        if self.stopping == "ground_truth" and self.task != "math":
            raise ConfigError("stopping", "ground_truth stopping is only valid with task=math")
        if self.stopping == "ground_truth" and (self.search is None or self.search.algorithm != "mcts"):
            raise ConfigError("stopping", "ground_truth stopping requires MCTS search")
        if self.runs != len(self.seeds):
            raise ConfigError("runs", f"runs={self.runs} does not match {len(self.seeds)} seeds")
        if self.runs < 1:
            raise ConfigError("runs", "at least one run is required")
        if "agent" not in self.models:
            raise ConfigError("models", "an 'agent' model endpoint is required")
        if self.search is not None and "critic" not in self.models:
            raise ConfigError("models", "search requires a 'critic' model endpoint")
        if self.feedback.mode == "module" and self.judge == "model" and "judge" not in self.models:
            raise ConfigError("models", "module feedback with a model judge requires a 'judge' endpoint")
        if self.judge not in JUDGES:
            raise ConfigError("judge", f"must be one of {JUDGES}")
        if self.workers < 1:
            raise ConfigError("workers", "must be >= 1")
        if self.turn_budget < 1:
            raise ConfigError("turn_budget", "must be >= 1")
        if not self.dataset:
            raise ConfigError("dataset", "a dataset path is required")

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            models = {}
            for role, cfg in raw.get("models", {}).items():
                cfg = dict(cfg)
                # Unstated sampling temperatures default to exploratory
                # generation and deterministic judging.
                cfg.setdefault("temperature", 1.0 if role == "agent" else 0.0)
                models[role] = ModelEndpointConfig.from_dict(cfg)
        except (TypeError, ValueError) as exc:
            raise ConfigError("models", str(exc)) from None
        try:
            search = SearchConfig.from_dict(raw["search"]) if raw.get("search") else None
        except (TypeError, ValueError) as exc:
            raise ConfigError("search", str(exc)) from None
        try:
            selection = SelectionConfig.from_dict(raw["selection"]) if raw.get("selection") else SelectionConfig()
        except (TypeError, ValueError) as exc:
            raise ConfigError("selection", str(exc)) from None
        try:
            fb_raw = raw.get("feedback", {})
            feedback = FeedbackConfig(
                mode=fb_raw.get("mode", "generic"),
                score_min=fb_raw.get("score_min", -100),
                score_max=fb_raw.get("score_max", 100),
            )
        except ValueError as exc:
            raise ConfigError("feedback", str(exc)) from None
        cache = raw.get("cache", {})
        config = cls(
            task=raw.get("task", ""),
            dataset=raw.get("dataset", ""),
            models=models,
            search=search,
            selection=selection,
            feedback=feedback,
            stopping=raw.get("stopping", "none"),
            runs=raw.get("runs", len(raw.get("seeds", [1, 2, 3, 4, 5]))),
            seeds=list(raw.get("seeds", [1, 2, 3, 4, 5])),
            output_dir=raw.get("output_dir", "out"),
            workers=raw.get("workers", 1),
            cache_enabled=bool(cache.get("enabled", False)),
            cache_path=cache.get("path"),
            judge=raw.get("judge", "model"),
            turn_budget=raw.get("turn_budget", 8),
        )
        config.validate()
        return config

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "dataset": self.dataset,
            "models": {role: cfg.to_dict() for role, cfg in self.models.items()},
            "search": self.search.to_dict() if self.search else None,
            "selection": self.selection.to_dict(),
            "feedback": {
                "mode": self.feedback.mode,
                "score_min": self.feedback.score_min,
                "score_max": self.feedback.score_max,
            },
            "stopping": self.stopping,
            "runs": self.runs,
            "seeds": list(self.seeds),
            "output_dir": self.output_dir,
            "workers": self.workers,
            "cache": {"enabled": self.cache_enabled, "path": self.cache_path},
            "judge": self.judge,
            "turn_budget": self.turn_budget,
        }

    def semantic_dict(self) -> dict:
        """The fields that influence results (hash input); output paths,
        worker counts, and cache settings are excluded."""
        doc = self.to_dict()
        for key in ("output_dir", "workers", "cache"):
            doc.pop(key)
        return doc

    def config_hash(self) -> str:
        blob = json.dumps(self.semantic_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    def method_label(self) -> str:
        if self.search is None:
            return "no_search"
        return f"{self.search.algorithm}+{self.feedback.mode}"

    def aggregation_label(self) -> str:
        if self.search is None:
            return "none"
        sel = self.selection
        if sel.strategy in ("max_reward", "weighted_majority"):
            return f"{sel.strategy}({sel.node_reward_agg})"
        return sel.strategy


def _item_seed(base_seed: int, run_seed: int, item_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{run_seed}:{item_id}".encode("utf-8")).hexdigest()
    return int(digest[:8], 16)


def _build_gateway(config: ExperimentConfig, cache: ResponseCache | None) -> ModelGateway:
    return ModelGateway(config.models, cache=cache)


# ---------------------------------------------------------------------------
# Math task
# ---------------------------------------------------------------------------


def _run_math_item(config: ExperimentConfig, problem: MathProblem, run_seed: int, cache) -> dict:
    models = _build_gateway(config, cache)
    item: dict = {
        "id": problem.id,
        "question": problem.question,
        "gold_answer": problem.gold_answer.canonical,
    }
    if config.search is None:
        solution = MathGenerator(models).initial(problem.question)
        answer = extract_final_answer(solution)
        item.update(
            {
                "mode": "no_search",
                "response": solution,
                "answer": answer.canonical if answer else None,
                "correct": verify(answer, problem),
            }
        )
        return item
    generator = MathGenerator(models)
    critic = MathCritic(models, config.feedback)
    stop = ground_truth_stopper(problem) if config.stopping == "ground_truth" else None
    tree = run_search(problem.question, generator, critic, config.search, stop=stop, seed=run_seed)
    item["mode"] = "search"
    item["tree"] = json.loads(tree.to_json())
    if tree.early_stop_node is not None:
        answer = extract_final_answer(tree.nodes[tree.early_stop_node].solution)
        item.update(
            {
                "early_stop": True,
                "selection": None,
                "answer": answer.canonical if answer else None,
                "correct": verify(answer, problem),
            }
        )
        return item
    sel_config = SelectionConfig(
        strategy=config.selection.strategy,
        node_reward_agg=config.selection.node_reward_agg,
        rng_seed=_item_seed(config.selection.rng_seed, run_seed, problem.id),
    )
    outcome = select(tree, sel_config, math_vote_key)
    answer = parse_number(outcome.key) if outcome.key is not None else None
    item.update(
        {
            "early_stop": False,
            "selection": outcome.to_dict(),
            "answer": answer.canonical if answer else None,
            "correct": verify(answer, problem),
        }
    )
    return item


def _run_math_seed(config: ExperimentConfig, problems: list[MathProblem], run_seed: int, cache) -> dict:
    items = []
    failures = 0

    def one(problem: MathProblem) -> dict:
        return _run_math_item(config, problem, run_seed, cache)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_guarded(one), problems))
    else:
        results = [_guarded(one)(p) for p in problems]
    for problem, result in zip(problems, results):
        if "error" in result:
            failures += 1
            result.setdefault("id", problem.id)
            result["correct"] = False
        items.append(result)
    accuracy = sum(1 for item in items if item.get("correct")) / len(items)
    return {
        "seed": run_seed,
        "items": items,
        "metrics": {"accuracy": accuracy},
        "failures": failures,
    }


# ---------------------------------------------------------------------------
# Tool task
# ---------------------------------------------------------------------------


def _load_scenarios(dataset: str):
    if dataset == "bundled":
        return load_bundled_scenarios()
    path = Path(dataset)
    if path.is_dir():
        return load_scenario_dir(path)
    return [load_scenario_file(path)]


def _match_turn(prediction, turn) -> TurnMatch:
    gold_calls = [call for call, _ in turn.gold_tool_calls]
    return match_tool_calls(prediction.predicted_tool_calls, gold_calls)


def _run_tool_item(config: ExperimentConfig, scenario, run_seed: int, cache, registry) -> dict:
    models = _build_gateway(config, cache)
    judge = RuleBasedJudge() if config.judge == "rule" else None
    if config.search is None:
        agent = DirectToolAgent(models)
    else:
        sel_config = SelectionConfig(
            strategy=config.selection.strategy,
            node_reward_agg=config.selection.node_reward_agg,
            rng_seed=_item_seed(config.selection.rng_seed, run_seed, scenario.id),
        )
        agent = SearchToolAgent(
            models,
            config.search,
            sel_config,
            feedback_config=config.feedback,
            judge=judge,
            seed=run_seed,
        )
    predictions = teacher_forced_rollout(scenario, agent, registry, budget=config.turn_budget)
    turns = []
    for turn, prediction in zip(scenario.turns, predictions):
        turn_match = _match_turn(prediction, turn)
        turns.append(
            {
                "context": prediction.context,
                "gold_calls": [call.to_dict() for call, _ in turn.gold_tool_calls],
                "steps": prediction.steps,
                "predicted_calls": [call.to_dict() for call in prediction.predicted_tool_calls],
                "completion_text": prediction.completion_text,
                "truncated": prediction.truncated,
                "match": turn_match.to_dict(),
            }
        )
    return {"id": scenario.id, "turns": turns}


def _run_tool_seed(config: ExperimentConfig, scenarios, run_seed: int, cache, registry) -> dict:
    items = []
    failures = 0

    def one(scenario) -> dict:
        return _run_tool_item(config, scenario, run_seed, cache, registry)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_guarded(one), scenarios))
    else:
        results = [_guarded(one)(s) for s in scenarios]
    matches_by_scenario: dict[str, list[TurnMatch]] = {}
    for scenario, result in zip(scenarios, results):
        if "error" in result:
            failures += 1
            result.setdefault("id", scenario.id)
            # A failed rollout predicts nothing; all gold calls go unmatched.
            matches_by_scenario[scenario.id] = [
                TurnMatch(unmatched_gold=[call for call, _ in turn.gold_tool_calls])
                for turn in scenario.turns
            ]
        else:
            matches_by_scenario[scenario.id] = [
                TurnMatch.from_dict(turn["match"]) for turn in result["turns"]
            ]
        items.append(result)
    report = compute_metrics(matches_by_scenario, registry)
    return {
        "seed": run_seed,
        "items": items,
        "metrics": {
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "bad_action_rate": report.bad_action_rate,
        },
        "failures": failures,
    }


def _guarded(fn):
    def wrapped(item):
        try:
            return fn(item)
        except Exception as exc:  # noqa: BLE001 - mid-run failures must not kill the run
            return {"error": f"{type(exc).__name__}: {exc}"}

    return wrapped


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class RunReport:
    """Per-run metrics plus aggregates recomputable from them."""

    config: dict
    config_hash: str
    task: str
    method: str
    aggregation: str
    per_run: list[dict]
    aggregate: dict
    transcript_paths: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "config_hash": self.config_hash,
            "task": self.task,
            "method": self.method,
            "aggregation": self.aggregation,
            "per_run": self.per_run,
            "aggregate": self.aggregate,
            "transcript_paths": self.transcript_paths,
        }

    def csv_rows(self) -> list[dict]:
        row = {"task": self.task, "method": self.method, "aggregation": self.aggregation}
        for metric in sorted(self.aggregate):
            stats = self.aggregate[metric]
            row[f"{metric}_mean"] = round(stats["mean"], 6)
            row[f"{metric}_std"] = round(stats["std"], 6)
            row[f"{metric}_sem"] = round(stats["sem"], 6)
        return [row]


def aggregate_metrics(per_run: list[dict]) -> dict:
    """Mean, standard deviation, and standard error for every metric.

    Both spread measures are emitted and labeled since reported "plus/minus"
    figures are ambiguous between the two.
    """
    aggregate: dict[str, dict] = {}
    if not per_run:
        return aggregate
    for metric in per_run[0]["metrics"]:
        values = [run["metrics"][metric] for run in per_run]
        mean = statistics.fmean(values)
        std = statistics.stdev(values) if len(values) > 1 else 0.0
        sem = std / _math.sqrt(len(values)) if len(values) > 1 else 0.0
        aggregate[metric] = {"mean": mean, "std": std, "sem": sem, "values": values}
    return aggregate


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Execute every seeded run, write transcripts and reports, return the report."""
    config.validate()
    out_dir = Path(config.output_dir)
    transcripts_dir = out_dir / "transcripts"
    transcripts_dir.mkdir(parents=True, exist_ok=True)
    cache = ResponseCache(config.cache_path) if config.cache_enabled else None
    per_run = []
    transcript_paths = []
    if config.task == "math":
        problems = load_problems(config.dataset)
        runs = [_run_math_seed(config, problems, seed, cache) for seed in config.seeds]
    else:
        scenarios = _load_scenarios(config.dataset)
        registry = build_default_registry()
        runs = [_run_tool_seed(config, scenarios, seed, cache, registry) for seed in config.seeds]
    for run in runs:
        transcript = {
            "config": config.to_dict(),
            "config_hash": config.config_hash(),
            "task": config.task,
            "seed": run["seed"],
            "items": run["items"],
            "metrics": run["metrics"],
            "failures": run["failures"],
        }
        path = transcripts_dir / f"run_{run['seed']}.json"
        path.write_text(json.dumps(transcript, sort_keys=True, indent=1), encoding="utf-8")
        transcript_paths.append(str(path))
        per_run.append({"seed": run["seed"], "metrics": run["metrics"], "failures": run["failures"]})
    report = RunReport(
        config=config.to_dict(),
        config_hash=config.config_hash(),
        task=config.task,
        method=config.method_label(),
        aggregation=config.aggregation_label(),
        per_run=per_run,
        aggregate=aggregate_metrics(per_run),
        transcript_paths=transcript_paths,
    )
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    (out_dir / "report.csv").write_text(metrics_csv(report.csv_rows()), encoding="utf-8")
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), sort_keys=True, indent=1), encoding="utf-8")
    return report


# ---------------------------------------------------------------------------
# Replay
# ---------------------------------------------------------------------------


def _transcript_files(path: str | Path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("run_*.json"))
        if not files:
            files = sorted((p / "transcripts").glob("run_*.json"))
        if not files:
            raise FileNotFoundError(f"no run_*.json transcripts under {p}")
        return files
    return [p]


def _replay_math_item(item: dict, selection: SelectionConfig, run_seed: int) -> dict:
    gold = parse_number(item["gold_answer"])
    out = {"id": item["id"], "gold_answer": item["gold_answer"]}
    if item.get("mode") == "no_search":
        out.update({"answer": item.get("answer"), "correct": bool(item.get("correct"))})
        return out
    tree = SearchTree.from_json(json.dumps(item["tree"]))
    if tree.early_stop_node is not None:
        answer = extract_final_answer(tree.nodes[tree.early_stop_node].solution)
    else:
        sel = SelectionConfig(
            strategy=selection.strategy,
            node_reward_agg=selection.node_reward_agg,
            rng_seed=_item_seed(selection.rng_seed, run_seed, item["id"]),
        )
        outcome = select(tree, sel, math_vote_key)
        out["selection"] = outcome.to_dict()
        answer = parse_number(outcome.key) if outcome.key is not None else None
    out["answer"] = answer.canonical if answer else None
    out["correct"] = answer is not None and gold is not None and answer.value == gold.value
    return out


def _replay_tool_item(item: dict, selection: SelectionConfig, run_seed: int, registry) -> list[TurnMatch]:
    matches = []
    for turn in item["turns"]:
        predicted = []
        for step in turn["steps"]:
            if step.get("tree"):
                tree = SearchTree.from_json(step["tree"])
                sel = SelectionConfig(
                    strategy=selection.strategy,
                    node_reward_agg=selection.node_reward_agg,
                    rng_seed=_item_seed(selection.rng_seed, run_seed, item["id"]),
                )
                outcome = select(tree, sel, tool_vote_key)
                chosen = tree.nodes[outcome.chosen_node].solution if outcome.chosen_node is not None else ""
            else:
                chosen = step["chosen"]
            call = parse_agent_response(chosen)
            if call is None or call.tool_name in SPECIAL_TOOLS:
                break
            predicted.append(call)
        gold = [ToolCall.from_dict(c) for c in turn["gold_calls"]]
        matches.append(match_tool_calls(predicted, gold))
    return matches


def replay(transcript_path: str | Path, selection: SelectionConfig | None = None) -> RunReport:
    """Recompute selection and metrics from stored transcripts, offline.

    With no override, the stored selection config is reused and the metrics
    must reproduce the original report.  An override recomputes every
    selection-dependent quantity from the stored trees; nothing else changes
    and no model is ever invoked.
    """
    files = _transcript_files(transcript_path)
    first = json.loads(files[0].read_text(encoding="utf-8"))
    stored_config = first["config"]
    task = first["task"]
    sel = selection or SelectionConfig.from_dict(stored_config["selection"])
    per_run = []
    registry = build_default_registry() if task == "tool" else None
    for file in files:
        transcript = json.loads(file.read_text(encoding="utf-8"))
        run_seed = transcript["seed"]
        if task == "math":
            replayed = [
                _replay_math_item(item, sel, run_seed)
                for item in transcript["items"]
                if "error" not in item
            ]
            errored = sum(1 for item in transcript["items"] if "error" in item)
            total = len(replayed) + errored
            accuracy = sum(1 for r in replayed if r["correct"]) / total if total else 0.0
            per_run.append({"seed": run_seed, "metrics": {"accuracy": accuracy}, "failures": errored})
        else:
            matches_by_scenario = {}
            errored = 0
            for item in transcript["items"]:
                if "error" in item:
                    errored += 1
                    continue
                matches_by_scenario[item["id"]] = _replay_tool_item(item, sel, run_seed, registry)
            report = compute_metrics(matches_by_scenario, registry)
            per_run.append(
                {
                    "seed": run_seed,
                    "metrics": {
                        "precision": report.precision,
                        "recall": report.recall,
                        "f1": report.f1,
                        "bad_action_rate": report.bad_action_rate,
                    },
                    "failures": errored,
                }
            )
    method = "no_search" if stored_config.get("search") is None else (
        f"{stored_config['search']['algorithm']}+{stored_config['feedback']['mode']}"
    )
    if stored_config.get("search") is None:
        aggregation = "none"
    elif sel.strategy in ("max_reward", "weighted_majority"):
        aggregation = f"{sel.strategy}({sel.node_reward_agg})"
    else:
        aggregation = sel.strategy
    return RunReport(
        config=stored_config,
        config_hash=first["config_hash"],
        task=task,
        method=method,
        aggregation=aggregation,
        per_run=per_run,
        aggregate=aggregate_metrics(per_run),
    )


def parse_strategy_spec(spec: str) -> SelectionConfig:
    """Parse "majority" or "max_reward:max" style strategy specs."""
    if ":" in spec:
        strategy, agg = spec.split(":", 1)
    else:
        strategy, agg = spec, "mean"
    return SelectionConfig(strategy=strategy.strip(), node_reward_agg=agg.strip())


def build_report_rows(transcript_path: str | Path, strategy_specs: list[str]) -> list[dict]:
    """One CSV row per requested (method, aggregation) combination."""
    rows = []
    for spec in strategy_specs:
        report = replay(transcript_path, selection=parse_strategy_spec(spec))
        rows.extend(report.csv_rows())
    return rows
