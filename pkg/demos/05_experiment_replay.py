"""Run a small seeded experiment, then regenerate every aggregation offline.

Searches are expensive and selection strategies are cheap, so transcripts
store the full trees and ``replay`` recomputes any selection strategy
without a single model call.  This script runs a six-problem scripted study
once, then prints the accuracy of all selection strategies from the same
transcripts.
"""

import json
import tempfile
from pathlib import Path

from agentsearch.experiment import ExperimentConfig, build_report_rows, run_experiment
from agentsearch.tooltask.metrics import metrics_csv

GOLD = {f"q{i}": 7 * i for i in range(1, 7)}


def _plans():
    # Three nodes per tree (root + two refinements).  Four problems where
    # the majority answer is right, two where only a high-reward outlier is.
    plans = {}
    for i, (pid, gold) in enumerate(GOLD.items(), start=1):
        if i <= 4:
            plans[pid] = ([gold, gold, gold + 1], [0.5, 0.6, 0.9])
        else:
            plans[pid] = ([gold + 1, gold + 1, gold], [0.4, 0.3, 0.95])
    return plans


def build_config(tmp: Path) -> ExperimentConfig:
    plans = _plans()
    dataset = tmp / "problems.jsonl"
    rows = [
        {"id": pid, "question": f"Exercise {pid}: evaluate.", "answer": f"#### {gold}"}
        for pid, gold in GOLD.items()
    ]
    dataset.write_text("\n".join(json.dumps(r) for r in rows))
    agent_script = {
        f"Exercise {pid}:": [f"I get #### {a}" for a in answers] for pid, (answers, _) in plans.items()
    }
    critic_script = {}
    for pid, (_, rewards) in plans.items():
        entries = [f"Score: {int(200 * rewards[0] - 100)}"]
        for reward in rewards[1:]:
            entries.append("Could be tighter.")
            entries.append(f"Score: {int(200 * reward - 100)}")
        critic_script[f"Exercise {pid}:"] = entries
    return ExperimentConfig.from_dict(
        {
            "task": "math",
            "dataset": str(dataset),
            "search": {"algorithm": "mcts", "max_iterations": 2},
            "selection": {"strategy": "majority", "rng_seed": 0},
            "models": {
                "agent": {"kind": "scripted", "script": agent_script},
                "critic": {"kind": "scripted", "script": critic_script},
            },
            "runs": 1,
            "seeds": [1],
            "output_dir": str(tmp / "out"),
        }
    )


def main():
    with tempfile.TemporaryDirectory() as tmp_name:
        tmp = Path(tmp_name)
        config = build_config(tmp)
        report = run_experiment(config)
        print(f"search ran once; majority accuracy {report.aggregate['accuracy']['mean']:.3f}")
        print("transcripts:", *report.transcript_paths, sep="\n  ")
        print("\nreplaying every selection strategy from the same trees:\n")
        rows = build_report_rows(
            tmp / "out" / "transcripts",
            ["random", "majority", "max_reward:mean", "max_reward:max",
             "weighted_majority:mean", "weighted_majority:max"],
        )
        print(metrics_csv(rows))
        print("Majority is right on 4/6; max-reward trusts the scored outlier")
        print("and is right only on the other 2/6.  Weighted majority happens")
        print("to combine both signals and sweeps all six here.")


if __name__ == "__main__":
    main()
