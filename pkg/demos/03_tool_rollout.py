"""Teacher-forced evaluation of a tool-calling dialogue.

One bundled scenario is decoded twice: once with an agent that replays the
ground-truth behavior and once with an agent that fabricates account
credentials the user never provided.  Because evaluation is teacher-forced,
the second turn's context is identical in both runs; only the per-turn
predictions differ, which the precision/recall/F1 and bad-action metrics
then pick up.
"""

from agentsearch.tooltask import (
    ScriptedScenarioAgent,
    build_default_registry,
    compute_metrics,
    load_bundled_scenario,
    match_tool_calls,
    teacher_forced_rollout,
)


def evaluate(scenario, variant, registry):
    agent = ScriptedScenarioAgent(scenario, variant)
    predictions = teacher_forced_rollout(scenario, agent, registry)
    matches = []
    for prediction, turn in zip(predictions, scenario.turns):
        matches.append(
            match_tool_calls(prediction.predicted_tool_calls, [c for c, _ in turn.gold_tool_calls])
        )
    return predictions, compute_metrics({scenario.id: matches}, registry)


def main():
    registry = build_default_registry()
    scenario = load_bundled_scenario("new-account-meeting")
    print(f"scenario: {scenario.id}")
    print(f"user: {scenario.turns[0].user_utterance}")
    print(f"gold behavior: ask for the missing details ({len(scenario.turns[0].gold_tool_calls)} tool calls)\n")

    for variant in ("faithful", "hallucinating"):
        predictions, report = evaluate(scenario, variant, registry)
        print(f"--- {variant} agent ---")
        for prediction in predictions:
            for call in prediction.predicted_tool_calls:
                print(f"  called {call.tool_name}({call.arguments})")
            print(f"  completion: {prediction.completion_text!r}")
        print(
            f"  matched {report.total_matched} of {report.total_predicted} predicted"
            f" / {report.total_gold} gold calls"
        )
        print(
            f"  precision {report.precision:.3f}, recall {report.recall:.3f}, "
            f"f1 {report.f1:.3f}, bad-action rate {report.bad_action_rate:.3f}\n"
        )
    print("The gold behavior here is to ask a question, not to call tools, so")
    print("the faithful run has empty counts (rates default to zero on 0/0).")
    print("The hallucinating run registers an account with invented credentials;")
    print("all three calls are unmatched, and all three are side-effecting actions,")
    print("so the bad-action rate for this scenario is 1.0.")


if __name__ == "__main__":
    main()
