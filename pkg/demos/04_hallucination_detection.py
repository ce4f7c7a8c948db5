"""Per-parameter grounding checks on proposed tool calls.

The detector asks, parameter by parameter, whether a value was actually
provided by the user (or is directly deducible from the conversation
metadata).  One ungrounded parameter marks the whole response as
hallucinated, and the verdict is appended to the critic prompt so the
reward reflects it.
"""

from agentsearch.feedback import (
    GroundingContext,
    RuleBasedJudge,
    build_feedback_prompt,
    detect_hallucination,
)
from agentsearch.tooltask import ToolCall

GROUNDING = GroundingContext(
    user_utterances=[
        "Hey I think someone hacked my account. I can't log in anymore",
        "It's mstein",
    ],
    metadata={"location": "London", "timestamp": "2023-09-11 09:00:00"},
)

CALLS = [
    ToolCall("SendVerificationCode", {"username": "mstein", "email": "mark@example.com"}),
    ToolCall("SendVerificationCode", {"username": "mstein", "email": "steinki89@fexter.com"}),
]


def main():
    judge = RuleBasedJudge()
    print("user said:", " / ".join(GROUNDING.user_utterances), "\n")
    for call in CALLS:
        verdict = detect_hallucination(call, GROUNDING, judge)
        print(f"{call.tool_name}({call.arguments})")
        for check in verdict.per_parameter:
            status = "grounded" if check.grounded else "HALLUCINATED"
            print(f"  {check.name}: {status}")
        print(f"  overall hallucinated: {verdict.overall_hallucinated}\n")

    # The second call's email never appeared in the conversation either, so
    # both calls are flagged here; once the user states the address, the
    # same call comes out clean.
    GROUNDING.user_utterances.append("It should be steinki89@fexter.com")
    verdict = detect_hallucination(CALLS[1], GROUNDING, judge)
    print("after the user states the email, the same call is clean:", not verdict.overall_hallucinated)

    prompt = build_feedback_prompt(
        "module",
        {
            "context": "conversation...",
            "solution": "SendVerificationCode(...)",
            "score_min": -100,
            "score_max": 100,
            "verdict": detect_hallucination(CALLS[0], GROUNDING, judge),
        },
    )
    print("\ncritic prompt tail (verdict section):")
    print("\n".join(prompt.splitlines()[-5:]))


if __name__ == "__main__":
    main()
