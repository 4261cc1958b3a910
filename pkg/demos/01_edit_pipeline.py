"""One natural-language edit, three ways through the pipeline.

The modifier agent receives a scene description and an instruction, and
answers in a fixed five-section format. This demo drives it with scripted
backends so everything runs offline: first a single pass, then a text
review loop that rejects the first attempt, then a run where the agent
calls the lane-anchor tool before answering.
"""

from __future__ import annotations

from scenaug.fixtures import single_lane_scenario
from scenaug.llm import ScriptedBackend
from scenaug.orchestrator import PipelineConfig, run_pipeline, transcript_to_text
from scenaug.prompts import Strategy

INSTRUCTION = (
    "add a parked vehicle in front of ego at an approx. distance 21.4m away, "
    "slightly left of the lane center"
)

ANSWER = """Insights:
The scenario consists of a single lane road with the ego vehicle traveling eastwards.
Summary:
The user wants one parked vehicle 21.4m ahead of ego, slightly left of the lane center.
Modification Dict:
{"Action": "add", "Modified_Agent": "Agent2", "Rationale": "user requested a parked vehicle"}
Modification Calculations:
Step 1: The lane runs east, so 21.4m ahead of ego at the origin is x = 21.4.
Step 2: An offset of 2.6m to the left of the centerline gives y = 2.6.
Modified Vectors:
{"Agent2": ["VEHICLE", 21.4, 2.6, 0.0, 2.0, 4.5, 0.0, "Lane1"]}
"""

REJECTION = (
    "Compliance: 4\nRealism: 3\nLogical Consistency: 4\n"
    "Feedback: a parked car this close to the center line would block the lane"
)
APPROVAL = "Compliance: 5\nRealism: 4\nLogical Consistency: 4"

TOOL_TURN = 'I need the exact lane point first.\nCALL lane_point("Lane1", 21.4)'


def main() -> None:
    scenario = single_lane_scenario()

    print("=" * 72)
    print("1. Single pass: the modifier answers once and we take the result.")
    print("=" * 72)
    outcome = run_pipeline(
        scenario, INSTRUCTION, PipelineConfig(sma_backend=ScriptedBackend([ANSWER]))
    )
    added = outcome.result.modified_vectors[0]
    print(f"status: {outcome.status.value}")
    print(f"summary: {outcome.result.summary}")
    print(f"new agent {added.id} at {added.center}, lane {added.lane_id}")

    print()
    print("=" * 72)
    print("2. Text review: a reviewer scores the edit; below 4.0 it goes back.")
    print("=" * 72)
    outcome = run_pipeline(
        scenario,
        INSTRUCTION,
        PipelineConfig(
            sma_backend=ScriptedBackend([ANSWER, ANSWER]),
            qa_backend=ScriptedBackend([REJECTION, APPROVAL]),
            strategy=Strategy.TQA,
        ),
    )
    print(f"status: {outcome.status.value} after {outcome.result.iterations} generations")
    for i, rating in enumerate(outcome.qa_history, start=1):
        verdict = "pass" if rating.passed else "fail"
        print(f"round {i}: scores {rating.scores} mean {rating.mean:.2f} -> {verdict}")

    print()
    print("=" * 72)
    print("3. Tool calling: the modifier asks for a lane anchor, then answers.")
    print("=" * 72)
    outcome = run_pipeline(
        scenario,
        INSTRUCTION,
        PipelineConfig(
            sma_backend=ScriptedBackend([TOOL_TURN, ANSWER]), strategy=Strategy.FC
        ),
    )
    print(f"status: {outcome.status.value}")
    print()
    print("full conversation:")
    print(transcript_to_text(outcome))


if __name__ == "__main__":
    main()
