"""Scoring generated placements against a reference edit.

Two candidate edits answer the same instruction. The first lands exactly on
the reference, the second drifts. The displacement report matches agents by
minimum total center distance (a Hungarian assignment), and the error
classifier attaches a coarse label to every agent that is off.
"""

from __future__ import annotations

from scenaug.evaluation import classify_errors, displacement_error
from scenaug.fixtures import single_lane_scenario
from scenaug.scenario import AgentState, AgentType


def _vehicle(agent_id: str, center, heading: float = 0.0) -> AgentState:
    return AgentState(
        id=agent_id,
        agent_type=AgentType.VEHICLE,
        center=center,
        heading=heading,
        width=2.0,
        length=4.5,
        velocity=0.0,
        lane_id="Lane1",
    )


def main() -> None:
    scenario = single_lane_scenario()
    reference = [_vehicle("Ref1", (21.4, 2.6))]

    exact = [_vehicle("Gen1", (21.4, 2.6))]
    drifted = [_vehicle("Gen1", (24.4, 6.6))]  # 3 m long, 4 m lateral: 5 m off
    for name, generated in (("exact", exact), ("drifted", drifted)):
        report = displacement_error(generated, reference)
        print(f"{name}: mean displacement {report.mean_m:.3f} m over {report.matched} match(es)")
        for gen_id, ref_id, distance in report.pairs:
            print(f"  {gen_id} -> {ref_id}: {distance:.3f} m")

    print()
    print("error labels for the drifted edit:")
    labels = classify_errors(drifted, reference, scenario)
    for label in labels:
        print(f"  {label.agent_id}: {label.category.value} ({label.detail})")

    print()
    print("a surplus agent shows up as unmatched:")
    surplus = exact + [_vehicle("Gen2", (40.0, -2.0))]
    report = displacement_error(surplus, reference)
    print(
        f"  matched {report.matched}, unmatched generated {report.unmatched_generated}, "
        f"unmatched reference {report.unmatched_reference}"
    )


if __name__ == "__main__":
    main()
