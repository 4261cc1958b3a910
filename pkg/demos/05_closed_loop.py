"""Stress-testing scenes in the closed-loop planner benchmark.

The planner proposes 45 trajectory rollouts per second of simulated time
(five speed fractions times nine lateral offsets), filters the ones that
would collide or leave the road, and follows the best survivor. Each
scene then gets a driving score from time-to-collision, progress, and
comfort, with a hard zero on any collision or offroad event.
"""

from __future__ import annotations

import dataclasses
import math

from scenaug.fixtures import single_lane_scenario
from scenaug.scenario import AgentState, AgentType
from scenaug.simloop import (
    SimConfig,
    derive_route,
    driving_score,
    generate_proposals,
    run_closed_loop,
    score_summary,
    select_proposal,
)


def _vehicle(agent_id, center, heading=0.0, velocity=0.0):
    return AgentState(
        id=agent_id,
        agent_type=AgentType.VEHICLE,
        center=center,
        heading=heading,
        width=2.0,
        length=4.5,
        velocity=velocity,
    )


def _with_agents(scenario, extra):
    return dataclasses.replace(scenario, agents=scenario.agents + tuple(extra))


def main() -> None:
    cfg = SimConfig()

    free = single_lane_scenario(lane_length_m=100.0, ego_velocity=13.889)

    parked = _with_agents(
        single_lane_scenario(lane_length_m=100.0, ego_velocity=8.0),
        [_vehicle("Parked1", (25.0, 0.0))],
    )
    route = derive_route(parked)
    chosen = select_proposal(generate_proposals(parked, route, cfg), parked, cfg)
    print(
        "parked-car scene: the planner swerves to lateral offset "
        f"{chosen.lateral_offset_m:+.0f} m at speed fraction {chosen.speed_fraction}"
    )

    oncoming = _with_agents(
        single_lane_scenario(lane_length_m=100.0, ego_velocity=5.0),
        [
            _vehicle(f"On{i}", (60.0, lat), heading=math.pi, velocity=10.0)
            for i, lat in enumerate((-3.0, 0.0, 3.0))
        ],
    )

    scores = {}
    for name, scenario in (("free-road", free), ("parked-car", parked), ("oncoming-wall", oncoming)):
        trace = run_closed_loop(scenario, cfg)
        scores[name] = driving_score(trace, derive_route(scenario), cfg)
        for event in trace.events:
            agent = f" with {event.agent_id}" if event.agent_id else ""
            print(f"{name}: {event.kind.value.lower()}{agent} at t={event.time_s:.1f}s")
    print()
    print(score_summary(scores))


if __name__ == "__main__":
    main()
