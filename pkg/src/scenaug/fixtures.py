"""Synthetic scenario builders used by the demos and the test suite.

These are small, fully deterministic scenes with quantized coordinates so
they survive the 3-decimal serialization round trip bit-for-bit.
"""

from __future__ import annotations

import random

from .scenario import (
    AgentState,
    AgentType,
    Area,
    AreaKind,
    Lane,
    LaneConnector,
    LaneGeometry,
    RelativeDirection,
    Scenario,
    ScenarioType,
    TrafficLightState,
    TurnType,
)


def straight_lane_polyline(length_m: float = 100.0, spacing_m: float = 5.0) -> tuple:
    """Eastbound centerline from the origin, sampled on exact multiples."""
    n = int(length_m / spacing_m)
    pts = [(i * spacing_m, 0.0) for i in range(n + 1)]
    if pts[-1][0] < length_m:
        pts.append((length_m, 0.0))
    return tuple(pts)


def single_lane_scenario(
    scenario_id: str = "single-lane-east",
    lane_length_m: float = 100.0,
    ego_velocity: float = 0.0,
    with_walkway: bool = True,
) -> Scenario:
    """One eastbound lane with the ego at its start; the canonical demo scene."""
    lane = Lane(
        id="Lane1",
        travel_direction="Eastwards",
        relative_direction_to_ego=RelativeDirection.SAME,
        width=3.5,
        speed_limit=13.889,
        geometry=LaneGeometry(polyline=straight_lane_polyline(lane_length_m)),
    )
    ego = AgentState(
        id="Agent1",
        agent_type=AgentType.EGO_VEHICLE,
        center=(0.0, 0.0),
        heading=0.0,
        width=2.0,
        length=4.5,
        velocity=ego_velocity,
        lane_id="Lane1",
    )
    areas = [
        Area(
            id="Area1",
            kind=AreaKind.DRIVABLE,
            boundary=((-10.0, -6.0), (lane_length_m + 10.0, -6.0),
                      (lane_length_m + 10.0, 6.0), (-10.0, 6.0)),
        )
    ]
    if with_walkway:
        areas.append(
            Area(
                id="Area2",
                kind=AreaKind.WALKWAY,
                boundary=((-10.0, 6.0), (lane_length_m + 10.0, 6.0),
                          (lane_length_m + 10.0, 9.0), (-10.0, 9.0)),
            )
        )
    return Scenario(
        scenario_id=scenario_id,
        scenario_type=ScenarioType.PARKED_VEHICLE_NUDGE,
        agents=(ego,),
        lanes=(lane,),
        areas=tuple(areas),
    )


def curved_connector_scenario(scenario_id: str = "turn-with-connector") -> Scenario:
    """Two lanes joined by a curved connector, for geometry and routing demos."""
    east = Lane(
        id="Lane1",
        travel_direction="Eastwards",
        relative_direction_to_ego=RelativeDirection.SAME,
        width=3.5,
        speed_limit=13.889,
        geometry=LaneGeometry(polyline=straight_lane_polyline(40.0)),
    )
    north = Lane(
        id="Lane2",
        travel_direction="Northwards",
        relative_direction_to_ego=RelativeDirection.CROSSING,
        width=3.5,
        speed_limit=8.333,
        geometry=LaneGeometry(polyline=tuple((60.0, 20.0 + 5.0 * i) for i in range(9))),
    )
    connector = LaneConnector(
        id="Conn1",
        from_lane="Lane1",
        to_lane="Lane2",
        traffic_light_state=TrafficLightState.GREEN,
        turn_type=TurnType.LEFT,
        speed_limit=8.333,
        geometry=LaneGeometry(bezier=((40.0, 0.0), (51.0, 0.0), (60.0, 9.0), (60.0, 20.0))),
    )
    ego = AgentState(
        id="Agent1",
        agent_type=AgentType.EGO_VEHICLE,
        center=(0.0, 0.0),
        heading=0.0,
        width=2.0,
        length=4.5,
        velocity=5.0,
        lane_id="Lane1",
    )
    drivable = Area(
        id="Area1",
        kind=AreaKind.DRIVABLE,
        boundary=((-10.0, -6.0), (66.0, -6.0), (66.0, 62.0), (54.0, 62.0),
                  (54.0, 6.0), (-10.0, 6.0)),
    )
    return Scenario(
        scenario_id=scenario_id,
        scenario_type=ScenarioType.OTHER,
        agents=(ego,),
        lanes=(east, north),
        lane_connectors=(connector,),
        areas=(drivable,),
    )


def corpus(count: int = 50, seed: int = 7) -> list[tuple[Scenario, str]]:
    """Deterministic batch of single-lane scenes with a placement instruction.

    Every entry asks for one parked vehicle at a scene-specific distance, so
    scripted editing runs can key their canned responses off the scenario id.
    """
    rng = random.Random(seed)
    items: list[tuple[Scenario, str]] = []
    for i in range(count):
        distance = round(rng.uniform(15.0, 60.0), 1)
        offset = round(rng.uniform(0.0, 1.5), 1)
        scenario = single_lane_scenario(scenario_id=f"scene-{i:03d}")
        instruction = (
            f"add a parked vehicle in the travel direction of ego at an approx. "
            f"distance {distance}m away from ego. Assume an offset of {offset}m "
            f"to the left of the lane center points, as it is parked towards the "
            f"left lane boundary."
        )
        items.append((scenario, instruction))
    return items
