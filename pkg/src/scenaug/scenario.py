"""Fix-form traffic scenario documents.

A scenario is an ego-centric snapshot: agents as oriented boxes, lanes and
lane connectors with centerline geometry, and polygonal map areas. Documents
serialize to a stable JSON layout with fixed key order and 3-decimal floats
so that saving the same scenario twice yields identical bytes.
"""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from shapely.geometry import Polygon

from .errors import IntegrityError, SchemaError, ValidationError

Point = tuple[float, float]

# Serialization quantizes floats to 3 decimals, so reloaded headings may sit
# a hair beyond (-pi, pi]. Validation absorbs that much and no more.
_HEADING_SLACK = 5e-4


class AgentType(enum.Enum):
    EGO_VEHICLE = "EGO_VEHICLE"
    VEHICLE = "VEHICLE"
    PEDESTRIAN = "PEDESTRIAN"
    BICYCLE = "BICYCLE"
    TRAFFIC_CONE = "TRAFFIC_CONE"
    BARRIER = "BARRIER"
    GENERIC_OBJECT = "GENERIC_OBJECT"


class RelativeDirection(enum.Enum):
    SAME = "SAME"
    OPPOSITE = "OPPOSITE"
    CROSSING = "CROSSING"


class TrafficLightState(enum.Enum):
    RED = "RED"
    YELLOW = "YELLOW"
    GREEN = "GREEN"
    UNKNOWN = "UNKNOWN"


class TurnType(enum.Enum):
    LEFT = "LEFT"
    RIGHT = "RIGHT"
    STRAIGHT = "STRAIGHT"


class AreaKind(enum.Enum):
    DRIVABLE = "DRIVABLE"
    WALKWAY = "WALKWAY"
    CARPARK = "CARPARK"
    OTHER = "OTHER"


class ScenarioType(enum.Enum):
    CONSTRUCTION_ZONE = "CONSTRUCTION_ZONE"
    ACCIDENT_SITE = "ACCIDENT_SITE"
    JAYWALKER = "JAYWALKER"
    PARKED_VEHICLE_NUDGE = "PARKED_VEHICLE_NUDGE"
    OVERTAKE_ONCOMING = "OVERTAKE_ONCOMING"
    OTHER = "OTHER"


class ModAction(enum.Enum):
    ADD = "ADD"
    REMOVE = "REMOVE"
    MODIFY = "MODIFY"


# Field names of the fix-form agent vector, in serialization order.
AGENT_VECTOR_FIELDS = (
    "agent_type",
    "center_x",
    "center_y",
    "heading",
    "width",
    "length",
    "velocity",
    "lane_id",
)


def _point_tuple(raw: Sequence[float], what: str) -> Point:
    if len(raw) != 2:
        raise ValidationError(f"{what} must be a 2-d point, got {raw!r}")
    x, y = float(raw[0]), float(raw[1])
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ValidationError(f"{what} has non-finite coordinates: {raw!r}")
    return (x, y)


@dataclass(frozen=True)
class AgentState:
    """One traffic participant as an oriented box with a scalar speed."""

    id: str
    agent_type: AgentType
    center: Point
    heading: float
    width: float
    length: float
    velocity: float
    lane_id: str | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("agent id must be a non-empty string")
        if not isinstance(self.agent_type, AgentType):
            raise ValidationError(f"agent_type must be an AgentType, got {self.agent_type!r}")
        object.__setattr__(self, "center", _point_tuple(self.center, f"agent {self.id} center"))
        for name in ("heading", "width", "length", "velocity"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValidationError(f"agent {self.id} {name} must be finite")
            object.__setattr__(self, name, value)
        if not (-math.pi - _HEADING_SLACK < self.heading <= math.pi + _HEADING_SLACK):
            raise ValidationError(
                f"agent {self.id} heading {self.heading!r} outside (-pi, pi]"
            )
        if self.width <= 0.0 or self.length <= 0.0:
            raise ValidationError(f"agent {self.id} width and length must be positive")
        if self.velocity < 0.0:
            raise ValidationError(f"agent {self.id} velocity must be non-negative")
        if self.lane_id is not None and (not isinstance(self.lane_id, str) or not self.lane_id):
            raise ValidationError(f"agent {self.id} lane_id must be a non-empty string or None")

    @property
    def is_ego(self) -> bool:
        return self.agent_type is AgentType.EGO_VEHICLE

    def vector(self) -> list:
        """The fix-form vector in AGENT_VECTOR_FIELDS order."""
        return [
            self.agent_type.value,
            self.center[0],
            self.center[1],
            self.heading,
            self.width,
            self.length,
            self.velocity,
            self.lane_id,
        ]


@dataclass(frozen=True)
class LaneGeometry:
    """Centerline as exactly one of: a polyline, or four curve control points."""

    polyline: tuple[Point, ...] | None = None
    bezier: tuple[Point, Point, Point, Point] | None = None

    def __post_init__(self) -> None:
        if (self.polyline is None) == (self.bezier is None):
            raise ValidationError("geometry must set exactly one of polyline or bezier")
        if self.polyline is not None:
            pts = tuple(_point_tuple(p, "polyline point") for p in self.polyline)
            if len(pts) < 2:
                raise ValidationError("polyline needs at least two points")
            for a, b in zip(pts, pts[1:]):
                if math.hypot(b[0] - a[0], b[1] - a[1]) <= 0.0:
                    raise ValidationError("polyline segments must have positive length")
            object.__setattr__(self, "polyline", pts)
        else:
            pts = tuple(_point_tuple(p, "control point") for p in self.bezier)
            if len(pts) != 4:
                raise ValidationError("bezier geometry needs exactly four control points")
            if all(p == pts[0] for p in pts[1:]):
                raise ValidationError("bezier control points must not all coincide")
            object.__setattr__(self, "bezier", pts)

    @property
    def start(self) -> Point:
        return self.polyline[0] if self.polyline is not None else self.bezier[0]

    @property
    def end(self) -> Point:
        return self.polyline[-1] if self.polyline is not None else self.bezier[3]


@dataclass(frozen=True)
class Lane:
    id: str
    travel_direction: str
    relative_direction_to_ego: RelativeDirection
    width: float
    speed_limit: float
    geometry: LaneGeometry

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("lane id must be a non-empty string")
        if not isinstance(self.travel_direction, str) or not self.travel_direction:
            raise ValidationError(f"lane {self.id} travel_direction must be a non-empty label")
        if not isinstance(self.relative_direction_to_ego, RelativeDirection):
            raise ValidationError(f"lane {self.id} relative_direction_to_ego is invalid")
        for name in ("width", "speed_limit"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0.0:
                raise ValidationError(f"lane {self.id} {name} must be a positive number")
            object.__setattr__(self, name, value)
        if not isinstance(self.geometry, LaneGeometry):
            raise ValidationError(f"lane {self.id} geometry must be a LaneGeometry")


@dataclass(frozen=True)
class LaneConnector:
    id: str
    from_lane: str
    to_lane: str
    traffic_light_state: TrafficLightState
    turn_type: TurnType
    speed_limit: float
    geometry: LaneGeometry

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("connector id must be a non-empty string")
        for name in ("from_lane", "to_lane"):
            if not isinstance(getattr(self, name), str) or not getattr(self, name):
                raise ValidationError(f"connector {self.id} {name} must be a lane id")
        if self.from_lane == self.to_lane:
            raise ValidationError(f"connector {self.id} must join two distinct lanes")
        if not isinstance(self.traffic_light_state, TrafficLightState):
            raise ValidationError(f"connector {self.id} traffic_light_state is invalid")
        if not isinstance(self.turn_type, TurnType):
            raise ValidationError(f"connector {self.id} turn_type is invalid")
        value = float(self.speed_limit)
        if not math.isfinite(value) or value <= 0.0:
            raise ValidationError(f"connector {self.id} speed_limit must be positive")
        object.__setattr__(self, "speed_limit", value)
        if not isinstance(self.geometry, LaneGeometry):
            raise ValidationError(f"connector {self.id} geometry must be a LaneGeometry")


@dataclass(frozen=True)
class Area:
    """A simple polygon on the map; the boundary closes implicitly."""

    id: str
    kind: AreaKind
    boundary: tuple[Point, ...]

    def __post_init__(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("area id must be a non-empty string")
        if not isinstance(self.kind, AreaKind):
            raise ValidationError(f"area {self.id} kind is invalid")
        pts = tuple(_point_tuple(p, f"area {self.id} boundary point") for p in self.boundary)
        if len(pts) < 3:
            raise ValidationError(f"area {self.id} boundary needs at least three points")
        if pts[0] == pts[-1]:
            raise ValidationError(f"area {self.id} boundary must not repeat the first point")
        poly = Polygon(pts)
        if not poly.is_valid or poly.area <= 0.0:
            raise ValidationError(f"area {self.id} boundary must be a simple polygon")
        object.__setattr__(self, "boundary", pts)

    def polygon(self) -> Polygon:
        return Polygon(self.boundary)


@dataclass(frozen=True)
class Scenario:
    scenario_id: str
    scenario_type: ScenarioType
    agents: tuple[AgentState, ...]
    lanes: tuple[Lane, ...] = ()
    lane_connectors: tuple[LaneConnector, ...] = ()
    areas: tuple[Area, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.scenario_id, str) or not self.scenario_id:
            raise ValidationError("scenario_id must be a non-empty string")
        if not isinstance(self.scenario_type, ScenarioType):
            raise ValidationError("scenario_type is invalid")
        object.__setattr__(self, "agents", tuple(self.agents))
        object.__setattr__(self, "lanes", tuple(self.lanes))
        object.__setattr__(self, "lane_connectors", tuple(self.lane_connectors))
        object.__setattr__(self, "areas", tuple(self.areas))
        self._check_integrity()

    def _check_integrity(self) -> None:
        for group, name in (
            (self.agents, "agent"),
            (self.lanes, "lane"),
            (self.lane_connectors, "connector"),
            (self.areas, "area"),
        ):
            seen: set[str] = set()
            for item in group:
                if item.id in seen:
                    raise IntegrityError(f"duplicate {name} id {item.id!r}")
                seen.add(item.id)
        egos = [a for a in self.agents if a.is_ego]
        if len(egos) != 1:
            raise IntegrityError(f"scenario must contain exactly one ego vehicle, found {len(egos)}")
        lane_ids = {lane.id for lane in self.lanes}
        entity_ids = lane_ids | {c.id for c in self.lane_connectors}
        for agent in self.agents:
            if agent.lane_id is not None and agent.lane_id not in entity_ids:
                raise IntegrityError(
                    f"agent {agent.id!r} references unknown lane {agent.lane_id!r}"
                )
        for connector in self.lane_connectors:
            for lane_ref in (connector.from_lane, connector.to_lane):
                if lane_ref not in lane_ids:
                    raise IntegrityError(
                        f"connector {connector.id!r} references unknown lane {lane_ref!r}"
                    )

    @property
    def ego(self) -> AgentState:
        return next(a for a in self.agents if a.is_ego)

    def agent(self, agent_id: str) -> AgentState:
        for a in self.agents:
            if a.id == agent_id:
                return a
        raise IntegrityError(f"no agent with id {agent_id!r}")

    def lane(self, lane_id: str) -> Lane:
        for lane in self.lanes:
            if lane.id == lane_id:
                return lane
        raise IntegrityError(f"no lane with id {lane_id!r}")


@dataclass(frozen=True)
class ModificationDict:
    """One edit directive emitted by the editing agent.

    Keys beyond the action, target and rationale are carried through verbatim
    as strings; downstream consumers decide whether they mean anything.
    """

    action: ModAction
    modified_agent: str
    rationale: str = ""
    extra: tuple[tuple[str, str], ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.action, ModAction):
            raise ValidationError(f"action must be a ModAction, got {self.action!r}")
        if not isinstance(self.modified_agent, str) or not self.modified_agent:
            raise ValidationError("modified_agent must be a non-empty agent id")
        object.__setattr__(self, "extra", tuple((str(k), str(v)) for k, v in self.extra))

    @property
    def extra_fields(self) -> dict[str, str]:
        return dict(self.extra)


@dataclass(frozen=True)
class ModificationResult:
    """Parsed output of one editing run."""

    insights: str
    summary: str
    modification_dicts: tuple[ModificationDict, ...]
    calculations: str
    modified_vectors: tuple[AgentState, ...]
    transcript: tuple[tuple[str, str], ...] = ()
    iterations: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "modification_dicts", tuple(self.modification_dicts))
        object.__setattr__(self, "modified_vectors", tuple(self.modified_vectors))
        object.__setattr__(
            self, "transcript", tuple((str(r), str(c)) for r, c in self.transcript)
        )
        if int(self.iterations) < 1:
            raise ValidationError("iterations must be at least 1")
        object.__setattr__(self, "iterations", int(self.iterations))


# --- serialization ----------------------------------------------------------


def _f3(value: float) -> str:
    text = f"{float(value):.3f}"
    return "0.000" if text == "-0.000" else text


def _emit(value, indent: int) -> str:
    pad = "  " * indent
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return _f3(value)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        if not any(isinstance(v, (list, tuple, dict)) for v in value):
            return "[" + ", ".join(_emit(v, 0) for v in value) + "]"
        inner = ",\n".join(pad + "  " + _emit(v, indent + 1) for v in value)
        return "[\n" + inner + "\n" + pad + "]"
    if isinstance(value, dict):
        if not value:
            return "{}"
        inner = ",\n".join(
            pad + "  " + json.dumps(k, ensure_ascii=False) + ": " + _emit(v, indent + 1)
            for k, v in value.items()
        )
        return "{\n" + inner + "\n" + pad + "}"
    raise SchemaError(f"cannot serialize value of type {type(value).__name__}")


def _geometry_payload(geometry: LaneGeometry) -> dict:
    if geometry.polyline is not None:
        return {"polyline": [[float(x), float(y)] for x, y in geometry.polyline]}
    return {"bezier": [[float(x), float(y)] for x, y in geometry.bezier]}


def save_scenario(scenario: Scenario) -> bytes:
    """Serialize deterministically: fixed key order, 3-decimal floats."""
    doc = {
        "scenario_id": scenario.scenario_id,
        "scenario_type": scenario.scenario_type.value,
        "agents": [{"id": a.id, "vector": a.vector()} for a in scenario.agents],
        "lanes": [
            {
                "id": lane.id,
                "travel_direction": lane.travel_direction,
                "relative_direction_to_ego": lane.relative_direction_to_ego.value,
                "width": lane.width,
                "speed_limit": lane.speed_limit,
                "geometry": _geometry_payload(lane.geometry),
            }
            for lane in scenario.lanes
        ],
        "lane_connectors": [
            {
                "id": c.id,
                "from_lane": c.from_lane,
                "to_lane": c.to_lane,
                "traffic_light_state": c.traffic_light_state.value,
                "turn_type": c.turn_type.value,
                "speed_limit": c.speed_limit,
                "geometry": _geometry_payload(c.geometry),
            }
            for c in scenario.lane_connectors
        ],
        "areas": [
            {
                "id": area.id,
                "kind": area.kind.value,
                "boundary": [[float(x), float(y)] for x, y in area.boundary],
            }
            for area in scenario.areas
        ],
    }
    return (_emit(doc, 0) + "\n").encode("utf-8")


def _require(mapping: Mapping, key: str, kind, what: str):
    if not isinstance(mapping, Mapping):
        raise SchemaError(f"{what} must be an object")
    if key not in mapping:
        raise SchemaError(f"{what} is missing required key {key!r}")
    value = mapping[key]
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{what}.{key} must be a number, got {type(value).__name__}")
        return float(value)
    if not isinstance(value, kind):
        raise SchemaError(f"{what}.{key} must be {kind.__name__}, got {type(value).__name__}")
    return value


def _enum_value(enum_cls, raw, what: str):
    if not isinstance(raw, str):
        raise SchemaError(f"{what} must be a string, got {type(raw).__name__}")
    try:
        return enum_cls(raw)
    except ValueError:
        allowed = ", ".join(m.value for m in enum_cls)
        raise ValidationError(f"{what} must be one of {allowed}; got {raw!r}") from None


def agent_from_vector(agent_id: str, vector: Sequence) -> AgentState:
    """Build an agent from its fix-form vector, checking arity and field types."""
    if not isinstance(vector, Sequence) or isinstance(vector, (str, bytes)):
        raise SchemaError(f"agent {agent_id!r} vector must be a list")
    if len(vector) != len(AGENT_VECTOR_FIELDS):
        missing = AGENT_VECTOR_FIELDS[len(vector):]
        if missing:
            raise SchemaError(
                f"agent {agent_id!r} vector has {len(vector)} of "
                f"{len(AGENT_VECTOR_FIELDS)} fields; missing: {', '.join(missing)}"
            )
        raise SchemaError(
            f"agent {agent_id!r} vector has {len(vector)} fields, expected "
            f"{len(AGENT_VECTOR_FIELDS)}"
        )
    type_raw, x, y, heading, width, length, velocity, lane_id = vector
    agent_type = _enum_value(AgentType, type_raw, f"agent {agent_id!r} type")
    for name, value in (("x", x), ("y", y), ("heading", heading), ("width", width),
                        ("length", length), ("velocity", velocity)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"agent {agent_id!r} {name} must be a number")
    if lane_id is not None and not isinstance(lane_id, str):
        raise SchemaError(f"agent {agent_id!r} lane_id must be a string or null")
    return AgentState(
        id=agent_id,
        agent_type=agent_type,
        center=(float(x), float(y)),
        heading=float(heading),
        width=float(width),
        length=float(length),
        velocity=float(velocity),
        lane_id=lane_id,
    )


def _geometry_from_payload(raw, what: str) -> LaneGeometry:
    if not isinstance(raw, Mapping):
        raise SchemaError(f"{what} geometry must be an object")
    keys = set(raw.keys())
    if keys == {"polyline"}:
        pts = raw["polyline"]
        if not isinstance(pts, list):
            raise SchemaError(f"{what} polyline must be a list of points")
        return LaneGeometry(polyline=tuple(tuple(p) for p in pts))
    if keys == {"bezier"}:
        pts = raw["bezier"]
        if not isinstance(pts, list) or len(pts) != 4:
            raise SchemaError(f"{what} bezier must be a list of four points")
        return LaneGeometry(bezier=tuple(tuple(p) for p in pts))
    raise SchemaError(f"{what} geometry must have exactly one of 'polyline' or 'bezier'")


def load_scenario(data: bytes | str) -> Scenario:
    """Parse and validate a scenario document."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"document is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise SchemaError("document root must be an object")
    scenario_id = _require(doc, "scenario_id", str, "document")
    scenario_type = _enum_value(
        ScenarioType, _require(doc, "scenario_type", str, "document"), "scenario_type"
    )

    agents = []
    for raw in _require(doc, "agents", list, "document"):
        agent_id = _require(raw, "id", str, "agent entry")
        agents.append(agent_from_vector(agent_id, _require(raw, "vector", list, f"agent {agent_id!r}")))

    lanes = []
    for raw in _require(doc, "lanes", list, "document"):
        lane_id = _require(raw, "id", str, "lane entry")
        what = f"lane {lane_id!r}"
        lanes.append(
            Lane(
                id=lane_id,
                travel_direction=_require(raw, "travel_direction", str, what),
                relative_direction_to_ego=_enum_value(
                    RelativeDirection,
                    _require(raw, "relative_direction_to_ego", str, what),
                    f"{what} relative_direction_to_ego",
                ),
                width=_require(raw, "width", float, what),
                speed_limit=_require(raw, "speed_limit", float, what),
                geometry=_geometry_from_payload(_require(raw, "geometry", Mapping, what), what),
            )
        )

    connectors = []
    for raw in _require(doc, "lane_connectors", list, "document"):
        conn_id = _require(raw, "id", str, "connector entry")
        what = f"connector {conn_id!r}"
        connectors.append(
            LaneConnector(
                id=conn_id,
                from_lane=_require(raw, "from_lane", str, what),
                to_lane=_require(raw, "to_lane", str, what),
                traffic_light_state=_enum_value(
                    TrafficLightState,
                    _require(raw, "traffic_light_state", str, what),
                    f"{what} traffic_light_state",
                ),
                turn_type=_enum_value(
                    TurnType, _require(raw, "turn_type", str, what), f"{what} turn_type"
                ),
                speed_limit=_require(raw, "speed_limit", float, what),
                geometry=_geometry_from_payload(_require(raw, "geometry", Mapping, what), what),
            )
        )

    areas = []
    for raw in _require(doc, "areas", list, "document"):
        area_id = _require(raw, "id", str, "area entry")
        what = f"area {area_id!r}"
        boundary = _require(raw, "boundary", list, what)
        areas.append(
            Area(
                id=area_id,
                kind=_enum_value(AreaKind, _require(raw, "kind", str, what), f"{what} kind"),
                boundary=tuple(tuple(p) for p in boundary),
            )
        )

    return Scenario(
        scenario_id=scenario_id,
        scenario_type=scenario_type,
        agents=tuple(agents),
        lanes=tuple(lanes),
        lane_connectors=tuple(connectors),
        areas=tuple(areas),
    )


def apply_modification(scenario: Scenario, result: ModificationResult) -> Scenario:
    """Apply edit directives to a scenario, returning a new validated scenario.

    ADD inserts the matching vector from ``modified_vectors``; MODIFY replaces
    the target with it; REMOVE drops the target. The result is re-validated in
    full, so edits that orphan references or drop the ego are rejected.
    """
    agents = list(scenario.agents)
    by_id = {a.id: i for i, a in enumerate(agents)}
    vectors = {a.id: a for a in result.modified_vectors}

    for directive in result.modification_dicts:
        target = directive.modified_agent
        if directive.action is ModAction.ADD:
            if target in by_id:
                raise IntegrityError(f"cannot add agent {target!r}: id already exists")
            if target not in vectors:
                raise IntegrityError(f"add directive for {target!r} has no matching vector")
            agents.append(vectors[target])
        elif directive.action is ModAction.REMOVE:
            if target not in by_id:
                raise IntegrityError(f"cannot remove unknown agent {target!r}")
            agents = [a for a in agents if a.id != target]
        else:  # MODIFY
            if target not in by_id:
                raise IntegrityError(f"cannot modify unknown agent {target!r}")
            if target not in vectors:
                raise IntegrityError(f"modify directive for {target!r} has no matching vector")
            agents = [vectors[target] if a.id == target else a for a in agents]
        by_id = {a.id: i for i, a in enumerate(agents)}

    return replace(scenario, agents=tuple(agents))
