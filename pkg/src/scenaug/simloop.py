"""Closed-loop simulation with an IDM proposal planner and a driving score.

Traffic agents follow constant-velocity predictions; the ego rolls out a grid
of intelligent-driver-model proposals over target speeds and lateral offsets,
filters the ones that would collide or leave the drivable area, and follows
the best survivor until the next replan. Everything is deterministic: fixed
step, no randomness, pure float math.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import RouteError, ValidationError
from .geometry import Point, bezier_point, centerline_quad, resample_polyline
from .scenario import AgentState, Scenario

logger = logging.getLogger(__name__)

# boxes closer than this along any separating axis count as touching, not
# colliding
_CONTACT_EPS = 1e-9


@dataclass(frozen=True)
class SimConfig:
    """Planner and scoring constants.

    The IDM parameters are the standard literature values; the score weights
    and comfort bounds mirror the usual closed-loop benchmark shape.
    """

    dt_s: float = 0.1
    horizon_s: float = 8.0
    replan_period_s: float = 1.0
    duration_s: float = 15.0
    a_max: float = 1.5
    b_comfort: float = 2.0
    b_emergency: float = 4.0
    delta_exp: float = 4.0
    headway_s: float = 1.5
    s_min_m: float = 2.0
    lateral_blend_s: float = 2.0
    speed_fractions: tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    lateral_offsets_m: tuple[float, ...] = (
        -4.0, -3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0, 4.0,
    )
    ttc_horizon_s: float = 1.0
    ttc_threshold_s: float = 0.95
    max_abs_accel: float = 2.4
    max_abs_jerk: float = 4.13
    w_ttc: float = 5.0
    w_progress: float = 5.0
    w_comfort: float = 2.0

    def __post_init__(self) -> None:
        for name in ("dt_s", "horizon_s", "replan_period_s", "duration_s",
                     "a_max", "b_comfort", "b_emergency", "headway_s", "s_min_m",
                     "ttc_horizon_s", "ttc_threshold_s"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ValidationError(f"{name} must be positive")
        if self.horizon_s < self.replan_period_s:
            raise ValidationError("horizon_s must cover at least one replan period")
        if not self.speed_fractions or not all(0.0 < f <= 1.0 for f in self.speed_fractions):
            raise ValidationError("speed_fractions must lie in (0, 1]")
        if not self.lateral_offsets_m:
            raise ValidationError("lateral_offsets_m must be non-empty")

    @property
    def steps(self) -> int:
        return round(self.duration_s / self.dt_s)

    @property
    def horizon_steps(self) -> int:
        return round(self.horizon_s / self.dt_s)

    @property
    def replan_steps(self) -> int:
        return round(self.replan_period_s / self.dt_s)


@dataclass(frozen=True)
class Route:
    """Ordered lane/connector chain with a 1 m resampled reference path."""

    entity_ids: tuple[str, ...]
    path: tuple[Point, ...]
    seg_end_s: tuple[float, ...]
    speed_limits: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.entity_ids:
            raise ValidationError("route needs at least one entity")
        if len(self.entity_ids) != len(self.seg_end_s) or len(self.entity_ids) != len(
            self.speed_limits
        ):
            raise ValidationError("route entity, boundary and limit counts must match")
        if len(self.path) < 2:
            raise ValidationError("route path needs at least two points")
        previous = 0.0
        for end in self.seg_end_s:
            if end <= previous:
                raise ValidationError("route segment boundaries must increase")
            previous = end

    @property
    def length_m(self) -> float:
        return self.seg_end_s[-1]

    def speed_limit_at(self, s: float) -> float:
        for end, limit in zip(self.seg_end_s, self.speed_limits):
            if s <= end:
                return limit
        return self.speed_limits[-1]


class EventKind(enum.Enum):
    COLLISION = "COLLISION"
    OFFROAD = "OFFROAD"


@dataclass(frozen=True)
class SimEvent:
    kind: EventKind
    time_s: float
    agent_id: str | None = None


@dataclass(frozen=True, eq=False)
class Proposal:
    """One rolled-out candidate: a target speed fraction at a lateral offset.

    trajectory columns: time, x, y, heading, velocity.
    """

    speed_fraction: float
    lateral_offset_m: float
    trajectory: np.ndarray
    arc_s: np.ndarray
    lateral_d: np.ndarray
    progress_m: float


@dataclass(frozen=True, eq=False)
class SimTrace:
    """Executed closed-loop run. ego columns: x, y, heading, velocity, arc s."""

    dt_s: float
    duration_s: float
    times: np.ndarray
    ego: np.ndarray
    ego_agent: AgentState
    agents: tuple[AgentState, ...]
    events: tuple[SimEvent, ...]

    def __post_init__(self) -> None:
        expected = round(self.duration_s / self.dt_s) + 1
        if len(self.times) != expected or len(self.ego) != expected:
            raise ValidationError(
                f"trace must hold {expected} samples, got {len(self.times)}"
            )


@dataclass(frozen=True)
class DrivingScore:
    ttc_pass: bool
    progress_ratio: float
    comfort_pass: bool
    collision: bool
    offroad: bool
    score: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.progress_ratio <= 1.0):
            raise ValidationError("progress_ratio must lie in [0, 1]")
        if not (0.0 <= self.score <= 1.0):
            raise ValidationError("score must lie in [0, 1]")
        if (self.collision or self.offroad) and self.score != 0.0:
            raise ValidationError("an infraction forces a zero score")


# --- route derivation ---------------------------------------------------------


def _entity_polyline(geometry) -> list[Point]:
    if geometry.polyline is not None:
        return [tuple(p) for p in geometry.polyline]
    quad = centerline_quad(geometry)
    return [bezier_point(quad, t) for t in np.linspace(0.0, 1.0, 129)]


def derive_route(scenario: Scenario) -> Route:
    """Follow connectors forward from the ego's lane to build the route.

    At a branch the connector with the smallest id wins, which keeps the
    result deterministic. The walk stops at a dead end or when an entity
    repeats.
    """
    lanes = {lane.id: lane for lane in scenario.lanes}
    connectors = {conn.id: conn for conn in scenario.lane_connectors}
    ego = scenario.ego

    start_id = ego.lane_id
    if start_id is not None and start_id in connectors:
        conn = connectors[start_id]
        chain = [conn.id, conn.to_lane]
    elif start_id is not None and start_id in lanes:
        chain = [start_id]
    else:
        if not lanes:
            raise RouteError("scenario has no lanes to route over")
        best = None
        for lane in sorted(lanes.values(), key=lambda l: l.id):
            quad = centerline_quad(lane.geometry)
            ts = np.linspace(0.0, 1.0, 65)
            arr = quad.array
            mu = 1.0 - ts
            basis = np.stack([mu**3, 3 * ts * mu**2, 3 * ts**2 * mu, ts**3], axis=1)
            pts = basis @ arr
            d2 = ((pts - np.asarray(ego.center)) ** 2).sum(axis=1).min()
            if best is None or d2 < best[0]:
                best = (float(d2), lane.id)
        chain = [best[1]]

    seen = set(chain)
    while True:
        tail = chain[-1]
        if tail not in lanes:
            break
        outgoing = sorted(c.id for c in connectors.values() if c.from_lane == tail)
        if not outgoing:
            break
        conn = connectors[outgoing[0]]
        if conn.id in seen or conn.to_lane in seen:
            break
        chain.extend([conn.id, conn.to_lane])
        seen.update([conn.id, conn.to_lane])

    points: list[Point] = []
    seg_end: list[float] = []
    limits: list[float] = []
    total = 0.0
    for entity_id in chain:
        entity = lanes.get(entity_id) or connectors.get(entity_id)
        poly = _entity_polyline(entity.geometry)
        if points and math.dist(points[-1], poly[0]) < 1e-6:
            poly = poly[1:]
        length = 0.0
        previous = points[-1] if points else poly[0]
        for p in poly:
            length += math.dist(previous, p)
            previous = p
        if length <= 0.0:
            raise RouteError(f"route entity {entity_id} has no usable length")
        total += length
        points.extend(poly)
        seg_end.append(total)
        limits.append(entity.speed_limit)

    resampled = resample_polyline(points, spacing=1.0)
    return Route(
        entity_ids=tuple(chain),
        path=tuple(resampled),
        seg_end_s=tuple(seg_end),
        speed_limits=tuple(limits),
    )


# --- path frame ---------------------------------------------------------------


class _PathFrame:
    """Vectorized arc-length lookups over a route polyline."""

    def __init__(self, route: Route) -> None:
        self.xy = np.asarray(route.path, dtype=float)
        seg = np.diff(self.xy, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self.seg_len <= 0.0):
            raise RouteError("route path has zero-length segments")
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.total = float(self.cum[-1])
        self.dirs = seg / self.seg_len[:, None]
        self.headings = np.arctan2(self.dirs[:, 1], self.dirs[:, 0])

    def project_many(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ap = pts[:, None, :] - self.xy[None, :-1, :]
        t = np.clip((ap * self.dirs[None, :, :]).sum(-1), 0.0, self.seg_len[None, :])
        foot = self.xy[None, :-1, :] + self.dirs[None, :, :] * t[..., None]
        d2 = ((pts[:, None, :] - foot) ** 2).sum(-1)
        k = np.argmin(d2, axis=1)
        rows = np.arange(len(pts))
        s = self.cum[k] + t[rows, k]
        lat = (
            self.dirs[k, 0] * ap[rows, k, 1] - self.dirs[k, 1] * ap[rows, k, 0]
        )
        return s, lat

    def project(self, point: Point) -> tuple[float, float]:
        s, lat = self.project_many(np.asarray([point], dtype=float))
        return float(s[0]), float(lat[0])

    def pose(self, s: float, d: float) -> tuple[float, float, float]:
        s_cl = min(max(s, 0.0), self.total)
        k = int(np.searchsorted(self.cum, s_cl, side="right")) - 1
        k = min(max(k, 0), len(self.seg_len) - 1)
        t = s_cl - self.cum[k]
        bx = self.xy[k, 0] + self.dirs[k, 0] * t
        by = self.xy[k, 1] + self.dirs[k, 1] * t
        heading = float(self.headings[k])
        return (bx - d * math.sin(heading), by + d * math.cos(heading), heading)

    def heading_at(self, s: float) -> float:
        s_cl = min(max(s, 0.0), self.total)
        k = int(np.searchsorted(self.cum, s_cl, side="right")) - 1
        k = min(max(k, 0), len(self.seg_len) - 1)
        return float(self.headings[k])


# --- agent prediction ---------------------------------------------------------


def _agent_centers(agent: AgentState, times: np.ndarray) -> np.ndarray:
    direction = np.array([math.cos(agent.heading), math.sin(agent.heading)])
    return np.asarray(agent.center, dtype=float) + times[:, None] * agent.velocity * direction


@dataclass(frozen=True, eq=False)
class _AgentTrack:
    agent: AgentState
    s: np.ndarray
    lat: np.ndarray
    v_along: np.ndarray


def _agent_tracks(
    agents: Sequence[AgentState], frame: _PathFrame, t0: float, steps: int, dt: float
) -> list[_AgentTrack]:
    times = t0 + dt * np.arange(steps + 1)
    tracks = []
    for agent in agents:
        centers = _agent_centers(agent, times)
        s, lat = frame.project_many(centers)
        path_heading = np.array([frame.heading_at(float(si)) for si in s])
        v_along = agent.velocity * np.cos(agent.heading - path_heading)
        tracks.append(_AgentTrack(agent=agent, s=s, lat=lat, v_along=v_along))
    return tracks


# --- IDM rollout ----------------------------------------------------------------


def _idm_accel(v: float, v_target: float, gap: float, dv: float, cfg: SimConfig) -> float:
    free = (v / v_target) ** cfg.delta_exp if v_target > 0.0 else 1.0
    if math.isinf(gap):
        accel = cfg.a_max * (1.0 - free)
    elif gap <= 0.01:
        accel = -cfg.b_emergency
    else:
        desired = cfg.s_min_m + v * cfg.headway_s + v * dv / (
            2.0 * math.sqrt(cfg.a_max * cfg.b_comfort)
        )
        desired = max(0.0, desired)
        accel = cfg.a_max * (1.0 - free - (desired / gap) ** 2)
    return min(cfg.a_max, max(-cfg.b_emergency, accel))


def _rollout(
    frame: _PathFrame,
    route: Route,
    cfg: SimConfig,
    ego: AgentState,
    tracks: Sequence[_AgentTrack],
    start_s: float,
    start_d: float,
    start_v: float,
    t0: float,
    fraction: float,
    offset: float,
) -> Proposal:
    steps = cfg.horizon_steps
    dt = cfg.dt_s
    half_width = ego.width / 2.0
    half_length = ego.length / 2.0

    s, d, v = start_s, start_d, start_v
    rows = np.empty((steps + 1, 5))
    arc = np.empty(steps + 1)
    lateral = np.empty(steps + 1)
    x, y, heading = frame.pose(s, d)
    rows[0] = (t0, x, y, heading, v)
    arc[0] = s
    lateral[0] = d

    for k in range(steps):
        v_target = fraction * route.speed_limit_at(min(s, route.length_m))
        gap = math.inf
        dv = 0.0
        # leader search runs on the proposal's target offset path, so two
        # proposals that clear the same obstacle share identical longitudinal
        # profiles and tie on progress
        for track in tracks:
            if abs(track.lat[k] - offset) >= (track.agent.width / 2.0 + half_width):
                continue
            sa = track.s[k]
            if sa <= s:
                continue
            candidate = sa - s - (track.agent.length / 2.0 + half_length)
            if candidate < gap:
                gap = candidate
                dv = v - track.v_along[k]
        accel = _idm_accel(v, v_target, gap, dv, cfg)
        v = max(0.0, v + accel * dt)
        s = s + v * dt
        blend = min(1.0, (k + 1) * dt / cfg.lateral_blend_s)
        d = start_d + (offset - start_d) * blend
        x, y, heading = frame.pose(s, d)
        rows[k + 1] = (t0 + (k + 1) * dt, x, y, heading, v)
        arc[k + 1] = s
        lateral[k + 1] = d

    return Proposal(
        speed_fraction=fraction,
        lateral_offset_m=offset,
        trajectory=rows,
        arc_s=arc,
        lateral_d=lateral,
        progress_m=float(arc[-1] - arc[0]),
    )


def _check_route(route: Route, scenario: Scenario) -> None:
    known = {lane.id for lane in scenario.lanes}
    known.update(conn.id for conn in scenario.lane_connectors)
    missing = [entity_id for entity_id in route.entity_ids if entity_id not in known]
    if missing:
        raise RouteError(f"route references unknown entities: {', '.join(missing)}")


def generate_proposals(
    scenario: Scenario, route: Route, cfg: SimConfig | None = None
) -> list[Proposal]:
    """IDM rollouts for every speed fraction and lateral offset pair."""
    cfg = cfg or SimConfig()
    _check_route(route, scenario)
    frame = _PathFrame(route)
    ego = scenario.ego
    agents = [a for a in scenario.agents if not a.is_ego]
    start_s, start_d = frame.project(ego.center)
    tracks = _agent_tracks(agents, frame, 0.0, cfg.horizon_steps, cfg.dt_s)
    return [
        _rollout(frame, route, cfg, ego, tracks, start_s, start_d, ego.velocity,
                 0.0, fraction, offset)
        for fraction in cfg.speed_fractions
        for offset in cfg.lateral_offsets_m
    ]


# --- feasibility filters --------------------------------------------------------


def _overlap_mask(
    centers_a: np.ndarray,
    headings_a: np.ndarray,
    width_a: float,
    length_a: float,
    centers_b: np.ndarray,
    headings_b: np.ndarray,
    width_b: float,
    length_b: float,
) -> np.ndarray:
    """Separating-axis overlap test per step; touching does not count."""
    ca, sa = np.cos(headings_a), np.sin(headings_a)
    cb, sb = np.cos(headings_b), np.sin(headings_b)
    axes = np.stack(
        [
            np.stack([ca, sa], axis=-1),
            np.stack([-sa, ca], axis=-1),
            np.stack([cb, sb], axis=-1),
            np.stack([-sb, cb], axis=-1),
        ],
        axis=1,
    )
    delta = (centers_b - centers_a)[:, None, :]
    dist = np.abs((delta * axes).sum(-1))
    ua1 = np.stack([ca, sa], axis=-1)[:, None, :]
    ua2 = np.stack([-sa, ca], axis=-1)[:, None, :]
    ub1 = np.stack([cb, sb], axis=-1)[:, None, :]
    ub2 = np.stack([-sb, cb], axis=-1)[:, None, :]
    ra = (
        np.abs((axes * ua1).sum(-1)) * (length_a / 2.0)
        + np.abs((axes * ua2).sum(-1)) * (width_a / 2.0)
    )
    rb = (
        np.abs((axes * ub1).sum(-1)) * (length_b / 2.0)
        + np.abs((axes * ub2).sum(-1)) * (width_b / 2.0)
    )
    separated = (dist >= ra + rb - _CONTACT_EPS).any(axis=1)
    return ~separated


def _predicts_collision(
    proposal: Proposal, agents: Sequence[AgentState], ego: AgentState
) -> bool:
    # trajectory rows carry absolute times, so initial agent states advanced
    # by those times line up exactly with the rollout
    times = proposal.trajectory[:, 0]
    centers = proposal.trajectory[:, 1:3]
    headings = proposal.trajectory[:, 3]
    for agent in agents:
        agent_centers = _agent_centers(agent, times)
        agent_headings = np.full(len(times), agent.heading)
        mask = _overlap_mask(
            centers, headings, ego.width, ego.length,
            agent_centers, agent_headings, agent.width, agent.length,
        )
        if mask.any():
            return True
    return False


def _points_in_polygon(pts: np.ndarray, poly: np.ndarray) -> np.ndarray:
    x, y = pts[:, 0], pts[:, 1]
    x1, y1 = poly[:, 0], poly[:, 1]
    x2, y2 = np.roll(x1, -1), np.roll(y1, -1)
    crosses = ((y1[None, :] <= y[:, None]) & (y2[None, :] > y[:, None])) | (
        (y2[None, :] <= y[:, None]) & (y1[None, :] > y[:, None])
    )
    dy = np.where(y2 - y1 == 0.0, 1.0, y2 - y1)
    t = (y[:, None] - y1[None, :]) / dy[None, :]
    xint = x1[None, :] + t * (x2 - x1)[None, :]
    hits = crosses & (xint > x[:, None])
    return hits.sum(axis=1) % 2 == 1


def _box_corners(centers: np.ndarray, headings: np.ndarray, width: float, length: float) -> np.ndarray:
    ch, sh = np.cos(headings), np.sin(headings)
    hl, hw = length / 2.0, width / 2.0
    local = np.array([(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)])
    rot = np.stack(
        [np.stack([ch, -sh], axis=-1), np.stack([sh, ch], axis=-1)], axis=1
    )
    return centers[:, None, :] + np.einsum("nij,kj->nki", rot, local)


def _exits_drivable(
    proposal: Proposal, ego: AgentState, drivable: Sequence[np.ndarray]
) -> bool:
    corners = _box_corners(
        proposal.trajectory[:, 1:3], proposal.trajectory[:, 3], ego.width, ego.length
    ).reshape(-1, 2)
    inside = np.zeros(len(corners), dtype=bool)
    for poly in drivable:
        inside |= _points_in_polygon(corners, poly)
    return bool((~inside).any())


def _drivable_polygons(scenario: Scenario) -> list[np.ndarray]:
    from .scenario import AreaKind

    return [
        np.asarray(area.boundary, dtype=float)
        for area in scenario.areas
        if area.kind in (AreaKind.DRIVABLE, AreaKind.CARPARK)
    ]


def _comfort_margin(proposal: Proposal, cfg: SimConfig) -> float:
    v = proposal.trajectory[:, 4]
    if len(v) < 2:
        return cfg.max_abs_accel
    accel = np.diff(v) / cfg.dt_s
    return float(cfg.max_abs_accel - np.abs(accel).max())


def _select(
    proposals: Sequence[Proposal],
    agents: Sequence[AgentState],
    drivable: Sequence[np.ndarray],
    ego: AgentState,
    cfg: SimConfig,
) -> Proposal | None:
    ranked = []
    for idx, proposal in enumerate(proposals):
        if _predicts_collision(proposal, agents, ego):
            continue
        if drivable and _exits_drivable(proposal, ego, drivable):
            continue
        key = (
            -round(proposal.progress_m, 6),
            abs(proposal.lateral_offset_m),
            -round(_comfort_margin(proposal, cfg), 6),
            -proposal.lateral_offset_m,
            idx,
        )
        ranked.append((key, proposal))
    if not ranked:
        return None
    ranked.sort(key=lambda item: item[0])
    return ranked[0][1]


def select_proposal(
    proposals: Sequence[Proposal], scenario: Scenario, cfg: SimConfig | None = None
) -> Proposal | None:
    """Best feasible proposal: most progress, then smallest offset magnitude,
    then largest comfort margin, then the leftward option. None when every
    proposal collides or leaves the road."""
    if not proposals:
        raise ValidationError("select_proposal needs at least one proposal")
    cfg = cfg or SimConfig()
    agents = [a for a in scenario.agents if not a.is_ego]
    return _select(proposals, agents, _drivable_polygons(scenario), scenario.ego, cfg)


# --- closed loop ------------------------------------------------------------------


def run_closed_loop(scenario: Scenario, cfg: SimConfig | None = None) -> SimTrace:
    """Simulate the full duration: replan, follow, brake to a stop on None.

    Collision and offroad events are edge-triggered (one event per contact
    episode) and never abort the run.
    """
    cfg = cfg or SimConfig()
    route = derive_route(scenario)
    frame = _PathFrame(route)
    ego = scenario.ego
    agents = tuple(a for a in scenario.agents if not a.is_ego)
    drivable = _drivable_polygons(scenario)

    steps = cfg.steps
    times = cfg.dt_s * np.arange(steps + 1)
    ego_rows = np.empty((steps + 1, 5))
    s, d = frame.project(ego.center)
    v = ego.velocity
    ego_rows[0] = (ego.center[0], ego.center[1], ego.heading, v, s)

    events: list[SimEvent] = []
    touching: set[str] = set()
    was_offroad = False

    def check_events(step: int) -> None:
        nonlocal was_offroad
        t = float(times[step])
        center = ego_rows[step, 0:2][None, :]
        heading = ego_rows[step, 2:3]
        now_touching = set()
        for agent in agents:
            agent_center = _agent_centers(agent, np.array([t]))
            overlap = _overlap_mask(
                center, heading, ego.width, ego.length,
                agent_center, np.array([agent.heading]), agent.width, agent.length,
            )
            if overlap[0]:
                now_touching.add(agent.id)
                if agent.id not in touching:
                    events.append(SimEvent(EventKind.COLLISION, t, agent.id))
        touching.clear()
        touching.update(now_touching)
        if drivable:
            corners = _box_corners(center, heading, ego.width, ego.length).reshape(-1, 2)
            inside = np.zeros(len(corners), dtype=bool)
            for poly in drivable:
                inside |= _points_in_polygon(corners, poly)
            offroad = bool((~inside).any())
            if offroad and not was_offroad:
                events.append(SimEvent(EventKind.OFFROAD, t))
            was_offroad = offroad

    check_events(0)
    plan: Proposal | None = None
    plan_base = 0
    for k in range(steps):
        if k % cfg.replan_steps == 0:
            t_k = float(times[k])
            tracks = _agent_tracks(agents, frame, t_k, cfg.horizon_steps, cfg.dt_s)
            proposals = [
                _rollout(frame, route, cfg, ego, tracks, s, d, v, t_k, fraction, offset)
                for fraction in cfg.speed_fractions
                for offset in cfg.lateral_offsets_m
            ]
            plan = _select(proposals, agents, drivable, ego, cfg)
            plan_base = k
            if plan is None:
                logger.debug("no feasible proposal at t=%.1f s, braking", t_k)
        if plan is not None:
            idx = k - plan_base + 1
            _, x, y, heading, v = plan.trajectory[idx]
            s = float(plan.arc_s[idx])
            d = float(plan.lateral_d[idx])
        else:
            v = max(0.0, v - cfg.b_comfort * cfg.dt_s)
            s = s + v * cfg.dt_s
            x, y, heading = frame.pose(s, d)
        ego_rows[k + 1] = (x, y, heading, v, s)
        check_events(k + 1)

    return SimTrace(
        dt_s=cfg.dt_s,
        duration_s=cfg.duration_s,
        times=times,
        ego=ego_rows,
        ego_agent=ego,
        agents=agents,
        events=tuple(events),
    )


# --- scoring -----------------------------------------------------------------------


def _min_ttc(trace: SimTrace, cfg: SimConfig) -> float:
    if not trace.agents:
        return math.inf
    taus = cfg.dt_s * np.arange(1, round(cfg.ttc_horizon_s / cfg.dt_s) + 1)
    ego_w = trace.ego_agent.width
    ego_l = trace.ego_agent.length
    worst = math.inf
    for step, t in enumerate(trace.times):
        x, y, heading, v, _ = trace.ego[step]
        direction = np.array([math.cos(heading), math.sin(heading)])
        ego_centers = np.array([x, y]) + taus[:, None] * v * direction
        ego_headings = np.full(len(taus), heading)
        for agent in trace.agents:
            agent_centers = _agent_centers(agent, float(t) + taus)
            agent_headings = np.full(len(taus), agent.heading)
            mask = _overlap_mask(
                ego_centers, ego_headings, ego_w, ego_l,
                agent_centers, agent_headings, agent.width, agent.length,
            )
            hits = np.nonzero(mask)[0]
            if len(hits):
                worst = min(worst, float(taus[hits[0]]))
                if worst <= taus[0]:
                    return worst
    return worst


def driving_score(
    trace: SimTrace, route: Route, cfg: SimConfig | None = None
) -> DrivingScore:
    """Weighted closed-loop score with hard zero on collision or offroad."""
    cfg = cfg or SimConfig()
    collision = any(e.kind is EventKind.COLLISION for e in trace.events)
    offroad = any(e.kind is EventKind.OFFROAD for e in trace.events)

    min_ttc = _min_ttc(trace, cfg)
    ttc_pass = min_ttc >= cfg.ttc_threshold_s

    start_s = float(trace.ego[0, 4])
    progress = max(0.0, float(trace.ego[-1, 4]) - start_s)
    limit = route.speed_limit_at(min(start_s, route.length_m))
    attainable = min(cfg.duration_s * limit, max(0.0, route.length_m - start_s))
    if attainable <= 1e-9:
        ratio = 1.0
    else:
        ratio = min(1.0, progress / attainable)

    v = trace.ego[:, 3]
    accel = np.diff(v) / cfg.dt_s
    jerk = np.diff(accel) / cfg.dt_s
    comfort_pass = bool(
        np.abs(accel).max(initial=0.0) <= cfg.max_abs_accel
        and np.abs(jerk).max(initial=0.0) <= cfg.max_abs_jerk
    )

    weight_sum = cfg.w_ttc + cfg.w_progress + cfg.w_comfort
    raw = (
        cfg.w_ttc * (1.0 if ttc_pass else 0.0)
        + cfg.w_progress * ratio
        + cfg.w_comfort * (1.0 if comfort_pass else 0.0)
    ) / weight_sum
    score = 0.0 if (collision or offroad) else raw
    return DrivingScore(
        ttc_pass=ttc_pass,
        progress_ratio=ratio,
        comfort_pass=comfort_pass,
        collision=collision,
        offroad=offroad,
        score=score,
    )


# --- export ------------------------------------------------------------------------


def trace_to_json(trace: SimTrace) -> str:
    """Single-line structured dump of a trace, stable across runs."""
    payload = {
        "dt_s": trace.dt_s,
        "duration_s": trace.duration_s,
        "ego": [
            [round(float(value), 4) for value in (t, *row)]
            for t, row in zip(trace.times, trace.ego)
        ],
        "agents": [agent.id for agent in trace.agents],
        "events": [
            {"kind": e.kind.value, "time_s": round(e.time_s, 4), "agent_id": e.agent_id}
            for e in trace.events
        ],
    }
    return json.dumps(payload, sort_keys=True, ensure_ascii=False)


def score_summary(scores: Mapping[str, DrivingScore]) -> str:
    """Per-scenario score lines plus the aggregate mean."""
    lines = []
    for scenario_id in sorted(scores):
        sc = scores[scenario_id]
        flags = []
        if sc.collision:
            flags.append("collision")
        if sc.offroad:
            flags.append("offroad")
        suffix = f" [{', '.join(flags)}]" if flags else ""
        lines.append(f"{scenario_id}: {sc.score:.3f}{suffix}")
    if scores:
        mean = sum(sc.score for sc in scores.values()) / len(scores)
        lines.append(f"mean driving score: {mean:.3f}")
    return "\n".join(lines)
