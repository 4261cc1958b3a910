"""Quantitative evaluation: agent matching, error taxonomy, and Elo ratings.

The assignment solver is a potentials-based Hungarian method with an extra
pass that settles cost ties toward the lexicographically smallest pair list,
so results are reproducible down to the exact matching. Elo bookkeeping runs
on fixed-point integers internally, which keeps the total rating mass exactly
constant no matter how many votes are processed.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import random
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from shapely.geometry import Point as ShapelyPoint
from shapely.geometry import Polygon

from .errors import DomainError, SchemaError, ShapeError, ValidationError
from .geometry import bezier_heading, centerline_quad, normalize_heading, oriented_box
from .scenario import AgentState, AgentType, AreaKind, Scenario

logger = logging.getLogger(__name__)

PAD_COST = 1e6
# cost ties are compared after scaling by the matrix magnitude
_TIE_RTOL = 1e-9

ELO_K = 32.0
ELO_INITIAL = 1000.0
# internal ratings are integers in units of 2^-20 points
_ELO_SCALE = 1 << 20


# --- assignment --------------------------------------------------------------


def _solve_square(cost: np.ndarray) -> tuple[list[int], list[float], list[float]]:
    """Potentials method on a square matrix.

    Returns the matched column per row plus the final dual potentials (u, v),
    0-indexed, satisfying cost[i][j] >= u[i] + v[j] with equality on matched
    edges up to roundoff.
    """
    n = cost.shape[0]
    u = [0.0] * (n + 1)
    v = [0.0] * (n + 1)
    p = [0] * (n + 1)
    way = [0] * (n + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [math.inf] * (n + 1)
        used = [False] * (n + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = math.inf
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, n + 1):
                if used[j]:
                    continue
                cur = row[j - 1] - u[i0] - v[j]
                if cur < minv[j]:
                    minv[j] = cur
                    way[j] = j0
                if minv[j] < delta:
                    delta = minv[j]
                    j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0 != 0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    match = [-1] * n
    for j in range(1, n + 1):
        if p[j] != 0:
            match[p[j] - 1] = j - 1
    return match, u[1:], v[1:]


def _optimal_total(cost: np.ndarray) -> float:
    match, _, _ = _solve_square(cost)
    return float(sum(cost[i, j] for i, j in enumerate(match)))


def hungarian(cost) -> list[tuple[int, int]]:
    """Min-cost matching of size min(n, m) over a nonnegative cost matrix.

    Returns (row, column) pairs sorted by row. Among equal-cost matchings the
    lexicographically smallest pair list is chosen, which pins down the result
    on degenerate inputs such as grids of identical costs.
    """
    matrix = np.asarray(cost, dtype=float)
    if matrix.ndim != 2 or matrix.size == 0:
        raise ShapeError("cost matrix must be 2-d and non-empty")
    if not np.all(np.isfinite(matrix)) or np.any(matrix < 0.0):
        raise DomainError("cost matrix entries must be finite and non-negative")
    n, m = matrix.shape
    size = max(n, m)
    # zero-cost padding makes the matrix square without changing which real
    # pairs an optimal matching can use
    square = np.zeros((size, size), dtype=float)
    square[:n, :m] = matrix

    match, u, v = _solve_square(square)
    total = float(sum(square[i, j] for i, j in enumerate(match)))
    tol = _TIE_RTOL * max(1.0, abs(total))
    # only zero-reduced-cost edges can appear in an optimal matching, so the
    # tie pass below never has to test any other column
    edge_tol = _TIE_RTOL * max(1.0, float(np.max(square)))

    # settle ties: for each row in turn, adopt the smallest column that keeps
    # the total optimal, re-solving the remainder after every improvement
    fixed_cost = 0.0
    remaining_cols = list(range(size))
    for i in range(size):
        current = match[i]
        for j in remaining_cols:
            if j >= current:
                break
            if square[i, j] - u[i] - v[j] > edge_tol:
                continue
            rows_left = list(range(i + 1, size))
            cols_left = [c for c in remaining_cols if c != j]
            sub = square[np.ix_(rows_left, cols_left)]
            candidate = fixed_cost + float(square[i, j]) + (
                _optimal_total(sub) if rows_left else 0.0
            )
            if candidate <= total + tol:
                # re-derive an optimal completion consistent with this choice
                sub_match = _solve_square(sub)[0] if rows_left else []
                match[i] = j
                for r, jj in zip(rows_left, sub_match):
                    match[r] = cols_left[jj]
                break
        fixed_cost += float(square[i, match[i]])
        remaining_cols.remove(match[i])

    return sorted((i, j) for i, j in enumerate(match) if i < n and j < m)


# --- displacement ------------------------------------------------------------


@dataclass(frozen=True)
class DisplacementReport:
    """Matched center distances between a generated and a reference edit."""

    pairs: tuple[tuple[str, str, float], ...]
    mean_m: float | None
    max_m: float | None
    unmatched_generated: int
    unmatched_reference: int

    @property
    def matched(self) -> int:
        return len(self.pairs)


def _non_ego(agents: Sequence[AgentState]) -> list[AgentState]:
    return [a for a in agents if not a.is_ego]


def displacement_error(
    generated: Sequence[AgentState], reference: Sequence[AgentState]
) -> DisplacementReport:
    """Center-distance report over the min-cost matching of the two agent sets.

    The rectangular problem is squared off with a large pad cost; matches that
    land on a pad become unmatched counts. Ego vehicles never participate.
    """
    gen = _non_ego(generated)
    ref = _non_ego(reference)
    if not gen and not ref:
        return DisplacementReport(
            pairs=(), mean_m=None, max_m=None, unmatched_generated=0, unmatched_reference=0
        )
    if not gen or not ref:
        return DisplacementReport(
            pairs=(),
            mean_m=None,
            max_m=None,
            unmatched_generated=len(gen),
            unmatched_reference=len(ref),
        )
    size = max(len(gen), len(ref))
    cost = np.full((size, size), PAD_COST, dtype=float)
    for i, a in enumerate(gen):
        for j, b in enumerate(ref):
            cost[i, j] = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
    pairs = []
    for i, j in hungarian(cost):
        if i < len(gen) and j < len(ref) and cost[i, j] < PAD_COST:
            pairs.append((gen[i].id, ref[j].id, float(cost[i, j])))
    matched = len(pairs)
    distances = [d for _, _, d in pairs]
    return DisplacementReport(
        pairs=tuple(pairs),
        mean_m=(sum(distances) / matched) if matched else None,
        max_m=max(distances) if matched else None,
        unmatched_generated=len(gen) - matched,
        unmatched_reference=len(ref) - matched,
    )


# --- error taxonomy ----------------------------------------------------------


class ErrorCategory(enum.Enum):
    POSITION = "POSITION"
    HEADING = "HEADING"
    LOGIC = "LOGIC"
    NONE = "NONE"


@dataclass(frozen=True)
class ErrorLabel:
    agent_id: str
    category: ErrorCategory
    detail: str = ""


@dataclass(frozen=True)
class ErrorThresholds:
    position_m: float = 5.0
    heading_rad: float = math.radians(30.0)
    overlap_fraction: float = 0.2

    def __post_init__(self) -> None:
        for name in ("position_m", "heading_rad", "overlap_fraction"):
            value = float(getattr(self, name))
            if not math.isfinite(value) or value <= 0.0:
                raise ValidationError(f"{name} must be positive")
            object.__setattr__(self, name, value)


_DRIVABLE_KINDS = (AreaKind.DRIVABLE, AreaKind.CARPARK)
_HEADING_CHECKED_TYPES = (AgentType.VEHICLE, AgentType.BICYCLE)


def _nearest_centerline_heading(scenario: Scenario, agent: AgentState) -> float | None:
    """Tangent direction of the closest centerline point available to the agent."""
    entities = []
    if agent.lane_id is not None:
        for lane in scenario.lanes:
            if lane.id == agent.lane_id:
                entities = [lane]
        for conn in scenario.lane_connectors:
            if conn.id == agent.lane_id:
                entities = [conn]
    if not entities:
        entities = list(scenario.lanes) + list(scenario.lane_connectors)
    if not entities:
        return None
    best: tuple[float, float] | None = None
    ts = np.linspace(0.0, 1.0, 256)
    cx, cy = agent.center
    for entity in entities:
        quad = centerline_quad(entity.geometry)
        arr = quad.array
        mu = 1.0 - ts
        basis = np.stack([mu**3, 3 * ts * mu**2, 3 * ts**2 * mu, ts**3], axis=1)
        pts = basis @ arr
        d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
        k = int(np.argmin(d2))
        if best is None or d2[k] < best[0]:
            best = (float(d2[k]), bezier_heading(quad, float(ts[k])))
    return best[1] if best is not None else None


def _agent_polygon(agent: AgentState) -> Polygon:
    return Polygon(oriented_box(agent.center, agent.heading, agent.width, agent.length))


def classify_errors(
    generated: Sequence[AgentState],
    reference: Sequence[AgentState],
    scenario: Scenario,
    thresholds: ErrorThresholds | None = None,
) -> list[ErrorLabel]:
    """Heuristic per-agent error taxonomy against a reference edit.

    Checks run in severity order and the first hit wins: misplacement (too far
    from its reference match, no match at all, or off every drivable surface),
    then misorientation relative to the nearest centerline for vehicle types,
    then implausible overlap with another agent, else no error.
    """
    thresholds = thresholds or ErrorThresholds()
    report = displacement_error(generated, reference)
    distance_by_id = {gen_id: dist for gen_id, _, dist in report.pairs}
    matched_ids = set(distance_by_id)
    gen = _non_ego(generated)

    drivable = [
        area.polygon() for area in scenario.areas if area.kind in _DRIVABLE_KINDS
    ]
    all_agents = list(generated)
    labels: list[ErrorLabel] = []
    for agent in gen:
        if agent.id not in matched_ids:
            labels.append(
                ErrorLabel(agent.id, ErrorCategory.POSITION, "no reference counterpart")
            )
            continue
        distance = distance_by_id[agent.id]
        if distance > thresholds.position_m:
            labels.append(
                ErrorLabel(
                    agent.id,
                    ErrorCategory.POSITION,
                    f"{distance:.2f} m from its reference position",
                )
            )
            continue
        if drivable and not any(p.covers(ShapelyPoint(agent.center)) for p in drivable):
            labels.append(
                ErrorLabel(agent.id, ErrorCategory.POSITION, "center off every drivable area")
            )
            continue
        if agent.agent_type in _HEADING_CHECKED_TYPES:
            lane_heading = _nearest_centerline_heading(scenario, agent)
            if lane_heading is not None:
                gap = abs(normalize_heading(agent.heading - lane_heading))
                if gap > thresholds.heading_rad:
                    labels.append(
                        ErrorLabel(
                            agent.id,
                            ErrorCategory.HEADING,
                            f"{math.degrees(gap):.1f} deg off the lane direction",
                        )
                    )
                    continue
        box = _agent_polygon(agent)
        overlap_with = None
        for other in all_agents:
            if other.id == agent.id:
                continue
            other_box = _agent_polygon(other)
            inter = box.intersection(other_box).area
            smaller = min(box.area, other_box.area)
            if smaller > 0.0 and inter / smaller > thresholds.overlap_fraction:
                overlap_with = (other.id, inter / smaller)
                break
        if overlap_with is not None:
            labels.append(
                ErrorLabel(
                    agent.id,
                    ErrorCategory.LOGIC,
                    f"overlaps {overlap_with[0]} by {overlap_with[1] * 100.0:.0f}%",
                )
            )
            continue
        labels.append(ErrorLabel(agent.id, ErrorCategory.NONE, ""))
    return labels


# --- Elo ----------------------------------------------------------------------


class VoteOutcome(enum.Enum):
    A_WINS = "A_WINS"
    B_WINS = "B_WINS"
    TIE = "TIE"


@dataclass(frozen=True)
class VoteRecord:
    matchup_id: str
    model_a: str
    model_b: str
    scenario_id: str
    outcome: VoteOutcome
    rater_id: str = ""
    timestamp: float = 0.0

    def __post_init__(self) -> None:
        for name in ("matchup_id", "model_a", "model_b", "scenario_id"):
            value = getattr(self, name)
            if not isinstance(value, str) or not value:
                raise ValidationError(f"{name} must be a non-empty string")
        if self.model_a == self.model_b:
            raise ValidationError("a vote needs two distinct models")
        if not isinstance(self.outcome, VoteOutcome):
            raise ValidationError(f"outcome must be a VoteOutcome, got {self.outcome!r}")
        object.__setattr__(self, "timestamp", float(self.timestamp))


def vote_to_line(vote: VoteRecord) -> str:
    return json.dumps(
        {
            "matchup_id": vote.matchup_id,
            "model_a": vote.model_a,
            "model_b": vote.model_b,
            "scenario_id": vote.scenario_id,
            "outcome": vote.outcome.value,
            "rater_id": vote.rater_id,
            "timestamp": vote.timestamp,
        },
        ensure_ascii=False,
    )


def vote_from_line(line: str) -> VoteRecord:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"vote record is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise SchemaError("vote record must be an object")
    try:
        outcome = VoteOutcome(str(raw["outcome"]))
    except (KeyError, ValueError):
        raise SchemaError(f"vote record has no valid outcome: {line[:120]!r}") from None
    missing = [k for k in ("matchup_id", "model_a", "model_b", "scenario_id") if k not in raw]
    if missing:
        raise SchemaError(f"vote record missing keys: {', '.join(missing)}")
    return VoteRecord(
        matchup_id=str(raw["matchup_id"]),
        model_a=str(raw["model_a"]),
        model_b=str(raw["model_b"]),
        scenario_id=str(raw["scenario_id"]),
        outcome=outcome,
        rater_id=str(raw.get("rater_id", "")),
        timestamp=float(raw.get("timestamp", 0.0)),
    )


def load_vote_log(path: str | Path) -> list[VoteRecord]:
    votes = []
    for line in Path(path).read_text("utf-8").splitlines():
        if line.strip():
            votes.append(vote_from_line(line))
    return votes


def expected_score(rating_a: float, rating_b: float) -> float:
    """Win probability of the first player under the Elo logistic model."""
    return 1.0 / (1.0 + 10.0 ** ((rating_b - rating_a) / 400.0))


def compute_elo(
    votes: Sequence[VoteRecord],
    k: float = ELO_K,
    initial: float = ELO_INITIAL,
    seed: int = 0,
) -> dict[str, float]:
    """Online Elo over the votes in a seed-determined order.

    Updates move fixed-point integer amounts between the two players, so the
    sum of all ratings stays exactly ``models * initial`` forever.
    """
    if not votes:
        raise ValidationError("compute_elo needs at least one vote")
    order = list(votes)
    random.Random(seed).shuffle(order)
    start = round(initial * _ELO_SCALE)
    ratings: dict[str, int] = {}
    for vote in order:
        ra = ratings.setdefault(vote.model_a, start)
        rb = ratings.setdefault(vote.model_b, start)
        expected = expected_score(ra / _ELO_SCALE, rb / _ELO_SCALE)
        if vote.outcome is VoteOutcome.A_WINS:
            actual = 1.0
        elif vote.outcome is VoteOutcome.B_WINS:
            actual = 0.0
        else:
            actual = 0.5
        delta = round(k * (actual - expected) * _ELO_SCALE)
        ratings[vote.model_a] = ra + delta
        ratings[vote.model_b] = rb - delta
    return {model: value / _ELO_SCALE for model, value in ratings.items()}


def bootstrap_ci(
    votes: Sequence[VoteRecord],
    rounds: int = 1000,
    seed: int = 0,
    k: float = ELO_K,
    initial: float = ELO_INITIAL,
) -> dict[str, tuple[float, float]]:
    """95% rating intervals from vote resampling.

    Every round draws votes with replacement and recomputes ratings under its
    own derived seed (master seed + round index), so rounds are independent of
    execution order. The raw percentile band is recentered on the full-data
    point estimate through the bootstrap median, which guarantees the interval
    covers the reported rating.
    """
    if rounds < 100:
        raise ValidationError("bootstrap needs at least 100 rounds")
    votes = list(votes)
    if not votes:
        raise ValidationError("bootstrap_ci needs at least one vote")
    point = compute_elo(votes, k=k, initial=initial, seed=seed)
    models = sorted(point)
    samples = {model: np.empty(rounds, dtype=float) for model in models}
    n = len(votes)
    for r in range(rounds):
        rng = random.Random(seed + r + 1)
        resampled = [votes[rng.randrange(n)] for _ in range(n)]
        ratings = compute_elo(resampled, k=k, initial=initial, seed=seed + r + 1)
        for model in models:
            samples[model][r] = ratings.get(model, initial)
    intervals = {}
    for model in models:
        lo, med, hi = np.percentile(samples[model], [2.5, 50.0, 97.5])
        intervals[model] = (
            float(point[model] + (lo - med)),
            float(point[model] + (hi - med)),
        )
    return intervals


@dataclass(frozen=True)
class EloEntry:
    model: str
    rating: float
    ci_low: float
    ci_high: float
    votes: int
    rank: int | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.model, str) or not self.model:
            raise ValidationError("model must be a non-empty string")
        if not (self.ci_low <= self.rating <= self.ci_high):
            raise ValidationError(
                f"interval [{self.ci_low}, {self.ci_high}] must cover rating {self.rating}"
            )
        if self.rank is not None and self.rank < 1:
            raise ValidationError("rank must be at least 1")


def compute_rank(entries: Sequence[EloEntry]) -> list[EloEntry]:
    """Attach ranks: one plus the number of strictly dominating models.

    A model dominates another when its interval lies entirely above, that is
    its lower bound exceeds the other's upper bound. Order is preserved.
    """
    ranked = []
    for entry in entries:
        better = sum(1 for other in entries if other is not entry and other.ci_low > entry.ci_high)
        ranked.append(replace(entry, rank=1 + better))
    return ranked


def elo_table(
    votes: Sequence[VoteRecord],
    rounds: int = 1000,
    seed: int = 0,
    k: float = ELO_K,
    initial: float = ELO_INITIAL,
) -> list[EloEntry]:
    """Full leaderboard: ratings, intervals and ranks, best rating first."""
    ratings = compute_elo(votes, k=k, initial=initial, seed=seed)
    intervals = bootstrap_ci(votes, rounds=rounds, seed=seed, k=k, initial=initial)
    counts: dict[str, int] = {}
    for vote in votes:
        counts[vote.model_a] = counts.get(vote.model_a, 0) + 1
        counts[vote.model_b] = counts.get(vote.model_b, 0) + 1
    entries = [
        EloEntry(
            model=model,
            rating=ratings[model],
            ci_low=intervals[model][0],
            ci_high=intervals[model][1],
            votes=counts.get(model, 0),
        )
        for model in sorted(ratings, key=lambda m: (-ratings[m], m))
    ]
    return compute_rank(entries)


def format_elo_table(entries: Sequence[EloEntry]) -> str:
    """Human-readable leaderboard block."""
    lines = [f"{'rank':>4}  {'model':<24} {'elo':>7}  {'95% CI':>18}  {'votes':>5}"]
    for entry in entries:
        ci = f"[{entry.ci_low:7.1f}, {entry.ci_high:7.1f}]"
        rank = entry.rank if entry.rank is not None else "-"
        lines.append(
            f"{rank:>4}  {entry.model:<24} {entry.rating:7.1f}  {ci:>18}  {entry.votes:>5}"
        )
    return "\n".join(lines)
