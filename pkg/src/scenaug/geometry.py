"""Planar lane geometry: cubic curves, arc-length lookups, curve fitting.

Everything lives in the ego frame: x east, y north, meters, headings in
radians within (-pi, pi] where 0 points east. Curved centerlines are cubic
Bezier segments held as four control points; polyline centerlines are fitted
to an equivalent curve on demand so both representations answer the same
arc-length queries.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import TYPE_CHECKING, Sequence

import numpy as np

from .errors import DegenerateError, DomainError, RangeError, UnknownIdError

if TYPE_CHECKING:  # pragma: no cover
    from .scenario import LaneGeometry, Scenario

logger = logging.getLogger(__name__)

Point = tuple[float, float]

# Composite 16-point Gauss-Legendre rule over fixed subdivisions of [0, 1].
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_SEGMENTS = 64

# Arc positions past either curve end are clamped within this margin and
# rejected beyond it.
ARC_GRACE_M = 0.5


def normalize_heading(heading: float) -> float:
    """Wrap a finite angle into (-pi, pi]."""
    if not math.isfinite(heading):
        raise DomainError(f"heading must be finite, got {heading!r}")
    wrapped = math.atan2(math.sin(heading), math.cos(heading))
    if wrapped <= -math.pi:
        wrapped = math.pi
    return wrapped


@dataclass(frozen=True)
class ControlQuad:
    """Control points of one cubic Bezier lane segment."""

    p0: Point
    p1: Point
    p2: Point
    p3: Point

    def __post_init__(self) -> None:
        pts = []
        for name in ("p0", "p1", "p2", "p3"):
            raw = getattr(self, name)
            if len(raw) != 2 or not all(math.isfinite(float(c)) for c in raw):
                raise DegenerateError(f"control point {name}={raw!r} is not a finite 2-d point")
            pt = (float(raw[0]), float(raw[1]))
            object.__setattr__(self, name, pt)
            pts.append(pt)
        if all(p == pts[0] for p in pts[1:]):
            raise DegenerateError("all four control points coincide")

    @property
    def array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2, self.p3], dtype=float)


@dataclass(frozen=True)
class LaneAnchor:
    """A point on a lane centerline, addressed by arc length from the start.

    ``clamped`` is the warning flag set when the requested arc position fell
    past a curve end but within the grace margin and was pulled back onto it.
    """

    position: Point
    heading: float
    arc_length_from_start: float
    clamped: bool = False


def _check_t(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"curve parameter must lie in [0, 1], got {t!r}")
    return t


def bezier_point(quad: ControlQuad, t: float) -> Point:
    """Evaluate the curve via the Bernstein basis; exact at both endpoints."""
    t = _check_t(t)
    mt = 1.0 - t
    w0 = mt * mt * mt
    w1 = 3.0 * mt * mt * t
    w2 = 3.0 * mt * t * t
    w3 = t * t * t
    x = w0 * quad.p0[0] + w1 * quad.p1[0] + w2 * quad.p2[0] + w3 * quad.p3[0]
    y = w0 * quad.p0[1] + w1 * quad.p1[1] + w2 * quad.p2[1] + w3 * quad.p3[1]
    return (x, y)


def _derivative(quad: ControlQuad, t: float) -> tuple[float, float]:
    mt = 1.0 - t
    dx = 3.0 * (
        mt * mt * (quad.p1[0] - quad.p0[0])
        + 2.0 * mt * t * (quad.p2[0] - quad.p1[0])
        + t * t * (quad.p3[0] - quad.p2[0])
    )
    dy = 3.0 * (
        mt * mt * (quad.p1[1] - quad.p0[1])
        + 2.0 * mt * t * (quad.p2[1] - quad.p1[1])
        + t * t * (quad.p3[1] - quad.p2[1])
    )
    return dx, dy


def bezier_heading(quad: ControlQuad, t: float) -> float:
    """Tangent direction at t.

    Where the derivative vanishes (degenerate parameterizations can pinch it
    to zero at an endpoint) the parameter is stepped toward the interior in
    1e-6 increments until the tangent is usable.
    """
    t = _check_t(t)
    probe = t
    for attempt in range(12):
        dx, dy = _derivative(quad, probe)
        if math.hypot(dx, dy) > 1e-12:
            return normalize_heading(math.atan2(dy, dx))
        step = 1e-6 * (attempt + 1)
        probe = t + step if t < 0.5 else t - step
        probe = min(max(probe, 0.0), 1.0)
    raise DegenerateError(f"curve tangent vanishes around t={t}")


def _speed(quad: ControlQuad, ts: np.ndarray) -> np.ndarray:
    p = quad.array
    mt = 1.0 - ts
    dx = 3.0 * (mt * mt * (p[1, 0] - p[0, 0]) + 2.0 * mt * ts * (p[2, 0] - p[1, 0]) + ts * ts * (p[3, 0] - p[2, 0]))
    dy = 3.0 * (mt * mt * (p[1, 1] - p[0, 1]) + 2.0 * mt * ts * (p[2, 1] - p[1, 1]) + ts * ts * (p[3, 1] - p[2, 1]))
    return np.hypot(dx, dy)


def _straight_axis(quad: ControlQuad) -> tuple[Point, float] | None:
    """Detect an exactly straight, forward-traversed segment.

    Returns (unit direction, length) when every control point sits on the
    p0->p3 chord and their chord parameters are non-decreasing. Straight
    lanes then bypass the quadrature entirely, which keeps arc-length
    lookups on them exact rather than approximate.
    """
    p = quad.array
    chord = p[3] - p[0]
    length = float(math.hypot(chord[0], chord[1]))
    if length < 1e-12:
        return None
    ux, uy = float(chord[0]) / length, float(chord[1]) / length
    tol = 1e-9 * max(1.0, length)
    along = []
    for q in p:
        dxq, dyq = q[0] - p[0, 0], q[1] - p[0, 1]
        if abs(ux * dyq - uy * dxq) > tol:
            return None
        along.append(ux * dxq + uy * dyq)
    if along[1] < -tol or along[2] < along[1] - tol or along[2] > length + tol:
        return None
    return (ux, uy), length


@lru_cache(maxsize=512)
def _cumulative(quad: ControlQuad) -> tuple[np.ndarray, np.ndarray]:
    """Segment boundaries in t and cumulative arc length at each boundary."""
    bounds = np.linspace(0.0, 1.0, _SEGMENTS + 1)
    h = 1.0 / _SEGMENTS
    mids = (bounds[:-1] + bounds[1:]) / 2.0
    ts = mids[:, None] + (h / 2.0) * _GL_NODES[None, :]
    seg_lengths = (h / 2.0) * (_speed(quad, ts) @ _GL_WEIGHTS)
    cum = np.concatenate([[0.0], np.cumsum(seg_lengths)])
    return bounds, cum


def arc_length(quad: ControlQuad) -> float:
    straight = _straight_axis(quad)
    if straight is not None:
        return straight[1]
    return float(_cumulative(quad)[1][-1])


def _partial_length(quad: ControlQuad, t0: float, t1: float) -> float:
    if t1 <= t0:
        return 0.0
    mid = 0.5 * (t0 + t1)
    half = 0.5 * (t1 - t0)
    ts = mid + half * _GL_NODES
    return float(half * (_speed(quad, ts) @ _GL_WEIGHTS))


def _param_at_arc(quad: ControlQuad, s: float) -> float:
    """Invert cumulative arc length by bisection inside its bracketing segment."""
    bounds, cum = _cumulative(quad)
    idx = int(np.searchsorted(cum, s, side="right")) - 1
    idx = min(max(idx, 0), len(bounds) - 2)
    lo, hi = float(bounds[idx]), float(bounds[idx + 1])
    base = float(cum[idx])
    t_lo = lo
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if base + _partial_length(quad, t_lo, mid) < s:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def point_at_arc_length(quad: ControlQuad, s: float) -> LaneAnchor:
    """Anchor at arc position s, measured in meters from the curve start."""
    if not math.isfinite(s):
        raise RangeError(f"arc position must be finite, got {s!r}")
    total = arc_length(quad)
    clamped = False
    s_eff = float(s)
    if s_eff < 0.0:
        if s_eff < -ARC_GRACE_M:
            raise RangeError(f"arc position {s_eff:.3f} m lies before the curve start")
        logger.warning("arc position %.3f m clamped to curve start", s_eff)
        s_eff, clamped = 0.0, True
    elif s_eff > total:
        if s_eff > total + ARC_GRACE_M:
            raise RangeError(f"arc position {s_eff:.3f} m exceeds curve length {total:.3f} m")
        logger.warning("arc position %.3f m clamped to curve end (%.3f m)", s_eff, total)
        s_eff, clamped = total, True

    straight = _straight_axis(quad)
    if straight is not None:
        (ux, uy), _ = straight
        position = (quad.p0[0] + ux * s_eff, quad.p0[1] + uy * s_eff)
        heading = normalize_heading(math.atan2(uy, ux))
        return LaneAnchor(position, heading, s_eff, clamped)

    t = _param_at_arc(quad, s_eff)
    return LaneAnchor(bezier_point(quad, t), bezier_heading(quad, t), s_eff, clamped)


def offset_point(anchor: LaneAnchor, lateral_m: float) -> Point:
    """Displace an anchor perpendicular to its heading; positive is left."""
    if not math.isfinite(lateral_m):
        raise DomainError(f"lateral offset must be finite, got {lateral_m!r}")
    x, y = anchor.position
    return (x - lateral_m * math.sin(anchor.heading), y + lateral_m * math.cos(anchor.heading))


def resample_polyline(points: Sequence[Point], spacing: float = 5.0) -> list[Point]:
    """Points at arc positions 0, spacing, 2*spacing, ... plus the exact end.

    Spacing is measured along the polyline, so a corner between two samples
    never stretches or shrinks the step. The final point is always the input
    endpoint; when the total length is an exact multiple of the spacing the
    last regular sample and the endpoint coincide.
    """
    if not (math.isfinite(spacing) and spacing > 0.0):
        raise DegenerateError(f"spacing must be a positive number, got {spacing!r}")
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] < 2 or pts.shape[1] != 2:
        raise DegenerateError("polyline needs at least two 2-d points")
    if not np.all(np.isfinite(pts)):
        raise DegenerateError("polyline contains non-finite coordinates")
    seg = np.hypot(*np.diff(pts, axis=0).T)
    if np.any(seg == 0.0):
        pts = pts[np.concatenate([[True], seg > 0.0])]
        if pts.shape[0] < 2:
            raise DegenerateError("polyline has zero total length")
        seg = np.hypot(*np.diff(pts, axis=0).T)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = float(cum[-1])

    n_full = int(math.floor(total / spacing - 1e-9))
    targets = [i * spacing for i in range(max(n_full, 0) + 1)]
    if total - targets[-1] > 1e-9:
        targets.append(total)
    else:
        targets[-1] = total
    tarr = np.asarray(targets)
    xs = np.interp(tarr, cum, pts[:, 0])
    ys = np.interp(tarr, cum, pts[:, 1])
    return [(float(x), float(y)) for x, y in zip(xs, ys)]


def oriented_box(center: Point, heading: float, width: float, length: float) -> list[Point]:
    """Corner points of an oriented rectangle, counterclockwise.

    ``length`` runs along the heading, ``width`` across it; corners start at
    the front-left.
    """
    if width <= 0.0 or length <= 0.0:
        raise DomainError("box width and length must be positive")
    cx, cy = float(center[0]), float(center[1])
    ch, sh = math.cos(heading), math.sin(heading)
    hl, hw = length / 2.0, width / 2.0
    return [
        (cx + dx * ch - dy * sh, cy + dx * sh + dy * ch)
        for dx, dy in ((hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw))
    ]


@dataclass(frozen=True)
class FitResult:
    quad: ControlQuad
    max_deviation_m: float


def _eval_many(ctrl: np.ndarray, u: np.ndarray) -> np.ndarray:
    mu = 1.0 - u
    basis = np.stack([mu**3, 3.0 * u * mu**2, 3.0 * u**2 * mu, u**3], axis=1)
    return basis @ ctrl


def _reproject(ctrl: np.ndarray, pts: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Newton foot-point projection of every sample onto the curve."""
    u = u.copy()
    for _ in range(30):
        mu = 1.0 - u
        basis = np.stack([mu**3, 3.0 * u * mu**2, 3.0 * u**2 * mu, u**3], axis=1)
        dbasis = np.stack(
            [-3.0 * mu**2, 3.0 * mu**2 - 6.0 * u * mu, 6.0 * u * mu - 3.0 * u**2, 3.0 * u**2],
            axis=1,
        )
        ddbasis = np.stack([6.0 * mu, -12.0 * mu + 6.0 * u, 6.0 * mu - 12.0 * u, 6.0 * u], axis=1)
        diff = basis @ ctrl - pts
        der = dbasis @ ctrl
        dder = ddbasis @ ctrl
        num = np.einsum("ij,ij->i", diff, der)
        den = np.einsum("ij,ij->i", der, der) + np.einsum("ij,ij->i", diff, dder)
        safe = np.abs(den) > 1e-12
        step = np.where(safe, num / np.where(safe, den, 1.0), 0.0)
        un = np.clip(u - step, 0.0, 1.0)
        un[0], un[-1] = 0.0, 1.0
        done = bool(np.max(np.abs(un - u)) < 1e-15)
        u = un
        if done:
            break
    return u


def _linear_controls(pts: np.ndarray, p0: np.ndarray, p3: np.ndarray, u: np.ndarray) -> np.ndarray:
    mu = 1.0 - u
    design = np.column_stack([3.0 * u * mu**2, 3.0 * u**2 * mu])
    rhs = pts - np.outer(mu**3, p0) - np.outer(u**3, p3)
    sol, *_ = np.linalg.lstsq(design, rhs, rcond=None)
    return np.array([p0, sol[0], sol[1], p3])


def _refine_joint(
    pts: np.ndarray, ctrl: np.ndarray, u: np.ndarray, max_iter: int = 60
) -> tuple[np.ndarray, np.ndarray]:
    """Damped Gauss-Newton over interior controls and sample parameters."""
    n = pts.shape[0]
    p0, p3 = ctrl[0], ctrl[3]
    p1, p2 = ctrl[1].copy(), ctrl[2].copy()
    lam = 1e-8
    resid = _eval_many(np.array([p0, p1, p2, p3]), u) - pts
    cost = float(np.sum(resid**2))
    idx = np.arange(1, n - 1)
    for _ in range(max_iter):
        mu = 1.0 - u
        b1 = 3.0 * u * mu**2
        b2 = 3.0 * u**2 * mu
        dbasis = np.stack(
            [-3.0 * mu**2, 3.0 * mu**2 - 6.0 * u * mu, 6.0 * u * mu - 3.0 * u**2, 3.0 * u**2],
            axis=1,
        )
        der = dbasis @ np.array([p0, p1, p2, p3])
        resid = _eval_many(np.array([p0, p1, p2, p3]), u) - pts
        # columns: p1.x p1.y p2.x p2.y then one parameter per interior sample
        jac = np.zeros((2 * n, 4 + n - 2))
        jac[0::2, 0] = b1
        jac[1::2, 1] = b1
        jac[0::2, 2] = b2
        jac[1::2, 3] = b2
        jac[2 * idx, 4 + idx - 1] = der[idx, 0]
        jac[2 * idx + 1, 4 + idx - 1] = der[idx, 1]
        grad = jac.T @ resid.reshape(-1)
        normal = jac.T @ jac
        damping = np.diag(np.maximum(np.diag(normal), 1e-12))
        accepted = False
        for _ in range(40):
            try:
                step = np.linalg.solve(normal + lam * damping, -grad)
            except np.linalg.LinAlgError:
                lam = min(lam * 10.0, 1e10)
                continue
            p1n = p1 + step[0:2]
            p2n = p2 + step[2:4]
            un = u.copy()
            un[1:-1] = np.clip(u[1:-1] + step[4:], 0.0, 1.0)
            rn = _eval_many(np.array([p0, p1n, p2n, p3]), un) - pts
            cn = float(np.sum(rn**2))
            if cn <= cost:
                accepted = True
                lam = max(lam * 0.1, 1e-14)
                break
            lam = min(lam * 10.0, 1e10)
        if not accepted:
            break
        improved = cost - cn
        p1, p2, u, cost = p1n, p2n, un, cn
        if cost < 1e-26 or improved < 1e-14 * max(cost, 1e-22):
            break
    return np.array([p0, p1, p2, p3]), u


def fit_bezier(points: Sequence[Point]) -> FitResult:
    """Least-squares cubic through ordered samples, endpoints pinned.

    Interior controls and per-sample parameters are optimized jointly with a
    damped Gauss-Newton iteration, started from both chord-length and uniform
    parameterizations, so samples that already lie on some cubic curve are
    reproduced essentially exactly. The reported deviation is the largest
    distance from an input point to its fitted curve position.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 4:
        raise DegenerateError("curve fitting needs at least four 2-d points")
    if not np.all(np.isfinite(pts)):
        raise DegenerateError("curve fitting input contains non-finite coordinates")
    chord = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(pts, axis=0).T))])
    total = float(chord[-1])
    if total <= 0.0:
        raise DegenerateError("curve fitting input has zero total length")

    p0, p3 = pts[0], pts[-1]
    best_ctrl: np.ndarray | None = None
    best_dev = math.inf
    for u0 in (chord / total, np.linspace(0.0, 1.0, pts.shape[0])):
        ctrl = _linear_controls(pts, p0, p3, u0)
        u = u0
        for _ in range(3):
            ctrl, u = _refine_joint(pts, ctrl, u)
            resid = _eval_many(ctrl, u) - pts
            dev = float(np.max(np.hypot(resid[:, 0], resid[:, 1])))
            if dev < best_dev:
                best_dev = dev
                best_ctrl = ctrl
            if best_dev < 1e-9:
                break
            # re-seed parameters from the true foot points before retrying
            u = _reproject(ctrl, pts, u)
        if best_dev < 1e-9:
            break

    assert best_ctrl is not None
    quad = ControlQuad(
        tuple(best_ctrl[0]), tuple(best_ctrl[1]), tuple(best_ctrl[2]), tuple(best_ctrl[3])
    )
    return FitResult(quad, best_dev)


@lru_cache(maxsize=512)
def _quad_for_polyline(polyline: tuple[Point, ...]) -> ControlQuad:
    pts: Sequence[Point] = polyline
    if len(pts) < 4:
        seg = np.hypot(*np.diff(np.asarray(pts, dtype=float), axis=0).T)
        total = float(np.sum(seg))
        if total <= 0.0:
            raise DegenerateError("polyline has zero total length")
        pts = resample_polyline(pts, spacing=total / 3.0)
    result = fit_bezier(pts)
    logger.debug("fitted centerline quad, max deviation %.6f m", result.max_deviation_m)
    return result.quad


def centerline_quad(geometry: "LaneGeometry") -> ControlQuad:
    """The curve form of a centerline, fitting polyline geometry on demand."""
    if geometry.bezier is not None:
        return ControlQuad(*geometry.bezier)
    return _quad_for_polyline(geometry.polyline)


def lane_point_tool(scenario: "Scenario", entity_id: str, distance_m: float) -> LaneAnchor:
    """Anchor on a lane or connector centerline at an arc distance from its start.

    This is the geometry lookup exposed to editing agents through the inline
    tool protocol.
    """
    geometry = None
    for entity in list(scenario.lanes) + list(scenario.lane_connectors):
        if entity.id == entity_id:
            geometry = entity.geometry
            break
    if geometry is None:
        raise UnknownIdError(f"no lane or connector with id {entity_id!r}")
    return point_at_arc_length(centerline_quad(geometry), distance_m)
