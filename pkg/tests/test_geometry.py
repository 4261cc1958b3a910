import math
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from scenaug.errors import DegenerateError, DomainError, RangeError, UnknownIdError
from scenaug.fixtures import single_lane_scenario
from scenaug.geometry import (
    ControlQuad,
    LaneAnchor,
    arc_length,
    bezier_heading,
    bezier_point,
    fit_bezier,
    lane_point_tool,
    normalize_heading,
    offset_point,
    point_at_arc_length,
    resample_polyline,
)

import oracles


def random_quad(rng: random.Random, scale: float = 50.0) -> ControlQuad:
    pts = [(rng.uniform(-scale, scale), rng.uniform(-scale, scale)) for _ in range(4)]
    return ControlQuad(*pts)


def lane_like_quad(rng: random.Random) -> ControlQuad:
    """Quads without cusps or loops, shaped like plausible lane segments."""
    span = rng.uniform(30.0, 60.0)
    return ControlQuad(
        (0.0, 0.0),
        (span / 3.0 + rng.uniform(-3.0, 3.0), rng.uniform(-8.0, 8.0)),
        (2.0 * span / 3.0 + rng.uniform(-3.0, 3.0), rng.uniform(-8.0, 8.0)),
        (span, rng.uniform(-8.0, 8.0)),
    )


class TestBezierPoint:
    def test_known_value(self):
        quad = ControlQuad((0.0, 0.0), (0.0, 10.0), (10.0, 10.0), (10.0, 0.0))
        assert bezier_point(quad, 0.5) == (5.0, 7.5)

    def test_matches_de_casteljau(self):
        rng = random.Random(11)
        for _ in range(200):
            quad = random_quad(rng)
            t = rng.random()
            expected = oracles.decasteljau_point(quad.array, t)
            got = bezier_point(quad, t)
            assert math.dist(got, expected) < 1e-9

    def test_endpoints_exact(self):
        rng = random.Random(5)
        for _ in range(1000):
            quad = random_quad(rng)
            assert bezier_point(quad, 0.0) == quad.p0
            assert bezier_point(quad, 1.0) == quad.p3

    @pytest.mark.parametrize("t", [-0.1, 1.1, float("nan"), float("inf")])
    def test_domain_error(self, t):
        quad = ControlQuad((0.0, 0.0), (1.0, 1.0), (2.0, 1.0), (3.0, 0.0))
        with pytest.raises(DomainError):
            bezier_point(quad, t)

    @given(st.floats(0.0, 1.0))
    @settings(max_examples=200, deadline=None)
    def test_point_inside_control_bbox(self, t):
        quad = ControlQuad((0.0, 0.0), (4.0, 9.0), (12.0, -3.0), (20.0, 2.0))
        x, y = bezier_point(quad, t)
        xs = [p[0] for p in (quad.p0, quad.p1, quad.p2, quad.p3)]
        ys = [p[1] for p in (quad.p0, quad.p1, quad.p2, quad.p3)]
        assert min(xs) - 1e-9 <= x <= max(xs) + 1e-9
        assert min(ys) - 1e-9 <= y <= max(ys) + 1e-9

    def test_all_coincident_rejected(self):
        with pytest.raises(DegenerateError):
            ControlQuad((1.0, 1.0), (1.0, 1.0), (1.0, 1.0), (1.0, 1.0))


class TestBezierHeading:
    def test_known_value(self):
        quad = ControlQuad((0.0, 0.0), (0.0, 10.0), (10.0, 10.0), (10.0, 0.0))
        assert bezier_heading(quad, 0.5) == pytest.approx(0.0, abs=1e-12)

    def test_matches_finite_differences(self):
        rng = random.Random(23)
        checked = 0
        while checked < 150:
            quad = random_quad(rng)
            t = rng.uniform(0.05, 0.95)
            if oracles.decasteljau_speed(quad.array, t) < 1.0:
                continue  # keep the finite-difference reference well conditioned
            expected = oracles.finite_difference_heading(quad.array, t)
            assert oracles.angle_gap(bezier_heading(quad, t), expected) < 1e-5
            checked += 1

    def test_range(self):
        rng = random.Random(31)
        for _ in range(300):
            h = bezier_heading(random_quad(rng), rng.random())
            assert -math.pi < h <= math.pi

    def test_degenerate_endpoint_steps_inward(self):
        quad = ControlQuad((0.0, 0.0), (0.0, 0.0), (30.0, 0.0), (30.0, 0.0))
        assert bezier_heading(quad, 0.0) == pytest.approx(0.0, abs=1e-9)
        assert bezier_heading(quad, 1.0) == pytest.approx(0.0, abs=1e-9)

    @given(st.floats(-50.0, 50.0))
    @settings(max_examples=200, deadline=None)
    def test_normalize_heading_range(self, h):
        wrapped = normalize_heading(h)
        assert -math.pi < wrapped <= math.pi
        assert math.isclose(math.cos(wrapped), math.cos(h), abs_tol=1e-9)
        assert math.isclose(math.sin(wrapped), math.sin(h), abs_tol=1e-9)


class TestArcLength:
    def test_straight_line(self):
        quad = ControlQuad((0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0))
        assert arc_length(quad) == 30.0

    def test_degenerate_interior_controls(self):
        quad = ControlQuad((0.0, 0.0), (0.0, 0.0), (30.0, 0.0), (30.0, 0.0))
        assert arc_length(quad) == pytest.approx(30.0, rel=1e-9)

    def test_matches_adaptive_simpson(self):
        rng = random.Random(42)
        for _ in range(100):
            quad = random_quad(rng)
            expected = oracles.simpson_arc_length(quad.array)
            assert arc_length(quad) == pytest.approx(expected, rel=1e-6)

    def test_at_least_chord_length(self):
        rng = random.Random(3)
        for _ in range(200):
            quad = random_quad(rng)
            chord = math.dist(quad.p0, quad.p3)
            assert arc_length(quad) >= chord - 1e-9


class TestPointAtArcLength:
    def test_matches_dense_table(self):
        rng = random.Random(77)
        for _ in range(40):
            quad = random_quad(rng)
            total = arc_length(quad)
            for frac in (0.0, 0.1, 0.33, 0.5, 0.77, 0.99, 1.0):
                anchor = point_at_arc_length(quad, frac * total)
                expected = oracles.dense_table_position(quad.array, frac * total)
                assert math.dist(anchor.position, expected) < 1e-4

    def test_straight_lane_exact(self):
        quad = ControlQuad((0.0, 0.0), (100.0 / 3.0, 0.0), (200.0 / 3.0, 0.0), (100.0, 0.0))
        anchor = point_at_arc_length(quad, 21.4)
        assert anchor.position == (21.4, 0.0)
        assert anchor.heading == 0.0
        assert anchor.arc_length_from_start == 21.4
        assert not anchor.clamped

    def test_clamping_within_grace(self):
        quad = ControlQuad((0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0))
        past = point_at_arc_length(quad, 30.3)
        assert past.clamped and past.position == (30.0, 0.0)
        before = point_at_arc_length(quad, -0.4)
        assert before.clamped and before.position == (0.0, 0.0)

    def test_range_error_past_grace(self):
        quad = ControlQuad((0.0, 0.0), (10.0, 0.0), (20.0, 0.0), (30.0, 0.0))
        with pytest.raises(RangeError):
            point_at_arc_length(quad, 30.6)
        with pytest.raises(RangeError):
            point_at_arc_length(quad, -0.6)

    def test_arc_position_round_trip(self):
        rng = random.Random(13)
        for _ in range(20):
            quad = lane_like_quad(rng)
            total = arc_length(quad)
            s = rng.uniform(0.0, total)
            anchor = point_at_arc_length(quad, s)
            # the dense table maps the returned position back to its arc position
            expected = oracles.dense_table_position(quad.array, s)
            assert math.dist(anchor.position, expected) < 1e-4


class TestOffsetPoint:
    def test_left_of_east_is_north(self):
        anchor = LaneAnchor((21.4, 0.0), 0.0, 21.4)
        assert offset_point(anchor, 1.0) == (21.4, 1.0)

    def test_left_of_north_is_west(self):
        anchor = LaneAnchor((0.0, 0.0), math.pi / 2.0, 0.0)
        x, y = offset_point(anchor, 2.0)
        assert x == pytest.approx(-2.0, abs=1e-12)
        assert y == pytest.approx(0.0, abs=1e-12)

    def test_negative_offset_is_right(self):
        anchor = LaneAnchor((5.0, 5.0), 0.0, 0.0)
        assert offset_point(anchor, -1.5) == (5.0, 3.5)

    @given(st.floats(-math.pi + 1e-6, math.pi), st.floats(-3.0, 3.0))
    @settings(max_examples=200, deadline=None)
    def test_offset_distance_preserved(self, heading, lateral):
        anchor = LaneAnchor((1.0, -2.0), heading, 0.0)
        moved = offset_point(anchor, lateral)
        assert math.dist(anchor.position, moved) == pytest.approx(abs(lateral), abs=1e-9)


class TestResamplePolyline:
    def test_straight_12m(self):
        out = resample_polyline([(0.0, 0.0), (12.0, 0.0)], 5.0)
        assert out == [(0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (12.0, 0.0)]

    def test_l_shape_corner_is_sample(self):
        out = resample_polyline([(0.0, 0.0), (10.0, 0.0), (10.0, 10.0)], 5.0)
        assert out == [(0.0, 0.0), (5.0, 0.0), (10.0, 0.0), (10.0, 5.0), (10.0, 10.0)]

    def test_already_spaced_input_is_identity(self):
        pts = [(float(5 * i), 0.0) for i in range(5)]
        assert resample_polyline(pts, 5.0) == pts

    def test_arc_spacing_uniform(self):
        rng = random.Random(9)
        for _ in range(25):
            pts = [(0.0, 0.0)]
            heading = rng.uniform(-math.pi, math.pi)
            for _ in range(rng.randint(2, 12)):
                heading += rng.uniform(-0.8, 0.8)
                step = rng.uniform(1.0, 9.0)
                x, y = pts[-1]
                pts.append((x + step * math.cos(heading), y + step * math.sin(heading)))
            spacing = rng.uniform(2.0, 6.0)
            out = resample_polyline(pts, spacing)
            arcs = [_arc_position_on(pts, p) for p in out]
            diffs = [b - a for a, b in zip(arcs, arcs[1:])]
            for d in diffs[:-1]:
                assert d == pytest.approx(spacing, abs=1e-9)
            assert 0.0 < diffs[-1] <= spacing + 1e-9
            assert out[0] == pts[0]
            assert out[-1] == pytest.approx(pts[-1], abs=1e-9)

    def test_rejects_empty_and_zero_length(self):
        with pytest.raises(DegenerateError):
            resample_polyline([(0.0, 0.0)], 5.0)
        with pytest.raises(DegenerateError):
            resample_polyline([(0.0, 0.0), (1.0, 0.0)], 0.0)


def _arc_position_on(polyline, point) -> float:
    """Arc position of a point lying on a polyline, found by projection."""
    best = (math.inf, 0.0)
    cum = 0.0
    for a, b in zip(polyline, polyline[1:]):
        seg = math.dist(a, b)
        if seg > 0.0:
            t = ((point[0] - a[0]) * (b[0] - a[0]) + (point[1] - a[1]) * (b[1] - a[1])) / seg**2
            t = min(max(t, 0.0), 1.0)
            proj = (a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1]))
            d = math.dist(point, proj)
            if d < best[0]:
                best = (d, cum + t * seg)
        cum += seg
    assert best[0] < 1e-6, "point does not lie on the polyline"
    return best[1]


class TestFitBezier:
    def test_straight_line_stays_collinear(self):
        pts = [(float(i), 2.0 * float(i)) for i in range(10)]
        result = fit_bezier(pts)
        assert result.max_deviation_m <= 1e-9
        for p in (result.quad.p1, result.quad.p2):
            cross = p[0] * 2.0 - p[1]
            assert abs(cross) < 1e-6

    def test_quarter_circle_within_two_decimeters(self):
        radius = 20.0
        arc = radius * math.pi / 2.0
        n = int(arc // 5.0)
        angles = [s / radius for s in [5.0 * i for i in range(n + 1)]] + [math.pi / 2.0]
        pts = [(radius * math.cos(a), radius * math.sin(a)) for a in angles]
        result = fit_bezier(pts)
        assert result.max_deviation_m < 0.2
        for t in np.linspace(0.0, 1.0, 400):
            x, y = bezier_point(result.quad, float(t))
            assert abs(math.hypot(x, y) - radius) < 0.2

    def test_recovers_cubic_samples(self):
        rng = random.Random(55)
        for _ in range(20):
            quad = ControlQuad(
                (0.0, 0.0),
                (12.0 + rng.uniform(-3, 3), rng.uniform(-8, 8)),
                (26.0 + rng.uniform(-3, 3), rng.uniform(-8, 8)),
                (40.0, rng.uniform(-8, 8)),
            )
            samples = [bezier_point(quad, i / 20.0) for i in range(21)]
            result = fit_bezier(samples)
            assert result.max_deviation_m < 1e-6
            assert result.quad.p0 == samples[0]
            assert result.quad.p3 == samples[-1]

    def test_requires_four_points(self):
        with pytest.raises(DegenerateError):
            fit_bezier([(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])


class TestLanePointTool:
    def test_straight_lane_anchor(self):
        scenario = single_lane_scenario()
        anchor = lane_point_tool(scenario, "Lane1", 21.4)
        assert anchor.position == (21.4, 0.0)
        assert anchor.heading == 0.0

    def test_unknown_id(self):
        scenario = single_lane_scenario()
        with pytest.raises(UnknownIdError):
            lane_point_tool(scenario, "LaneZ", 10.0)

    def test_beyond_end(self):
        scenario = single_lane_scenario(lane_length_m=100.0)
        anchor = lane_point_tool(scenario, "Lane1", 100.3)
        assert anchor.clamped and anchor.position == (100.0, 0.0)
        with pytest.raises(RangeError):
            lane_point_tool(scenario, "Lane1", 101.0)

    def test_connector_lookup(self):
        from scenaug.fixtures import curved_connector_scenario

        scenario = curved_connector_scenario()
        anchor = lane_point_tool(scenario, "Conn1", 5.0)
        assert anchor.arc_length_from_start == 5.0
        start = lane_point_tool(scenario, "Conn1", 0.0)
        assert start.position == pytest.approx((40.0, 0.0), abs=1e-9)
