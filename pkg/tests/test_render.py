"""Vector rendering and rasterization tests."""

from __future__ import annotations

import dataclasses
import math
import io
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from PIL import Image

from scenaug.errors import RasterError, ValidationError
from scenaug.fixtures import curved_connector_scenario, single_lane_scenario
from scenaug.render import (
    Frame,
    RenderStyle,
    build_frame,
    image_to_world,
    rasterize,
    render_bev,
    world_to_image,
)
from scenaug.scenario import AgentState, AgentType


def _tag(element):
    tag = element.tag
    return tag.rsplit("}", 1)[-1]


def _rects(svg_bytes):
    root = ET.fromstring(svg_bytes.decode("utf-8"))
    return [e for e in root.iter() if _tag(e) == "rect" and e.get("class") == "agent"]


def _with_vehicle(scenario, agent_id, x, y, heading=0.0):
    agent = AgentState(
        id=agent_id,
        agent_type=AgentType.VEHICLE,
        center=(x, y),
        heading=heading,
        width=2.0,
        length=4.5,
        velocity=0.0,
        lane_id="Lane1",
    )
    return dataclasses.replace(scenario, agents=(*scenario.agents, agent))


class TestRenderStyle:
    def test_defaults(self):
        style = RenderStyle()
        assert style.ego_color == "red"
        assert style.modified_agent_color == "blue"
        assert style.walkway_fill == "olive"
        assert style.grid_spacing_m == 5.0
        assert style.extent_m == 60.0

    def test_validation(self):
        with pytest.raises(ValidationError):
            RenderStyle(grid_spacing_m=0.0)
        with pytest.raises(ValidationError):
            RenderStyle(extent_m=-5.0)


class TestTransform:
    def test_round_trip_is_exact_on_quantized_points(self):
        frame = Frame(center_x_mm=0, center_y_mm=0, extent_mm=60000)
        for point in [(21.4, 2.6), (-13.25, 7.899), (0.0, 0.0), (59.999, -59.999)]:
            assert image_to_world(world_to_image(point, frame), frame) == point

    def test_round_trip_with_offset_ego(self):
        frame = Frame(center_x_mm=12300, center_y_mm=-4560, extent_mm=60000)
        for point in [(12.3, -4.56), (40.001, 3.25), (-47.7, 55.44)]:
            assert image_to_world(world_to_image(point, frame), frame) == point

    def test_image_y_grows_downward(self):
        frame = Frame(center_x_mm=0, center_y_mm=0, extent_mm=60000)
        _, y_north = world_to_image((0.0, 10.0), frame)
        _, y_center = world_to_image((0.0, 0.0), frame)
        assert y_north < y_center

    def test_center_maps_to_canvas_middle(self):
        frame = Frame(center_x_mm=5000, center_y_mm=5000, extent_mm=60000)
        assert world_to_image((5.0, 5.0), frame) == (480.0, 480.0)


class TestBuildFrame:
    def test_default_extent(self):
        scenario = single_lane_scenario()
        frame = build_frame(scenario, frozenset(), RenderStyle())
        assert frame.extent_mm == 60000
        assert frame.center_x_mm == 0
        assert frame.center_y_mm == 0

    def test_expands_for_far_modified_agent(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 90.0, 0.0)
        frame = build_frame(scenario, {"Agent2"}, RenderStyle())
        assert frame.extent_mm == 100000

    def test_far_unmodified_agent_does_not_expand(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 90.0, 0.0)
        frame = build_frame(scenario, frozenset(), RenderStyle())
        assert frame.extent_mm == 60000


class TestRenderBev:
    def test_byte_identical_across_runs(self):
        scenario = single_lane_scenario()
        assert render_bev(scenario) == render_bev(scenario)

    def test_root_metadata(self):
        scenario = single_lane_scenario()
        root = ET.fromstring(render_bev(scenario).decode("utf-8"))
        assert root.get("data-extent-m") == "60.000"
        assert root.get("data-clipped-agents") == "0"
        assert root.get("data-scenario-id") == "single-lane-east"
        assert root.get("viewBox") == "0 0 960.000 960.000"

    def test_exactly_one_blue_rect_at_modified_center(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 21.4, 2.6)
        svg = render_bev(scenario, {"Agent2"})
        blue = [r for r in _rects(svg) if r.get("fill") == "blue"]
        assert len(blue) == 1
        rect = blue[0]
        cx = float(rect.get("x")) + float(rect.get("width")) / 2.0
        cy = float(rect.get("y")) + float(rect.get("height")) / 2.0
        frame = build_frame(scenario, {"Agent2"}, RenderStyle())
        xi, yi = world_to_image((21.4, 2.6), frame)
        assert cx == pytest.approx(xi, abs=2e-3)
        assert cy == pytest.approx(yi, abs=2e-3)

    def test_ego_is_always_red(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 20.0, 0.0)
        svg = render_bev(scenario, {"Agent1", "Agent2"})
        by_id = {r.get("data-agent-id"): r for r in _rects(svg)}
        assert by_id["Agent1"].get("fill") == "red"
        assert by_id["Agent2"].get("fill") == "blue"

    def test_color_contract(self):
        scenario = _with_vehicle(
            _with_vehicle(single_lane_scenario(), "Agent2", 20.0, 0.0),
            "Agent3", 40.0, 1.0,
        )
        svg = render_bev(scenario, {"Agent3"})
        by_id = {r.get("data-agent-id"): r for r in _rects(svg)}
        assert by_id["Agent1"].get("fill") == "red"
        assert by_id["Agent2"].get("fill") == "#404040"
        assert by_id["Agent3"].get("fill") == "blue"
        assert by_id["Agent2"].get("data-modified") == "false"
        assert by_id["Agent3"].get("data-modified") == "true"

    def test_quarter_turn_heading_rotates_rect(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 30.0, 0.0,
                                 heading=math.pi / 2)
        svg = render_bev(scenario, {"Agent2"})
        rect = [r for r in _rects(svg) if r.get("data-agent-id") == "Agent2"][0]
        assert rect.get("transform").startswith("rotate(-90.000 ")
        # long axis (the length) is the svg width before rotation
        assert float(rect.get("width")) == pytest.approx(4.5 * 8)
        assert float(rect.get("height")) == pytest.approx(2.0 * 8)

    def test_out_of_frame_agent_clipped_and_counted(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 90.0, 0.0)
        svg = render_bev(scenario)
        root = ET.fromstring(svg.decode("utf-8"))
        assert root.get("data-clipped-agents") == "1"
        assert [r.get("data-agent-id") for r in _rects(svg)] == ["Agent1"]

    def test_modified_agent_never_clipped(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 90.0, 0.0)
        svg = render_bev(scenario, {"Agent2"})
        root = ET.fromstring(svg.decode("utf-8"))
        assert root.get("data-clipped-agents") == "0"
        assert root.get("data-extent-m") == "100.000"

    def test_layer_order(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 20.0, 0.0)
        text = render_bev(scenario).decode("utf-8")
        areas = text.index('<g class="areas">')
        centerlines = text.index('<g class="centerlines">')
        grid = text.index('<g class="grid">')
        agents = text.index('<g class="agents">')
        assert areas < centerlines < grid < agents

    def test_drivable_drawn_under_walkway(self):
        text = render_bev(single_lane_scenario()).decode("utf-8")
        assert text.index('class="area drivable"') < text.index('class="area walkway"')

    def test_grid_line_count_default_extent(self):
        root = ET.fromstring(render_bev(single_lane_scenario()).decode("utf-8"))
        lines = [e for e in root.iter() if _tag(e) == "line"]
        # multiples of 5 m in [-60, 60]: 25 vertical plus 25 horizontal
        assert len(lines) == 50

    def test_connector_centerline_rendered_as_curve(self):
        svg = render_bev(curved_connector_scenario()).decode("utf-8")
        root = ET.fromstring(svg)
        paths = {e.get("data-entity-id"): e for e in root.iter() if _tag(e) == "path"}
        assert set(paths) == {"Lane1", "Lane2", "Conn1"}
        assert " C " in paths["Conn1"].get("d")


class TestRasterize:
    def test_decodes_to_requested_size(self):
        png = rasterize(render_bev(single_lane_scenario()), 512)
        image = Image.open(io.BytesIO(png))
        assert image.size == (512, 512)
        assert image.mode == "RGB"

    def test_byte_identical_across_runs(self):
        svg = render_bev(single_lane_scenario())
        assert rasterize(svg, 256) == rasterize(svg, 256)

    def test_red_pixels_at_ego_footprint(self):
        png = rasterize(render_bev(single_lane_scenario()), 512)
        pixels = np.asarray(Image.open(io.BytesIO(png)))
        assert tuple(pixels[256, 256]) == (255, 0, 0)
        red = np.all(pixels == (255, 0, 0), axis=-1).sum()
        assert red > 50

    def test_blue_and_olive_pixels_present(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 21.4, 2.6)
        png = rasterize(render_bev(scenario, {"Agent2"}), 512)
        pixels = np.asarray(Image.open(io.BytesIO(png)))
        assert np.all(pixels == (0, 0, 255), axis=-1).sum() > 20
        assert np.all(pixels == (128, 128, 0), axis=-1).sum() > 100

    def test_rotated_agent_is_taller_than_wide(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 30.0, 0.0,
                                 heading=math.pi / 2)
        png = rasterize(render_bev(scenario, {"Agent2"}), 512)
        pixels = np.asarray(Image.open(io.BytesIO(png)))
        ys, xs = np.where(np.all(pixels == (0, 0, 255), axis=-1))
        assert ys.max() - ys.min() > xs.max() - xs.min()

    def test_malformed_vector_rejected(self):
        with pytest.raises(RasterError):
            rasterize(b"not svg at all", 128)
        with pytest.raises(RasterError):
            rasterize(b"<svg>truncated", 128)
        with pytest.raises(RasterError):
            rasterize(b"<html></html>", 128)
        with pytest.raises(RasterError):
            rasterize(b'<svg xmlns="http://www.w3.org/2000/svg"></svg>', 128)
        with pytest.raises(RasterError):
            rasterize(b'<svg viewBox="0 0 -1 -1"></svg>', 128)

    def test_pixel_bounds_enforced(self):
        svg = render_bev(single_lane_scenario())
        with pytest.raises(ValidationError):
            rasterize(svg, 63)
        with pytest.raises(ValidationError):
            rasterize(svg, 4097)
        with pytest.raises(ValidationError):
            rasterize(svg, True)
        assert rasterize(svg, 64) and rasterize(svg, 128)

    def test_extent_change_keeps_output_square(self):
        scenario = _with_vehicle(single_lane_scenario(), "Agent2", 90.0, 0.0)
        png = rasterize(render_bev(scenario, {"Agent2"}), 300)
        image = Image.open(io.BytesIO(png))
        assert image.size == (300, 300)
