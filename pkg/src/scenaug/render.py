"""Deterministic bird's-eye-view rendering of scenarios.

The canonical output is vector text (SVG), which is diffable and easy to
inspect in tests; a small built-in rasterizer turns it into PNG bytes for
image-model input and the voting UI. Both stages are pure functions, so the
same scenario always produces the same bytes.

World-to-image mapping runs on integer millimeters with a power-of-two
units-per-meter scale. Coordinates quantized to 3 decimals (everything the
serializer emits) therefore survive a round trip through the transform
bit-for-bit.
"""

from __future__ import annotations

import html
import io
import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass

from PIL import Image, ImageColor, ImageDraw

from .errors import RasterError, ValidationError
from .geometry import Point
from .scenario import AreaKind, Scenario

logger = logging.getLogger(__name__)

# user units per meter; a power of two keeps unit conversions exact
SCALE_UNITS_PER_M = 8
MARGIN_M = 10.0

MIN_RASTER_PX = 64
MAX_RASTER_PX = 4096

GRID_COLOR = "#e0e0e0"
CENTERLINE_COLOR = "#333333"
BACKGROUND_COLOR = "white"
OTHER_AREA_FILL = "#e8e8e8"


def _f3(value: float) -> str:
    text = f"{value:.3f}"
    return "0.000" if text == "-0.000" else text


def _esc(value: str) -> str:
    return html.escape(value, quote=True)


@dataclass(frozen=True)
class RenderStyle:
    """Colors and framing for the bird's-eye view."""

    ego_color: str = "red"
    modified_agent_color: str = "blue"
    other_agent_color: str = "#404040"
    drivable_fill: str = "#c8c8c8"
    walkway_fill: str = "olive"
    grid_spacing_m: float = 5.0
    extent_m: float = 60.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.grid_spacing_m) and self.grid_spacing_m > 0.0):
            raise ValidationError("grid_spacing_m must be positive")
        if not (math.isfinite(self.extent_m) and self.extent_m > 0.0):
            raise ValidationError("extent_m must be positive")


@dataclass(frozen=True)
class Frame:
    """Square viewport centered on the ego, in integer millimeters."""

    center_x_mm: int
    center_y_mm: int
    extent_mm: int

    @property
    def size_units(self) -> float:
        return self.extent_mm * 2 * SCALE_UNITS_PER_M / 1000.0


def _mm(value: float) -> int:
    return round(value * 1000.0)


def build_frame(scenario: Scenario, modified_ids: frozenset[str] | set[str], style: RenderStyle) -> Frame:
    """Ego-centered square frame, grown to keep every modified agent in view."""
    ego = scenario.ego
    cx_mm, cy_mm = _mm(ego.center[0]), _mm(ego.center[1])
    extent_mm = _mm(style.extent_m)
    margin_mm = _mm(MARGIN_M)
    for agent in scenario.agents:
        if agent.id not in modified_ids:
            continue
        dx = abs(_mm(agent.center[0]) - cx_mm)
        dy = abs(_mm(agent.center[1]) - cy_mm)
        extent_mm = max(extent_mm, dx + margin_mm, dy + margin_mm)
    return Frame(center_x_mm=cx_mm, center_y_mm=cy_mm, extent_mm=extent_mm)


def world_to_image(point: Point, frame: Frame) -> tuple[float, float]:
    """Map a world point to image user units; image y grows downward."""
    mu_x = (_mm(point[0]) - frame.center_x_mm + frame.extent_mm) * SCALE_UNITS_PER_M
    mu_y = (frame.extent_mm - (_mm(point[1]) - frame.center_y_mm)) * SCALE_UNITS_PER_M
    return (mu_x / 1000.0, mu_y / 1000.0)


def image_to_world(point: tuple[float, float], frame: Frame) -> Point:
    """Inverse of world_to_image; exact on forward-mapped points."""
    mu_x = round(point[0] * 1000.0)
    mu_y = round(point[1] * 1000.0)
    x_mm = frame.center_x_mm - frame.extent_mm + mu_x / SCALE_UNITS_PER_M
    y_mm = frame.center_y_mm + frame.extent_mm - mu_y / SCALE_UNITS_PER_M
    return (x_mm / 1000.0, y_mm / 1000.0)


_AREA_LAYER = {
    AreaKind.DRIVABLE: 0,
    AreaKind.CARPARK: 0,
    AreaKind.OTHER: 1,
    AreaKind.WALKWAY: 2,
}


def _area_fill(kind: AreaKind, style: RenderStyle) -> str:
    if kind in (AreaKind.DRIVABLE, AreaKind.CARPARK):
        return style.drivable_fill
    if kind is AreaKind.WALKWAY:
        return style.walkway_fill
    return OTHER_AREA_FILL


def _points_attr(points, frame: Frame) -> str:
    parts = []
    for p in points:
        xi, yi = world_to_image(p, frame)
        parts.append(f"{_f3(xi)},{_f3(yi)}")
    return " ".join(parts)


def _centerline_path(geometry, frame: Frame) -> str:
    if geometry.bezier is not None:
        p0, p1, p2, p3 = (world_to_image(p, frame) for p in geometry.bezier)
        return (
            f"M {_f3(p0[0])} {_f3(p0[1])} "
            f"C {_f3(p1[0])} {_f3(p1[1])}, {_f3(p2[0])} {_f3(p2[1])}, "
            f"{_f3(p3[0])} {_f3(p3[1])}"
        )
    pts = [world_to_image(p, frame) for p in geometry.polyline]
    body = " L ".join(f"{_f3(x)} {_f3(y)}" for x, y in pts[1:])
    return f"M {_f3(pts[0][0])} {_f3(pts[0][1])} L {body}"


def render_bev(
    scenario: Scenario,
    modified_ids: frozenset[str] | set[str] = frozenset(),
    style: RenderStyle | None = None,
) -> bytes:
    """Layered SVG of the scene: areas, centerlines, grid, then agents.

    Agents whose center falls outside the frame are skipped; the skip count
    is published on the root element as data-clipped-agents. The ego is drawn
    in the ego color regardless of modified_ids.
    """
    style = style or RenderStyle()
    modified_ids = frozenset(modified_ids)
    frame = build_frame(scenario, modified_ids, style)
    size = frame.size_units
    size_text = _f3(size)

    areas = sorted(scenario.areas, key=lambda a: (_AREA_LAYER[a.kind], a.id))
    area_lines = [
        f'    <polygon class="area {a.kind.value.lower()}" '
        f'fill="{_area_fill(a.kind, style)}" points="{_points_attr(a.boundary, frame)}"/>'
        for a in areas
    ]

    center_lines = []
    for entity in list(scenario.lanes) + list(scenario.lane_connectors):
        center_lines.append(
            f'    <path class="centerline" data-entity-id="{_esc(entity.id)}" fill="none" '
            f'stroke="{CENTERLINE_COLOR}" stroke-width="1.2" stroke-dasharray="6 4" '
            f'd="{_centerline_path(entity.geometry, frame)}"/>'
        )

    grid_lines = []
    spacing = style.grid_spacing_m
    cx_m = frame.center_x_mm / 1000.0
    cy_m = frame.center_y_mm / 1000.0
    extent_m = frame.extent_mm / 1000.0
    k_lo = math.ceil((cx_m - extent_m) / spacing)
    k_hi = math.floor((cx_m + extent_m) / spacing)
    for k in range(k_lo, k_hi + 1):
        xi, _ = world_to_image((k * spacing, cy_m), frame)
        grid_lines.append(
            f'    <line class="grid" stroke="{GRID_COLOR}" stroke-width="0.8" '
            f'x1="{_f3(xi)}" y1="0" x2="{_f3(xi)}" y2="{size_text}"/>'
        )
    k_lo = math.ceil((cy_m - extent_m) / spacing)
    k_hi = math.floor((cy_m + extent_m) / spacing)
    for k in range(k_lo, k_hi + 1):
        _, yi = world_to_image((cx_m, k * spacing), frame)
        grid_lines.append(
            f'    <line class="grid" stroke="{GRID_COLOR}" stroke-width="0.8" '
            f'x1="0" y1="{_f3(yi)}" x2="{size_text}" y2="{_f3(yi)}"/>'
        )

    agent_lines = []
    clipped = 0
    for agent in scenario.agents:
        dx = abs(_mm(agent.center[0]) - frame.center_x_mm)
        dy = abs(_mm(agent.center[1]) - frame.center_y_mm)
        if dx > frame.extent_mm or dy > frame.extent_mm:
            clipped += 1
            logger.debug("agent %s outside the %s m frame, skipped", agent.id, extent_m)
            continue
        xi, yi = world_to_image(agent.center, frame)
        w_units = agent.length * SCALE_UNITS_PER_M
        h_units = agent.width * SCALE_UNITS_PER_M
        if agent.is_ego:
            fill = style.ego_color
        elif agent.id in modified_ids:
            fill = style.modified_agent_color
        else:
            fill = style.other_agent_color
        angle = -math.degrees(agent.heading)
        modified_flag = "true" if agent.id in modified_ids else "false"
        agent_lines.append(
            f'    <rect class="agent" data-agent-id="{_esc(agent.id)}" '
            f'data-agent-type="{agent.agent_type.value}" data-modified="{modified_flag}" '
            f'fill="{fill}" x="{_f3(xi - w_units / 2.0)}" y="{_f3(yi - h_units / 2.0)}" '
            f'width="{_f3(w_units)}" height="{_f3(h_units)}" '
            f'transform="rotate({_f3(angle)} {_f3(xi)} {_f3(yi)})"/>'
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size_text}" height="{size_text}" '
        f'viewBox="0 0 {size_text} {size_text}" data-scenario-id="{_esc(scenario.scenario_id)}" '
        f'data-extent-m="{_f3(extent_m)}" data-scale="{SCALE_UNITS_PER_M}" '
        f'data-clipped-agents="{clipped}">',
        f'  <rect class="background" x="0" y="0" width="{size_text}" '
        f'height="{size_text}" fill="{BACKGROUND_COLOR}"/>',
        '  <g class="areas">',
        *area_lines,
        "  </g>",
        '  <g class="centerlines">',
        *center_lines,
        "  </g>",
        '  <g class="grid">',
        *grid_lines,
        "  </g>",
        '  <g class="agents">',
        *agent_lines,
        "  </g>",
        "</svg>",
    ]
    return ("\n".join(parts) + "\n").encode("utf-8")


# --- rasterization -----------------------------------------------------------

_SVG_NS = "{http://www.w3.org/2000/svg}"
_ROTATE_RE = re.compile(
    r"rotate\(\s*([-+0-9.eE]+)[\s,]+([-+0-9.eE]+)[\s,]+([-+0-9.eE]+)\s*\)"
)


def _strip_ns(tag: str) -> str:
    return tag[len(_SVG_NS):] if tag.startswith(_SVG_NS) else tag


def _color(value: str | None):
    if value is None or value == "none":
        return None
    try:
        return ImageColor.getrgb(value)
    except ValueError as exc:
        raise RasterError(f"unknown color {value!r}") from None


def _rotate(points, angle_deg: float, cx: float, cy: float):
    theta = math.radians(angle_deg)
    c, s = math.cos(theta), math.sin(theta)
    return [
        (cx + (x - cx) * c - (y - cy) * s, cy + (x - cx) * s + (y - cy) * c)
        for x, y in points
    ]


def _parse_points(text: str) -> list[tuple[float, float]]:
    pts = []
    for token in text.replace(",", " ").split():
        pts.append(float(token))
    if len(pts) % 2 != 0:
        raise RasterError("points attribute has an odd coordinate count")
    return list(zip(pts[0::2], pts[1::2]))


def _flatten_path(d: str) -> list[tuple[float, float]]:
    tokens = d.replace(",", " ").split()
    pts: list[tuple[float, float]] = []
    idx = 0
    try:
        while idx < len(tokens):
            op = tokens[idx]
            if op == "M" or op == "L":
                x, y = float(tokens[idx + 1]), float(tokens[idx + 2])
                pts.append((x, y))
                idx += 3
            elif op == "C":
                if not pts:
                    raise RasterError("path curve command before any point")
                x0, y0 = pts[-1]
                coords = [float(t) for t in tokens[idx + 1:idx + 7]]
                if len(coords) < 6:
                    raise RasterError("path curve command is truncated")
                x1, y1, x2, y2, x3, y3 = coords
                for step in range(1, 33):
                    t = step / 32.0
                    mt = 1.0 - t
                    bx = (mt**3 * x0 + 3 * t * mt**2 * x1 + 3 * t**2 * mt * x2 + t**3 * x3)
                    by = (mt**3 * y0 + 3 * t * mt**2 * y1 + 3 * t**2 * mt * y2 + t**3 * y3)
                    pts.append((bx, by))
                idx += 7
            else:
                raise RasterError(f"unsupported path command {op!r}")
    except (ValueError, IndexError):
        raise RasterError(f"malformed path data {d!r}") from None
    return pts


def rasterize(vector_bytes: bytes, pixels: int) -> bytes:
    """Square PNG raster of a vector document produced by render_bev.

    Draws with hard edges (no anti-aliasing) so output bytes are a pure
    function of the input. Dashed strokes are drawn solid; the raster is a
    preview surface, not the canonical artifact.
    """
    if not isinstance(pixels, int) or isinstance(pixels, bool):
        raise ValidationError("pixels must be an integer")
    if not (MIN_RASTER_PX <= pixels <= MAX_RASTER_PX):
        raise ValidationError(
            f"pixels must lie in [{MIN_RASTER_PX}, {MAX_RASTER_PX}], got {pixels}"
        )
    try:
        root = ET.fromstring(vector_bytes.decode("utf-8"))
    except (UnicodeDecodeError, ET.ParseError) as exc:
        raise RasterError(f"vector input is not parseable: {exc}") from None
    if _strip_ns(root.tag) != "svg":
        raise RasterError("vector input has no svg root element")
    viewbox = root.get("viewBox")
    if viewbox is None:
        raise RasterError("svg root has no viewBox")
    try:
        vb = [float(t) for t in viewbox.split()]
        if len(vb) != 4 or vb[2] <= 0 or vb[3] <= 0:
            raise ValueError(viewbox)
    except ValueError:
        raise RasterError(f"bad viewBox {viewbox!r}") from None
    scale = pixels / vb[2]

    image = Image.new("RGB", (pixels, pixels), _color(BACKGROUND_COLOR))
    draw = ImageDraw.Draw(image)

    def sx(v: float) -> float:
        return (v - vb[0]) * scale

    def sy(v: float) -> float:
        return (v - vb[1]) * scale

    try:
        for element in root.iter():
            tag = _strip_ns(element.tag)
            if tag == "rect":
                fill = _color(element.get("fill"))
                if fill is None:
                    continue
                x = float(element.get("x", "0"))
                y = float(element.get("y", "0"))
                w = float(element.get("width", "0"))
                h = float(element.get("height", "0"))
                corners = [(x, y), (x + w, y), (x + w, y + h), (x, y + h)]
                transform = element.get("transform", "")
                rotation = _ROTATE_RE.search(transform)
                if rotation:
                    angle, cx, cy = (float(g) for g in rotation.groups())
                    corners = _rotate(corners, angle, cx, cy)
                draw.polygon([(sx(px), sy(py)) for px, py in corners], fill=fill)
            elif tag == "polygon":
                fill = _color(element.get("fill"))
                if fill is None:
                    continue
                pts = _parse_points(element.get("points", ""))
                if len(pts) >= 3:
                    draw.polygon([(sx(px), sy(py)) for px, py in pts], fill=fill)
            elif tag == "line":
                stroke = _color(element.get("stroke"))
                if stroke is None:
                    continue
                width = max(1, round(float(element.get("stroke-width", "1")) * scale))
                draw.line(
                    [
                        (sx(float(element.get("x1", "0"))), sy(float(element.get("y1", "0")))),
                        (sx(float(element.get("x2", "0"))), sy(float(element.get("y2", "0")))),
                    ],
                    fill=stroke,
                    width=width,
                )
            elif tag == "path":
                stroke = _color(element.get("stroke"))
                if stroke is None:
                    continue
                width = max(1, round(float(element.get("stroke-width", "1")) * scale))
                pts = _flatten_path(element.get("d", ""))
                if len(pts) >= 2:
                    draw.line(
                        [(sx(px), sy(py)) for px, py in pts], fill=stroke, width=width
                    )
    except ValueError as exc:
        raise RasterError(f"malformed vector attribute: {exc}") from None

    out = io.BytesIO()
    image.save(out, format="PNG")
    return out.getvalue()
