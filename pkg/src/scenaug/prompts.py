"""Prompt construction and response parsing for the editing pipeline.

Scenarios are rendered into a fix-form text block (one entity per line), and
the editing agent's free-text replies are parsed back into structured results.
Everything here is pure string work; geometry is delegated to the geometry
module and validation to the scenario model.
"""

from __future__ import annotations

import ast
import enum
import json
import logging
import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Sequence

from .errors import (
    DictParseError,
    MissingSectionError,
    RatingParseError,
    SchemaError,
    StageInputError,
    ToolArgError,
    ValidationError,
    VectorParseError,
)
from .geometry import (
    ControlQuad,
    arc_length,
    centerline_quad,
    point_at_arc_length,
    resample_polyline,
)
from .scenario import (
    AgentState,
    LaneGeometry,
    ModAction,
    ModificationDict,
    ModificationResult,
    Scenario,
    agent_from_vector,
    _f3,
)

logger = logging.getLogger(__name__)

QA_CATEGORIES = ("Compliance", "Realism", "Logical Consistency")
QA_PASS_MEAN = 4.0


class LaneFormat(enum.Enum):
    POLYLINE = "POLYLINE"
    BEZIER = "BEZIER"


class Strategy(enum.Enum):
    OTM = "OTM"
    FC = "FC"
    TQA = "TQA"
    VQA = "VQA"


class VqaStage(enum.Enum):
    ENGINEER_QUESTIONS = "ENGINEER_QUESTIONS"
    VLM_ANSWER = "VLM_ANSWER"
    ENGINEER_VERDICT = "ENGINEER_VERDICT"


@dataclass(frozen=True)
class PromptConfig:
    """How scenario text is presented to the editing agent.

    The function-calling strategy reads lanes as curve control points and may
    request anchors through the tool protocol; every other strategy sees 5 m
    polylines and no tool instructions.
    """

    strategy: Strategy = Strategy.OTM
    lane_format: LaneFormat | None = None
    include_tool_instructions: bool | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.strategy, Strategy):
            raise ValidationError(f"strategy must be a Strategy, got {self.strategy!r}")
        expected = LaneFormat.BEZIER if self.strategy is Strategy.FC else LaneFormat.POLYLINE
        if self.lane_format is None:
            object.__setattr__(self, "lane_format", expected)
        elif self.lane_format is not expected:
            raise ValidationError(
                f"strategy {self.strategy.value} requires lane format {expected.value}"
            )
        tools = self.lane_format is LaneFormat.BEZIER
        if self.include_tool_instructions is None:
            object.__setattr__(self, "include_tool_instructions", tools)
        elif bool(self.include_tool_instructions) is not tools:
            raise ValidationError(
                "tool instructions are included exactly when lanes use the curve format"
            )


@dataclass(frozen=True)
class ToolCallRequest:
    name: str
    lane_id: str
    distance_m: float

    def __post_init__(self) -> None:
        if self.name != "lane_point":
            raise ToolArgError(f"unknown tool {self.name!r}")
        if not isinstance(self.lane_id, str) or not self.lane_id:
            raise ToolArgError("lane_point needs a non-empty lane id")
        value = float(self.distance_m)
        if not math.isfinite(value) or value < 0.0:
            raise ToolArgError(f"lane_point distance must be finite and non-negative, got {value!r}")
        object.__setattr__(self, "distance_m", value)


@dataclass(frozen=True)
class QaRating:
    """Three 1-to-5 scores; the edit passes when their mean reaches 4."""

    compliance: int
    realism: int
    logical_consistency: int
    feedback: str = ""

    def __post_init__(self) -> None:
        for name in ("compliance", "realism", "logical_consistency"):
            value = getattr(self, name)
            if not isinstance(value, int) or isinstance(value, bool) or not 1 <= value <= 5:
                raise ValidationError(f"{name} must be an integer from 1 to 5, got {value!r}")
        object.__setattr__(self, "feedback", str(self.feedback))
        if not self.passed and not self.feedback.strip():
            raise ValidationError("a failing rating must carry feedback")

    @property
    def scores(self) -> tuple[int, int, int]:
        return (self.compliance, self.realism, self.logical_consistency)

    @property
    def mean(self) -> float:
        return sum(self.scores) / 3.0

    @property
    def passed(self) -> bool:
        # integer form of mean >= 4; exact, no float division involved
        return sum(self.scores) >= 12

    def failing_categories(self) -> tuple[str, ...]:
        return tuple(
            name for name, score in zip(QA_CATEGORIES, self.scores) if score < 4
        )


# --- scenario text -----------------------------------------------------------


def _fmt_value(value) -> str:
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
        return "[" + ", ".join(_fmt_value(v) for v in value) + "]"
    raise TypeError(f"cannot format {type(value).__name__}")


def _entity_line(entity_id: str, vector: Sequence) -> str:
    return "{" + json.dumps(entity_id) + ": " + _fmt_value(list(vector)) + "}"


def _coords(geometry: LaneGeometry, lane_format: LaneFormat) -> list[list[float]]:
    if lane_format is LaneFormat.BEZIER:
        quad = centerline_quad(geometry)
        return [[float(x), float(y)] for x, y in (quad.p0, quad.p1, quad.p2, quad.p3)]
    if geometry.polyline is not None:
        pts = resample_polyline(geometry.polyline, spacing=5.0)
    else:
        quad = ControlQuad(*geometry.bezier)
        total = arc_length(quad)
        steps = [i * 5.0 for i in range(int(total // 5.0) + 1)]
        if steps[-1] < total:
            steps.append(total)
        pts = [point_at_arc_length(quad, s).position for s in steps]
    return [[float(x), float(y)] for x, y in pts]


def scenario_input_block(scenario: Scenario, lane_format: LaneFormat) -> str:
    """The fix-form entity listing: agents, lanes, connectors, then areas."""
    lines = []
    for agent in scenario.agents:
        lines.append(_entity_line(agent.id, agent.vector()))
    for lane in scenario.lanes:
        lines.append(
            _entity_line(
                lane.id,
                [
                    lane.id,
                    lane.travel_direction,
                    lane.relative_direction_to_ego.value,
                    lane.width,
                    lane.speed_limit,
                    _coords(lane.geometry, lane_format),
                ],
            )
        )
    for conn in scenario.lane_connectors:
        lines.append(
            _entity_line(
                conn.id,
                [
                    conn.from_lane,
                    conn.to_lane,
                    conn.traffic_light_state.value,
                    conn.turn_type.value,
                    conn.speed_limit,
                    _coords(conn.geometry, lane_format),
                ],
            )
        )
    for area in scenario.areas:
        lines.append(
            _entity_line(
                area.id,
                [area.kind.value, [[float(x), float(y)] for x, y in area.boundary]],
            )
        )
    return "\n".join(lines)


_SMA_PREAMBLE = (
    "You are a traffic scenario editor that edits fix-form traffic scenario "
    "descriptions according to the user's natural language instructions."
)

_INPUT_FORMAT = """Input format:
Input vectors, one JSON object per entity, one entity per line.
Agents: {"<agent id>": [<agent type>, <center x>, <center y>, <heading rad>, <width m>, <length m>, <velocity m/s>, <lane id or null>]}
Lanes: {"<lane id>": [<lane id>, <travel direction>, <relative direction to ego>, <width m>, <speed limit m/s>, <lane coordinates>]}
Lane connectors: {"<connector id>": [<from lane>, <to lane>, <traffic light state>, <turn type>, <speed limit m/s>, <lane coordinates>]}
Areas: {"<area id>": [<kind>, <boundary points>]}"""

_POLYLINE_NOTE = "Lane coordinates are centerline points sampled every 5 meters."
_BEZIER_NOTE = "Lane coordinates are the four control points of a cubic Bezier curve."

_INSTRUCTION_FORMAT = (
    "Instruction format: natural language describing the desired change to the scenario."
)

_OUTPUT_FORMAT = """Output format:
Insights: Take your time and step by step describe what the scenario consists of.
Summary: Briefly restate the change the user wants.
Modification Dict: one JSON object per edit, e.g. {"Action": "add", "Modified_Agent": "Agent2", "Rationale": "..."}. Action is one of add, remove, modify.
Modification Calculations: show the calculations that lead to the new agent values.
Modified Vectors: one JSON object mapping every added or modified agent id to its full 8-field vector."""

_TOOL_PROTOCOL = """Tool protocol:
Before giving your final answer you may retrieve points on a lane centerline.
Emit exactly one line of the form:
CALL lane_point("<lane or connector id>", <distance in meters from the start>)
and stop. The next user message will contain either
RESULT lane_point: x=<x>, y=<y>, heading=<heading>
or RESULT lane_point: ERROR <code> when the call is invalid.
When you no longer need the tool, reply in the output format without any CALL line."""


def encode_sma_prompt(scenario: Scenario, instructions: str, config: PromptConfig) -> str:
    """The editing prompt: format contract, scenario text, then instructions."""
    note = _BEZIER_NOTE if config.lane_format is LaneFormat.BEZIER else _POLYLINE_NOTE
    parts = [
        _SMA_PREAMBLE,
        "",
        _INPUT_FORMAT,
        note,
        "",
        _INSTRUCTION_FORMAT,
        "",
        _OUTPUT_FORMAT,
    ]
    if config.include_tool_instructions:
        parts += ["", _TOOL_PROTOCOL]
    parts += [
        "",
        "Input:",
        "Scenario: " + scenario.scenario_id,
        scenario_input_block(scenario, config.lane_format),
        "",
        "User Instructions:",
        instructions,
        "",
        "Output:",
    ]
    return "\n".join(parts)


# --- response parsing --------------------------------------------------------

_SECTION_NAMES = {
    "insights": "insights",
    "summary": "summary",
    "modification dict": "dicts",
    "modification dicts": "dicts",
    "modification calculations": "calculations",
    "modified vectors": "vectors",
}

_HEADER_RE = re.compile(
    r"^\s*(?:#{1,6}\s*)?(?:\*\*|__)?\s*"
    r"(insights|summary|modification dicts?|modification calculations|modified vectors)"
    r"\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?(.*)$",
    re.IGNORECASE,
)


def _split_sections(text: str) -> dict[str, str]:
    sections: dict[str, list[str]] = {}
    current: str | None = None
    for line in text.splitlines():
        stripped = line.strip()
        if stripped in ("```", "```json", "```python", "```text"):
            continue
        match = _HEADER_RE.match(line)
        if match:
            current = _SECTION_NAMES[match.group(1).lower()]
            sections.setdefault(current, [])
            rest = match.group(2).strip().strip("*")
            if rest:
                sections[current].append(rest)
            continue
        if current is not None:
            sections[current].append(line)
    return {name: "\n".join(lines).strip() for name, lines in sections.items()}


def _json_objects(text: str) -> list:
    """Every balanced top-level {...} block, parsed as JSON or a literal."""
    objects = []
    depth = 0
    start = None
    in_string = False
    escape = False
    quote = ""
    for i, ch in enumerate(text):
        if in_string:
            if escape:
                escape = False
            elif ch == "\\":
                escape = True
            elif ch == quote:
                in_string = False
            continue
        if ch in "\"'":
            in_string = True
            quote = ch
            continue
        if ch == "{":
            if depth == 0:
                start = i
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0 and start is not None:
                    objects.append(text[start : i + 1])
                    start = None
    parsed = []
    for block in objects:
        try:
            parsed.append(json.loads(block))
            continue
        except json.JSONDecodeError:
            pass
        try:
            value = ast.literal_eval(block)
        except (ValueError, SyntaxError):
            raise DictParseError(f"unparseable JSON object: {block[:120]!r}") from None
        if not isinstance(value, dict):
            raise DictParseError(f"expected an object, got {type(value).__name__}")
        parsed.append(value)
    return parsed


def _parse_modification_dict(raw: dict) -> ModificationDict:
    by_lower = {str(k).lower(): v for k, v in raw.items()}
    if "action" not in by_lower:
        raise DictParseError(f"modification dict lacks an Action key: {raw!r}")
    if "modified_agent" not in by_lower:
        raise DictParseError(f"modification dict lacks a Modified_Agent key: {raw!r}")
    action_raw = str(by_lower["action"]).strip().upper()
    try:
        action = ModAction(action_raw)
    except ValueError:
        raise DictParseError(f"unknown action {by_lower['action']!r}") from None
    target = by_lower["modified_agent"]
    if not isinstance(target, str) or not target:
        raise DictParseError(f"Modified_Agent must be an agent id, got {target!r}")
    rationale = str(by_lower.get("rationale", ""))
    extra = tuple(
        (str(k), str(v))
        for k, v in raw.items()
        if str(k).lower() not in ("action", "modified_agent", "rationale")
    )
    return ModificationDict(action=action, modified_agent=target, rationale=rationale, extra=extra)


def _parse_vectors(section: str) -> tuple[AgentState, ...]:
    agents: dict[str, AgentState] = {}
    for raw in _json_objects(section):
        if not isinstance(raw, dict):
            raise VectorParseError(f"expected an id-to-vector object, got {raw!r}")
        for agent_id, vector in raw.items():
            try:
                agent = agent_from_vector(str(agent_id), vector)
            except SchemaError as exc:
                raise VectorParseError(str(exc)) from None
            except ValidationError as exc:
                raise VectorParseError(str(exc)) from None
            agents[agent.id] = agent
    return tuple(agents.values())


def parse_sma_response(text: str) -> ModificationResult:
    """Structure a free-text editing reply.

    Only the Modified Vectors section is mandatory; everything else degrades
    to empty strings or tuples so that lax replies still apply.
    """
    if not isinstance(text, str):
        raise MissingSectionError("response must be text")
    sections = _split_sections(text)
    if "vectors" not in sections:
        raise MissingSectionError('response has no "Modified Vectors" section')
    dicts = tuple(
        _parse_modification_dict(raw) for raw in _json_objects(sections.get("dicts", ""))
    )
    vectors = _parse_vectors(sections["vectors"])
    return ModificationResult(
        insights=sections.get("insights", ""),
        summary=sections.get("summary", ""),
        modification_dicts=dicts,
        calculations=sections.get("calculations", ""),
        modified_vectors=vectors,
    )


# --- tool protocol -----------------------------------------------------------

_CALL_LINE_RE = re.compile(r"^\s*CALL\s+lane_point\s*\((.*)\)\s*$")
_CALL_ARGS_RE = re.compile(r'^\s*"([^"]+)"\s*,\s*([-+]?\d+(?:\.\d+)?)\s*$')

TOOL_ERROR_CODES = ("UNKNOWN_ID", "OUT_OF_RANGE", "BAD_ARGS")


def parse_tool_call(text: str) -> ToolCallRequest | None:
    """The first tool-call line in a reply, or None when there is none."""
    for line in text.splitlines():
        match = _CALL_LINE_RE.match(line)
        if not match:
            continue
        args = _CALL_ARGS_RE.match(match.group(1))
        if not args:
            raise ToolArgError(f"malformed lane_point arguments: {match.group(1)!r}")
        return ToolCallRequest(
            name="lane_point", lane_id=args.group(1), distance_m=float(args.group(2))
        )
    return None


def format_tool_result(x: float, y: float, heading: float) -> str:
    return f"RESULT lane_point: x={_f3(x)}, y={_f3(y)}, heading={heading:.4f}"


def format_tool_error(code: str) -> str:
    if code not in TOOL_ERROR_CODES:
        raise ValueError(f"unknown tool error code {code!r}")
    return f"RESULT lane_point: ERROR {code}"


# --- quality-assurance prompts and ratings -----------------------------------

_SCORE_RE_TEMPLATE = r"(?:\*\*|__)?\s*{label}\s*(?:\*\*|__)?\s*:\s*(?:\*\*|__)?\s*(\S+)"
_FEEDBACK_RE = re.compile(
    r"^\s*(?:#{1,6}\s*)?(?:\*\*|__)?\s*feedback\s*(?:\*\*|__)?\s*:\s*(.*)$",
    re.IGNORECASE,
)


def parse_qa_rating(text: str) -> QaRating:
    """Extract the three category scores and optional feedback."""
    scores = {}
    for label in QA_CATEGORIES:
        pattern = re.compile(
            _SCORE_RE_TEMPLATE.format(label=re.escape(label).replace(r"\ ", r"\s+")),
            re.IGNORECASE,
        )
        match = pattern.search(text)
        if not match:
            raise RatingParseError(f"no {label} score found")
        token = match.group(1).strip().rstrip(".,;/").strip("*_")
        if not re.fullmatch(r"[-+]?\d+", token):
            raise RatingParseError(f"{label} score must be an integer, got {token!r}")
        value = int(token)
        if not 1 <= value <= 5:
            raise RatingParseError(f"{label} score must be between 1 and 5, got {value}")
        scores[label] = value

    feedback_lines: list[str] = []
    capture = False
    for line in text.splitlines():
        match = _FEEDBACK_RE.match(line)
        if match:
            capture = True
            rest = match.group(1).strip()
            if rest:
                feedback_lines.append(rest)
            continue
        if capture:
            feedback_lines.append(line)
    feedback = "\n".join(feedback_lines).strip()

    total = sum(scores.values())
    if total < 12 and not feedback:
        raise RatingParseError("a failing rating must include a Feedback section")
    return QaRating(
        compliance=scores[QA_CATEGORIES[0]],
        realism=scores[QA_CATEGORIES[1]],
        logical_consistency=scores[QA_CATEGORIES[2]],
        feedback=feedback,
    )


_TQA_PREAMBLE = (
    "You are a quality assurance agent that reviews edits made to a fix-form "
    "traffic scenario description."
)

_TQA_DIRECTIVES = """Proceed in four steps:
1. Summarize the modification in your own words.
2. Plan verification questions that would expose mistakes.
3. Answer each question against the scenario and the modified vectors.
4. Rate the modification in each category with an integer from 1 to 5:
Compliance: <1-5>
Realism: <1-5>
Logical Consistency: <1-5>
If any category falls below 4, add a final section starting with "Feedback:"
that tells the editor precisely what to fix."""


def encode_tqa_prompt(
    scenario: Scenario,
    instructions: str,
    result: ModificationResult,
    common_problems: Sequence[str] = (),
) -> str:
    """The review prompt: scenario, instruction, edit, and known pitfalls."""
    parts = [
        _TQA_PREAMBLE,
        "",
        "Input:",
        scenario_input_block(scenario, LaneFormat.POLYLINE),
        "",
        "User Instructions:",
        instructions,
        "",
        "Modified Vectors:",
    ]
    if result.modified_vectors:
        parts += [_entity_line(a.id, a.vector()) for a in result.modified_vectors]
    else:
        parts += ["(none)"]
    removed = [
        d.modified_agent for d in result.modification_dicts if d.action is ModAction.REMOVE
    ]
    if removed:
        parts += ["", "Removed agents: " + ", ".join(removed)]
    problems = [p for p in common_problems if str(p).strip()]
    if problems:
        parts += ["", "Common problems to check:"]
        parts += [f"- {p}" for p in problems]
    parts += ["", _TQA_DIRECTIVES]
    return "\n".join(parts)


def default_common_problems() -> tuple[str, ...]:
    """The shipped checklist of frequent editing mistakes, one per line."""
    text = resources.files("scenaug").joinpath("data/common_problems.txt").read_text("utf-8")
    return tuple(line.strip() for line in text.splitlines() if line.strip())


_VQA_QUESTIONS_PREAMBLE = (
    "You are a quality assurance engineer preparing to verify an edit to a "
    "traffic scenario from a bird's-eye-view rendering."
)

_VQA_ANSWER_PREAMBLE = (
    "You are looking at a bird's-eye-view rendering of a traffic scenario. "
    "North is up and east is right. The ego vehicle is drawn in red, modified "
    "or added agents in blue, all other agents in dark gray."
)

_VQA_VERDICT_PREAMBLE = (
    "You are a quality assurance engineer deciding whether an edit to a "
    "traffic scenario was performed correctly."
)


def encode_vqa_prompt(
    stage: VqaStage,
    *,
    instructions: str | None = None,
    summary: str | None = None,
    questions: Sequence[str] | None = None,
    answers: str | None = None,
) -> str:
    """Stage-specific prompt of the visual verification loop."""
    if not isinstance(stage, VqaStage):
        raise StageInputError(f"stage must be a VqaStage, got {stage!r}")
    if stage is VqaStage.ENGINEER_QUESTIONS:
        if not instructions or not instructions.strip():
            raise StageInputError("question stage needs the user instructions")
        parts = [_VQA_QUESTIONS_PREAMBLE, "", "User Instructions:", instructions]
        if summary and summary.strip():
            parts += ["", "Editor summary:", summary]
        parts += [
            "",
            "Write critical questions whose answers, read off the rendering, would "
            "reveal whether the requested change was made correctly. Ask about "
            "positions, distances, headings, lane assignment and plausibility. "
            "Do not answer them yourself; list numbered questions",
        ]
        return "\n".join(parts)
    if stage is VqaStage.VLM_ANSWER:
        if not questions:
            raise StageInputError("answer stage needs at least one question")
        parts = [_VQA_ANSWER_PREAMBLE, "", "Answer each question by its number:"]
        parts += [f"{i}. {q}" for i, q in enumerate(questions, start=1)]
        return "\n".join(parts)
    # ENGINEER_VERDICT
    if not questions:
        raise StageInputError("verdict stage needs the questions")
    if answers is None or not answers.strip():
        raise StageInputError("verdict stage needs the answers")
    parts = [_VQA_VERDICT_PREAMBLE, "", "Questions:"]
    parts += [f"{i}. {q}" for i, q in enumerate(questions, start=1)]
    parts += ["", "Answers:", answers]
    parts += [
        "",
        "Judge from the answers whether the edit satisfies the instructions. "
        "Reply with a short justification, then a line starting with "
        '"Feedback:" when corrections are needed, and finish with a single '
        "final verdict token on the last line: PASS or FAIL.",
    ]
    return "\n".join(parts)


def parse_vqa_verdict(text: str) -> tuple[bool, str]:
    """The final PASS/FAIL token plus any feedback text."""
    verdict: bool | None = None
    for line in reversed(text.splitlines()):
        stripped = line.strip().strip("*_ .!").upper()
        if not stripped:
            continue
        if stripped.endswith("PASS"):
            verdict = True
        elif stripped.endswith("FAIL"):
            verdict = False
        break
    if verdict is None:
        raise MissingSectionError("no final PASS or FAIL verdict found")
    feedback_lines: list[str] = []
    capture = False
    for line in text.splitlines():
        match = _FEEDBACK_RE.match(line)
        if match:
            capture = True
            rest = match.group(1).strip()
            if rest:
                feedback_lines.append(rest)
            continue
        if capture:
            stripped = line.strip().strip("*_ .!").upper()
            if stripped in ("PASS", "FAIL"):
                break
            feedback_lines.append(line)
    return verdict, "\n".join(feedback_lines).strip()


def parse_numbered_questions(text: str) -> tuple[str, ...]:
    """Lines of the form '1. question' or '2) question', in order."""
    questions = []
    for line in text.splitlines():
        match = re.match(r"^\s*(\d+)[.)]\s+(..*)$", line)
        if match:
            questions.append(match.group(2).strip())
    return tuple(questions)
