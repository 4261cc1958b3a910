"""Pipeline state machines that drive the editing and review agents.

Four strategies share one loop skeleton: a single editing pass (OTM), a
tool-calling conversation (FC), a text review loop (TQA), and a visual review
loop over rendered images (VQA). The full exchange is captured in a transcript
that can be written to disk or turned back into scripted backends for replay.
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

from .errors import (
    CodecError,
    IntegrityError,
    ParseFailure,
    RangeError,
    ScenaugError,
    ToolArgError,
    ToolBudgetExceeded,
    UnknownIdError,
    ValidationError,
)
from .geometry import lane_point_tool
from .llm import ChatBackend, ChatMessage, Role, ScriptedBackend, chat
from .prompts import (
    PromptConfig,
    QaRating,
    Strategy,
    VqaStage,
    default_common_problems,
    encode_sma_prompt,
    encode_tqa_prompt,
    encode_vqa_prompt,
    format_tool_error,
    format_tool_result,
    parse_numbered_questions,
    parse_qa_rating,
    parse_sma_response,
    parse_tool_call,
    parse_vqa_verdict,
)
from .render import rasterize, render_bev
from .scenario import ModAction, ModificationResult, Scenario, apply_modification

logger = logging.getLogger(__name__)

_CORRECTIVE_MESSAGE = (
    "Your output did not follow the format. Answer again using exactly the "
    "sections Insights, Summary, Modification Dict, Modification Calculations "
    "and Modified Vectors."
)

_VQA_RASTER_PX = 1024


class PipelineStatus(enum.Enum):
    ACCEPTED = "ACCEPTED"
    MAX_ITERATIONS = "MAX_ITERATIONS"
    FAILED = "FAILED"


@dataclass(frozen=True)
class VqaVerdict:
    """One round of the visual review: questions, answers, and the call."""

    passed: bool
    feedback: str
    questions: tuple[str, ...]
    answers: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "questions", tuple(str(q) for q in self.questions))


@dataclass(frozen=True)
class TranscriptEntry:
    """One recorded message; elapsed_s is non-zero on agent replies."""

    agent: str
    role: str
    content: str
    elapsed_s: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    sma_backend: ChatBackend
    strategy: Strategy = Strategy.OTM
    qa_backend: ChatBackend | None = None
    vlm_backend: ChatBackend | None = None
    max_qa_iterations: int = 3
    max_tool_calls: int = 8
    common_problems: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if not isinstance(self.strategy, Strategy):
            raise ValidationError(f"strategy must be a Strategy, got {self.strategy!r}")
        if int(self.max_qa_iterations) < 1:
            raise ValidationError("max_qa_iterations must be at least 1")
        if int(self.max_tool_calls) < 0:
            raise ValidationError("max_tool_calls must be non-negative")
        object.__setattr__(self, "max_qa_iterations", int(self.max_qa_iterations))
        object.__setattr__(self, "max_tool_calls", int(self.max_tool_calls))
        if self.strategy is Strategy.FC and self.max_tool_calls < 1:
            raise ValidationError("the FC strategy needs max_tool_calls of at least 1")
        if self.strategy in (Strategy.TQA, Strategy.VQA) and self.qa_backend is None:
            raise ValidationError(f"the {self.strategy.value} strategy needs a qa_backend")
        if self.strategy is Strategy.VQA and self.vlm_backend is None:
            raise ValidationError("the VQA strategy needs a vlm_backend")
        if self.common_problems is not None:
            object.__setattr__(
                self, "common_problems", tuple(str(p) for p in self.common_problems)
            )

    def problems(self) -> tuple[str, ...]:
        if self.common_problems is None:
            return default_common_problems()
        return self.common_problems


@dataclass(frozen=True)
class PipelineOutcome:
    status: PipelineStatus
    result: ModificationResult | None
    qa_history: tuple[QaRating | VqaVerdict, ...] = ()
    transcript: tuple[TranscriptEntry, ...] = ()
    error: str = ""

    def __post_init__(self) -> None:
        if not isinstance(self.status, PipelineStatus):
            raise ValidationError(f"status must be a PipelineStatus, got {self.status!r}")
        object.__setattr__(self, "qa_history", tuple(self.qa_history))
        object.__setattr__(self, "transcript", tuple(self.transcript))
        if self.status is PipelineStatus.FAILED:
            if not self.error:
                raise ValidationError("a FAILED outcome must say what went wrong")
        elif self.result is None:
            raise ValidationError(f"a {self.status.value} outcome must carry a result")
        if self.qa_history:
            last_passed = self.qa_history[-1].passed
            if self.status is PipelineStatus.ACCEPTED and not last_passed:
                raise ValidationError("ACCEPTED requires the last review to pass")
            if self.status is PipelineStatus.MAX_ITERATIONS and last_passed:
                raise ValidationError("MAX_ITERATIONS requires the last review to fail")


# --- conversation plumbing ----------------------------------------------------


def _describe(message: ChatMessage) -> str:
    if message.image is None:
        return message.content
    note = f"[attached image: {len(message.image)} bytes {message.image_media_type}]"
    return f"{message.content}\n{note}" if message.content else note


class _Channel:
    """One agent's running conversation, mirrored into the shared transcript."""

    def __init__(self, name: str, backend: ChatBackend, transcript: list[TranscriptEntry]):
        self.name = name
        self.backend = backend
        self.transcript = transcript
        self.conversation: list[ChatMessage] = []

    def post(self, message: ChatMessage) -> None:
        self.transcript.append(
            TranscriptEntry(self.name, message.role.value, _describe(message))
        )
        self.conversation.append(message)

    def ask(self) -> str:
        started = time.perf_counter()
        reply = chat(self.backend, self.conversation)
        elapsed = time.perf_counter() - started
        self.transcript.append(TranscriptEntry(self.name, "assistant", reply, elapsed))
        self.conversation.append(ChatMessage(role=Role.ASSISTANT, content=reply))
        return reply


def _one_shot(
    name: str,
    backend: ChatBackend,
    transcript: list[TranscriptEntry],
    message: ChatMessage,
) -> str:
    channel = _Channel(name, backend, transcript)
    channel.post(message)
    return channel.ask()


def _parse_with_retry(channel: _Channel, reply: str) -> ModificationResult:
    try:
        return parse_sma_response(reply)
    except CodecError as first:
        logger.debug("editing output unparseable, retrying once: %s", first)
        channel.post(ChatMessage(role=Role.USER, content=_CORRECTIVE_MESSAGE))
        retry = channel.ask()
        try:
            return parse_sma_response(retry)
        except CodecError as second:
            raise ParseFailure(
                f"editing output stayed unparseable after one retry: {second}"
            ) from second


# --- strategy bodies ------------------------------------------------------------


def _run_tool_loop(channel: _Channel, scenario: Scenario, budget: int) -> str:
    reply = channel.ask()
    calls_used = 0
    while True:
        malformed = False
        try:
            request = parse_tool_call(reply)
        except ToolArgError:
            request, malformed = None, True
        if request is None and not malformed:
            return reply
        if calls_used >= budget:
            raise ToolBudgetExceeded(
                f"the editing agent kept calling tools past the budget of {budget}"
            )
        calls_used += 1
        if malformed:
            line = format_tool_error("BAD_ARGS")
        else:
            try:
                anchor = lane_point_tool(scenario, request.lane_id, request.distance_m)
                line = format_tool_result(
                    anchor.position[0], anchor.position[1], anchor.heading
                )
            except UnknownIdError:
                line = format_tool_error("UNKNOWN_ID")
            except RangeError:
                line = format_tool_error("OUT_OF_RANGE")
        channel.post(ChatMessage(role=Role.USER, content=line))
        reply = channel.ask()


def _qa_feedback_message(rating: QaRating) -> str:
    failing = ", ".join(rating.failing_categories()) or "overall quality"
    parts = [
        f"The quality review rejected this edit. Failing categories: {failing}.",
    ]
    if rating.feedback.strip():
        parts.append("Reviewer feedback: " + rating.feedback.strip())
    parts.append(
        "Revise the modification to address the feedback and answer again in "
        "the same output format."
    )
    return "\n".join(parts)


def _vqa_feedback_message(verdict: VqaVerdict) -> str:
    parts = ["The visual review rejected this edit."]
    if verdict.feedback.strip():
        parts.append("Reviewer feedback: " + verdict.feedback.strip())
    parts.append(
        "Revise the modification to address the feedback and answer again in "
        "the same output format."
    )
    return "\n".join(parts)


def _modified_ids(result: ModificationResult) -> frozenset[str]:
    return frozenset(
        d.modified_agent
        for d in result.modification_dicts
        if d.action in (ModAction.ADD, ModAction.MODIFY)
    )


def _tqa_review(
    scenario: Scenario,
    instructions: str,
    result: ModificationResult,
    cfg: PipelineConfig,
    transcript: list[TranscriptEntry],
) -> QaRating:
    prompt = encode_tqa_prompt(scenario, instructions, result, cfg.problems())
    reply = _one_shot("qa", cfg.qa_backend, transcript, ChatMessage(role=Role.USER, content=prompt))
    try:
        return parse_qa_rating(reply)
    except CodecError as exc:
        raise ParseFailure(f"the review output was unparseable: {exc}") from exc


def _vqa_review(
    scenario: Scenario,
    instructions: str,
    result: ModificationResult,
    cfg: PipelineConfig,
    transcript: list[TranscriptEntry],
) -> VqaVerdict:
    try:
        modified = apply_modification(scenario, result)
    except IntegrityError as exc:
        # nothing to render; report the broken edit back through the loop
        return VqaVerdict(
            passed=False,
            feedback=f"The edit could not be applied to the scenario: {exc}",
            questions=(),
            answers="",
        )
    png = rasterize(render_bev(modified, _modified_ids(result)), _VQA_RASTER_PX)

    question_prompt = encode_vqa_prompt(
        VqaStage.ENGINEER_QUESTIONS, instructions=instructions, summary=result.summary
    )
    question_reply = _one_shot(
        "qa", cfg.qa_backend, transcript, ChatMessage(role=Role.USER, content=question_prompt)
    )
    questions = parse_numbered_questions(question_reply)
    if not questions:
        raise ParseFailure("the review engineer produced no numbered questions")

    answer_prompt = encode_vqa_prompt(VqaStage.VLM_ANSWER, questions=questions)
    answers = _one_shot(
        "vlm",
        cfg.vlm_backend,
        transcript,
        ChatMessage(role=Role.USER, content=answer_prompt, image=png),
    )

    verdict_prompt = encode_vqa_prompt(
        VqaStage.ENGINEER_VERDICT, questions=questions, answers=answers
    )
    verdict_reply = _one_shot(
        "qa", cfg.qa_backend, transcript, ChatMessage(role=Role.USER, content=verdict_prompt)
    )
    try:
        passed, feedback = parse_vqa_verdict(verdict_reply)
    except CodecError as exc:
        raise ParseFailure(f"the review verdict was unparseable: {exc}") from exc
    return VqaVerdict(passed=passed, feedback=feedback, questions=questions, answers=answers)


# --- pipeline entry points -------------------------------------------------------


def run_pipeline(scenario: Scenario, instructions: str, cfg: PipelineConfig) -> PipelineOutcome:
    """Drive one editing run to a final status.

    Raises ParseFailure, ToolBudgetExceeded and BackendError; run_batch turns
    those into FAILED outcomes instead.
    """
    if not isinstance(instructions, str) or not instructions.strip():
        raise ValidationError("instructions must be non-empty text")
    if not isinstance(cfg, PipelineConfig):
        raise ValidationError("cfg must be a PipelineConfig")

    transcript: list[TranscriptEntry] = []
    channel = _Channel("sma", cfg.sma_backend, transcript)
    prompt_config = PromptConfig(strategy=cfg.strategy)
    channel.post(
        ChatMessage(
            role=Role.USER,
            content=encode_sma_prompt(scenario, instructions, prompt_config),
        )
    )

    if cfg.strategy is Strategy.FC:
        reply = _run_tool_loop(channel, scenario, cfg.max_tool_calls)
    else:
        reply = channel.ask()
    result = _parse_with_retry(channel, reply)
    generations = 1

    history: list[QaRating | VqaVerdict] = []
    status = PipelineStatus.ACCEPTED
    if cfg.strategy in (Strategy.TQA, Strategy.VQA):
        review = _tqa_review if cfg.strategy is Strategy.TQA else _vqa_review
        for iteration in range(1, cfg.max_qa_iterations + 1):
            verdict = review(scenario, instructions, result, cfg, transcript)
            history.append(verdict)
            if verdict.passed:
                status = PipelineStatus.ACCEPTED
                break
            if iteration == cfg.max_qa_iterations:
                status = PipelineStatus.MAX_ITERATIONS
                logger.warning(
                    "review loop hit %d iterations without passing; keeping the "
                    "last candidate",
                    cfg.max_qa_iterations,
                )
                break
            feedback = (
                _qa_feedback_message(verdict)
                if isinstance(verdict, QaRating)
                else _vqa_feedback_message(verdict)
            )
            channel.post(ChatMessage(role=Role.USER, content=feedback))
            result = _parse_with_retry(channel, channel.ask())
            generations += 1

    result = replace(
        result,
        iterations=generations,
        transcript=tuple((m.role.value, _describe(m)) for m in channel.conversation),
    )
    return PipelineOutcome(
        status=status,
        result=result,
        qa_history=tuple(history),
        transcript=tuple(transcript),
    )


def run_batch(
    items: Sequence[tuple[Scenario, str]],
    cfg: PipelineConfig,
    parallelism: int = 1,
) -> list[PipelineOutcome]:
    """Run many pipelines; failures become FAILED outcomes, order is kept."""
    if int(parallelism) < 1:
        raise ValidationError("parallelism must be at least 1")

    def _one(item: tuple[Scenario, str]) -> PipelineOutcome:
        scenario, instructions = item
        try:
            return run_pipeline(scenario, instructions, cfg)
        except ScenaugError as exc:
            logger.warning("pipeline for %s failed: %s", scenario.scenario_id, exc)
            return PipelineOutcome(
                status=PipelineStatus.FAILED,
                result=None,
                error=f"{type(exc).__name__}: {exc}",
            )

    if int(parallelism) == 1:
        return [_one(item) for item in items]
    with ThreadPoolExecutor(max_workers=int(parallelism)) as pool:
        return list(pool.map(_one, items))


# --- transcripts -------------------------------------------------------------------


def transcript_to_text(outcome: PipelineOutcome) -> str:
    """Human-readable dump: ordered messages with agent, role and timing."""
    lines = [f"status: {outcome.status.value}"]
    if outcome.error:
        lines.append(f"error: {outcome.error}")
    for entry in outcome.transcript:
        timing = f" ({entry.elapsed_s:.3f}s)" if entry.elapsed_s else ""
        lines.append(f"=== {entry.agent} {entry.role}{timing} ===")
        lines.append(entry.content)
    return "\n".join(lines) + "\n"


def write_transcript(outcome: PipelineOutcome, path: str | Path) -> None:
    Path(path).write_text(transcript_to_text(outcome), encoding="utf-8")


def replay_backends(outcome: PipelineOutcome) -> dict[str, ScriptedBackend]:
    """Scripted backends that replay each agent's recorded replies in order."""
    replies: dict[str, list[str]] = {}
    for entry in outcome.transcript:
        if entry.role == "assistant":
            replies.setdefault(entry.agent, []).append(entry.content)
    return {agent: ScriptedBackend(texts) for agent, texts in replies.items()}
