"""Chat backends: one HTTP client and one deterministic scripted stand-in.

Both expose ``chat(messages) -> str`` and keep a completion-ordered call log,
so orchestration code and tests are written against the same surface.
"""

from __future__ import annotations

import base64
import enum
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .errors import (
    BackendError,
    PredicateMismatchError,
    ScriptExhaustedError,
    ValidationError,
)

logger = logging.getLogger(__name__)

RETRY_BASE_DELAY_S = 1.0
RETRY_FACTOR = 2.0


class Role(enum.Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"
    TOOL = "tool"


@dataclass(frozen=True)
class ChatMessage:
    """One turn of a conversation; images ride only on user turns."""

    role: Role
    content: str = ""
    image: bytes | None = None
    image_media_type: str = "image/png"

    def __post_init__(self) -> None:
        if not isinstance(self.role, Role):
            raise ValidationError(f"role must be a Role, got {self.role!r}")
        if not isinstance(self.content, str):
            raise ValidationError("content must be a string")
        if self.image is not None:
            if self.role is not Role.USER:
                raise ValidationError("images are allowed only on user messages")
            if not isinstance(self.image, bytes) or not self.image:
                raise ValidationError("image must be non-empty bytes")
        elif not self.content:
            raise ValidationError("content must be non-empty unless an image is attached")


@dataclass(frozen=True)
class BackendConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = "SCENAUG_API_KEY"
    timeout_s: float = 60.0
    max_retries: int = 3
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not isinstance(self.base_url, str) or not self.base_url:
            raise ValidationError("base_url must be a non-empty string")
        if not isinstance(self.model_name, str) or not self.model_name:
            raise ValidationError("model_name must be a non-empty string")
        if not float(self.timeout_s) > 0.0:
            raise ValidationError("timeout_s must be positive")
        if int(self.max_retries) < 0:
            raise ValidationError("max_retries must be non-negative")
        object.__setattr__(self, "timeout_s", float(self.timeout_s))
        object.__setattr__(self, "max_retries", int(self.max_retries))
        object.__setattr__(self, "temperature", float(self.temperature))


@dataclass(frozen=True)
class CallLogEntry:
    messages: tuple[ChatMessage, ...]
    response: str | None
    error: str | None


class ChatBackend(Protocol):
    def chat(self, messages: Sequence[ChatMessage]) -> str: ...

    @property
    def call_log(self) -> tuple[CallLogEntry, ...]: ...


def _check_messages(messages: Sequence[ChatMessage]) -> tuple[ChatMessage, ...]:
    messages = tuple(messages)
    if not messages:
        raise ValidationError("chat needs at least one message")
    for message in messages:
        if not isinstance(message, ChatMessage):
            raise ValidationError(f"messages must be ChatMessage, got {type(message).__name__}")
    if messages[0].role not in (Role.SYSTEM, Role.USER):
        raise ValidationError("the first message must be a system or user message")
    return messages


def chat(backend: ChatBackend, messages: Sequence[ChatMessage]) -> str:
    """Single entry point used by the orchestrator; delegates to the backend."""
    return backend.chat(messages)


class _LogMixin:
    def __init__(self) -> None:
        self._log: list[CallLogEntry] = []
        self._lock = threading.Lock()

    def _record(
        self,
        messages: tuple[ChatMessage, ...],
        response: str | None,
        error: str | None,
    ) -> None:
        with self._lock:
            self._log.append(CallLogEntry(messages=messages, response=response, error=error))

    @property
    def call_log(self) -> tuple[CallLogEntry, ...]:
        with self._lock:
            return tuple(self._log)


def _wire_message(message: ChatMessage) -> dict:
    if message.image is None:
        return {"role": message.role.value, "content": message.content}
    encoded = base64.b64encode(message.image).decode("ascii")
    uri = f"data:{message.image_media_type};base64,{encoded}"
    parts: list[dict] = []
    if message.content:
        parts.append({"type": "text", "text": message.content})
    parts.append({"type": "image_url", "image_url": {"url": uri}})
    return {"role": message.role.value, "content": parts}


class HttpChatBackend(_LogMixin):
    """Chat-completion client with exponential backoff on transient failures.

    Authentication is a bearer token read from the configured environment
    variable at call time; a missing variable simply sends no auth header.
    """

    def __init__(
        self,
        config: BackendConfig,
        session: requests.Session | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        super().__init__()
        self.config = config
        self._session = session or requests.Session()
        self._sleep = sleep

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.config.api_key_env_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def chat(self, messages: Sequence[ChatMessage]) -> str:
        messages = _check_messages(messages)
        payload = {
            "model": self.config.model_name,
            "temperature": self.config.temperature,
            "messages": [_wire_message(m) for m in messages],
        }
        url = self.config.base_url.rstrip("/") + "/chat/completions"
        last_error = "no attempt made"
        for attempt in range(self.config.max_retries + 1):
            if attempt > 0:
                self._sleep(RETRY_BASE_DELAY_S * RETRY_FACTOR ** (attempt - 1))
            try:
                response = self._session.post(
                    url, json=payload, headers=self._headers(), timeout=self.config.timeout_s
                )
            except (requests.Timeout, requests.ConnectionError) as exc:
                last_error = f"transport: {exc}"
                logger.warning("chat attempt %d failed (%s)", attempt + 1, last_error)
                continue
            if response.status_code == 429 or response.status_code >= 500:
                last_error = f"http {response.status_code}"
                logger.warning("chat attempt %d failed (%s)", attempt + 1, last_error)
                continue
            if response.status_code != 200:
                error = f"http {response.status_code}: {response.text[:200]}"
                self._record(messages, None, error)
                raise BackendError(f"chat request rejected: {error}")
            try:
                body = response.json()
                text = body["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError):
                error = "malformed completion body"
                self._record(messages, None, error)
                raise BackendError(f"chat response unusable: {response.text[:200]}") from None
            if not isinstance(text, str):
                self._record(messages, None, "non-text completion")
                raise BackendError("chat completion content is not text")
            self._record(messages, text, None)
            return text
        self._record(messages, None, last_error)
        raise BackendError(
            f"chat failed after {self.config.max_retries + 1} attempts; last error: {last_error}"
        )


@dataclass(frozen=True)
class ScriptEntry:
    """One canned reply; ``expect`` gates it on a prompt substring."""

    text: str
    expect: str | None = None


class ScriptedBackend(_LogMixin):
    """Canned responses for tests and offline runs.

    In ``ordered`` mode entries are consumed front to back and a failed
    ``expect`` check is an error: the conversation drifted from the script.
    In ``match`` mode each call consumes the first unconsumed entry whose
    ``expect`` appears in the prompt, which keeps concurrent batch runs
    deterministic regardless of scheduling order.
    """

    def __init__(self, entries: Sequence[ScriptEntry | str], mode: str = "ordered") -> None:
        super().__init__()
        if mode not in ("ordered", "match"):
            raise ValidationError(f"mode must be 'ordered' or 'match', got {mode!r}")
        self.mode = mode
        self._entries = [
            entry if isinstance(entry, ScriptEntry) else ScriptEntry(text=entry)
            for entry in entries
        ]
        self._consumed = [False] * len(self._entries)

    @classmethod
    def from_dir(cls, path: str | Path, mode: str = "ordered") -> "ScriptedBackend":
        """Load numbered ``*.txt`` scripts; an ``EXPECT:`` first line gates one.

        Files sort by their leading integer (``2.txt`` before ``10.txt``).
        """
        directory = Path(path)
        if not directory.is_dir():
            raise BackendError(f"script directory {directory} does not exist")
        found = []
        for file in directory.glob("*.txt"):
            match = re.match(r"^(\d+)", file.stem)
            if match:
                found.append((int(match.group(1)), file))
        if not found:
            raise BackendError(f"no numbered script files in {directory}")
        entries = []
        for _, file in sorted(found):
            text = file.read_text("utf-8")
            expect = None
            if text.startswith("EXPECT:"):
                first, _, rest = text.partition("\n")
                expect = first[len("EXPECT:"):].strip()
                text = rest
            entries.append(ScriptEntry(text=text, expect=expect))
        return cls(entries, mode=mode)

    def chat(self, messages: Sequence[ChatMessage]) -> str:
        messages = _check_messages(messages)
        prompt_text = "\n".join(m.content for m in messages)
        with self._lock:
            entry = self._take(prompt_text, messages)
        self._record(messages, entry.text, None)
        return entry.text

    def _take(self, prompt_text: str, messages: tuple[ChatMessage, ...]) -> ScriptEntry:
        if self.mode == "ordered":
            for i, entry in enumerate(self._entries):
                if self._consumed[i]:
                    continue
                if entry.expect is not None and entry.expect not in prompt_text:
                    self._log.append(
                        CallLogEntry(messages, None, f"predicate {entry.expect!r} not in prompt")
                    )
                    raise PredicateMismatchError(
                        f"scripted response {i} expects {entry.expect!r} in the prompt"
                    )
                self._consumed[i] = True
                return entry
        else:
            for i, entry in enumerate(self._entries):
                if self._consumed[i]:
                    continue
                if entry.expect is None or entry.expect in prompt_text:
                    self._consumed[i] = True
                    return entry
        self._log.append(CallLogEntry(messages, None, "script exhausted"))
        raise ScriptExhaustedError(
            f"no scripted response left for this prompt ({len(self._entries)} total)"
        )

    @property
    def remaining(self) -> int:
        with self._lock:
            return sum(1 for used in self._consumed if not used)
