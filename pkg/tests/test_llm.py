"""Chat backends: scripted determinism and HTTP retry behavior."""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from scenaug.errors import (
    BackendError,
    PredicateMismatchError,
    ScriptExhaustedError,
    ValidationError,
)
from scenaug.llm import (
    BackendConfig,
    ChatMessage,
    HttpChatBackend,
    Role,
    ScriptEntry,
    ScriptedBackend,
    chat,
)


def _user(text: str, image: bytes | None = None) -> list[ChatMessage]:
    return [ChatMessage(role=Role.USER, content=text, image=image)]


def _completion(text: str) -> dict:
    return {"choices": [{"message": {"role": "assistant", "content": text}}]}


class _StubHandler(BaseHTTPRequestHandler):
    def do_POST(self):  # noqa: N802 (http.server API)
        length = int(self.headers.get("Content-Length", "0"))
        body = json.loads(self.rfile.read(length) or b"{}")
        self.server.requests.append(
            {
                "path": self.path,
                "body": body,
                "authorization": self.headers.get("Authorization"),
            }
        )
        if self.server.script:
            status, payload = self.server.script.pop(0)
        else:
            status, payload = 200, _completion("default")
        data = json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture()
def stub_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _StubHandler)
    server.requests = []
    server.script = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield server
    finally:
        server.shutdown()
        thread.join(timeout=5)
        server.server_close()


def _backend(server, **overrides):
    sleeps: list[float] = []
    defaults = dict(
        base_url=f"http://127.0.0.1:{server.server_address[1]}",
        model_name="test-model",
        timeout_s=5.0,
        max_retries=3,
    )
    defaults.update(overrides)
    backend = HttpChatBackend(BackendConfig(**defaults), sleep=sleeps.append)
    return backend, sleeps


class TestChatMessage:
    def test_image_only_on_user(self):
        ChatMessage(role=Role.USER, content="look", image=b"\x89PNG")
        with pytest.raises(ValidationError):
            ChatMessage(role=Role.SYSTEM, content="look", image=b"\x89PNG")
        with pytest.raises(ValidationError):
            ChatMessage(role=Role.ASSISTANT, content="look", image=b"\x89PNG")

    def test_content_required_without_image(self):
        with pytest.raises(ValidationError):
            ChatMessage(role=Role.USER, content="")
        # an image alone is a valid user turn
        ChatMessage(role=Role.USER, content="", image=b"\x89PNG")

    def test_first_message_role_checked(self):
        backend = ScriptedBackend(["OK"])
        with pytest.raises(ValidationError):
            backend.chat([ChatMessage(role=Role.ASSISTANT, content="hello")])
        with pytest.raises(ValidationError):
            backend.chat([])


class TestBackendConfig:
    def test_bounds(self):
        with pytest.raises(ValidationError):
            BackendConfig(base_url="http://x", model_name="m", timeout_s=0.0)
        with pytest.raises(ValidationError):
            BackendConfig(base_url="http://x", model_name="m", max_retries=-1)
        with pytest.raises(ValidationError):
            BackendConfig(base_url="", model_name="m")


class TestScriptedBackend:
    def test_ordered_consumption_and_exhaustion(self):
        backend = ScriptedBackend(["OK"])
        assert chat(backend, _user("hello")) == "OK"
        with pytest.raises(ScriptExhaustedError):
            chat(backend, _user("hello again"))

    def test_predicate_gates_response(self):
        backend = ScriptedBackend([ScriptEntry(text="OK", expect="User Instructions")])
        with pytest.raises(PredicateMismatchError):
            backend.chat(_user("no instructions here"))

    def test_predicate_satisfied(self):
        backend = ScriptedBackend([ScriptEntry(text="OK", expect="User Instructions")])
        assert backend.chat(_user("...\nUser Instructions:\nadd a car")) == "OK"

    def test_match_mode_selects_by_substring(self):
        backend = ScriptedBackend(
            [
                ScriptEntry(text="for scene-001", expect="scene-001"),
                ScriptEntry(text="for scene-000", expect="scene-000"),
            ],
            mode="match",
        )
        assert backend.chat(_user("Scenario: scene-000")) == "for scene-000"
        assert backend.chat(_user("Scenario: scene-001")) == "for scene-001"
        with pytest.raises(ScriptExhaustedError):
            backend.chat(_user("Scenario: scene-000"))

    def test_deterministic_logs(self):
        prompts = ["alpha", "beta"]
        logs = []
        for _ in range(2):
            backend = ScriptedBackend(["one", "two"])
            for prompt in prompts:
                backend.chat(_user(prompt))
            logs.append(backend.call_log)
        assert logs[0] == logs[1]
        assert [entry.response for entry in logs[0]] == ["one", "two"]

    def test_every_call_logged_including_errors(self):
        backend = ScriptedBackend(["only"])
        backend.chat(_user("a"))
        with pytest.raises(ScriptExhaustedError):
            backend.chat(_user("b"))
        log = backend.call_log
        assert len(log) == 2
        assert log[0].response == "only" and log[0].error is None
        assert log[1].response is None and "exhausted" in log[1].error

    def test_match_mode_is_thread_safe(self):
        entries = [ScriptEntry(text=f"r{i}") for i in range(16)]
        backend = ScriptedBackend(entries, mode="match")
        results = []
        lock = threading.Lock()

        def worker():
            text = backend.chat(_user("x"))
            with lock:
                results.append(text)

        threads = [threading.Thread(target=worker) for _ in range(16)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(results) == sorted(e.text for e in entries)
        assert backend.remaining == 0

    def test_from_dir_numeric_order_and_expect(self, tmp_path):
        (tmp_path / "10.txt").write_text("tenth")
        (tmp_path / "2.txt").write_text("second")
        (tmp_path / "1_intro.txt").write_text("EXPECT: User Instructions\nfirst")
        (tmp_path / "notes.md").write_text("ignored")
        backend = ScriptedBackend.from_dir(tmp_path)
        assert backend.chat(_user("User Instructions: go")) == "first"
        assert backend.chat(_user("x")) == "second"
        assert backend.chat(_user("x")) == "tenth"

    def test_from_dir_missing(self, tmp_path):
        with pytest.raises(BackendError):
            ScriptedBackend.from_dir(tmp_path / "nope")
        with pytest.raises(BackendError):
            ScriptedBackend.from_dir(tmp_path)


class TestHttpChatBackend:
    def test_returns_stub_completion(self, stub_server):
        stub_server.script.append((200, _completion("Hello from stub")))
        backend, sleeps = _backend(stub_server)
        assert backend.chat(_user("hi")) == "Hello from stub"
        assert sleeps == []
        request = stub_server.requests[0]
        assert request["path"] == "/chat/completions"
        assert request["body"]["model"] == "test-model"
        assert request["body"]["messages"] == [{"role": "user", "content": "hi"}]

    def test_retries_transient_failures_with_backoff(self, stub_server):
        stub_server.script += [(500, {}), (429, {}), (200, _completion("OK"))]
        backend, sleeps = _backend(stub_server)
        assert backend.chat(_user("hi")) == "OK"
        assert sleeps == [1.0, 2.0]
        assert len(stub_server.requests) == 3

    def test_auth_failure_fails_immediately(self, stub_server):
        stub_server.script.append((401, {"error": "bad key"}))
        backend, sleeps = _backend(stub_server)
        with pytest.raises(BackendError):
            backend.chat(_user("hi"))
        assert sleeps == []
        assert len(stub_server.requests) == 1

    def test_bad_request_fails_immediately(self, stub_server):
        stub_server.script.append((400, {"error": "too long"}))
        backend, _ = _backend(stub_server)
        with pytest.raises(BackendError):
            backend.chat(_user("hi"))
        assert len(stub_server.requests) == 1

    def test_retries_exhausted(self, stub_server):
        stub_server.script += [(500, {}), (500, {})]
        backend, sleeps = _backend(stub_server, max_retries=1)
        with pytest.raises(BackendError):
            backend.chat(_user("hi"))
        assert sleeps == [1.0]
        assert len(stub_server.requests) == 2

    def test_bearer_token_from_env(self, stub_server, monkeypatch):
        monkeypatch.setenv("SCENAUG_API_KEY", "secret-key")
        stub_server.script.append((200, _completion("OK")))
        backend, _ = _backend(stub_server)
        backend.chat(_user("hi"))
        assert stub_server.requests[0]["authorization"] == "Bearer secret-key"

    def test_no_token_sends_no_header(self, stub_server, monkeypatch):
        monkeypatch.delenv("SCENAUG_API_KEY", raising=False)
        stub_server.script.append((200, _completion("OK")))
        backend, _ = _backend(stub_server)
        backend.chat(_user("hi"))
        assert stub_server.requests[0]["authorization"] is None

    def test_image_rides_as_data_uri(self, stub_server):
        stub_server.script.append((200, _completion("seen")))
        backend, _ = _backend(stub_server)
        backend.chat(_user("describe", image=b"\x89PNG fake"))
        content = stub_server.requests[0]["body"]["messages"][0]["content"]
        assert content[0] == {"type": "text", "text": "describe"}
        assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")

    def test_malformed_completion_body(self, stub_server):
        stub_server.script.append((200, {"unexpected": True}))
        backend, _ = _backend(stub_server)
        with pytest.raises(BackendError):
            backend.chat(_user("hi"))

    def test_call_log_has_one_entry_per_call(self, stub_server):
        stub_server.script += [(200, _completion("first")), (401, {})]
        backend, _ = _backend(stub_server)
        backend.chat(_user("a"))
        with pytest.raises(BackendError):
            backend.chat(_user("b"))
        log = backend.call_log
        assert len(log) == 2
        assert log[0].response == "first"
        assert log[1].response is None and "401" in log[1].error
