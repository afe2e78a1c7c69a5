"""In-process W3C WebDriver mock server for conformance tests and offline demos.

Implements new session, delete, navigate, current url, title, find element,
element click/value/text, execute sync, screenshot and status, with W3C error
bodies. Every request is recorded; canned responses can be queued to replay
recorded exchanges.
"""

from __future__ import annotations

import ast
import itertools
import json
import logging
import operator
import re
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

logger = logging.getLogger(__name__)

ONE_PIXEL_PNG = (
    "iVBORw0KGgoAAAANSUhEUgAAAAEAAAABCAYAAAAfFcSJAAAADUlEQVR42mNkYPhfDwAChwGA60e6kgAAAABJRU5ErkJggg=="
)
ELEMENT_KEY = "element-6066-11e4-a52e-4f735466cecf"

_STATUS_BY_ERROR = {
    "session not created": 500,
    "invalid session id": 404,
    "no such element": 404,
    "stale element reference": 404,
    "javascript error": 500,
    "invalid argument": 400,
    "unknown command": 404,
    "unknown error": 500,
}

_SESSION_PATH = re.compile(r"^/session/(?P<sid>[^/]+)(?P<rest>/.*)?$")
_ELEMENT_PATH = re.compile(r"^/element/(?P<eid>[^/]+)/(?P<action>click|value|text)$")

_ARITHMETIC = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.USub: operator.neg,
}


class ScriptError(Exception):
    """Raised by mock scripts to produce a W3C ``javascript error``."""


def _evaluate_arithmetic(expression: str) -> Any:
    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _ARITHMETIC:
            return _ARITHMETIC[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _ARITHMETIC:
            return _ARITHMETIC[type(node.op)](walk(node.operand))
        raise ScriptError(f"unsupported expression {expression!r}")

    try:
        return walk(ast.parse(expression, mode="eval"))
    except SyntaxError as exc:
        raise ScriptError(f"SyntaxError: {exc.msg}") from None


def evaluate_literal_script(script: str, args: list[Any]) -> Any:
    """Tiny evaluator: ``return arguments[i]``, ``return <arithmetic>``, ``throw ...``."""
    body = script.strip().rstrip(";").strip()
    if body.startswith("throw"):
        raise ScriptError(body[len("throw"):].strip() or "thrown")
    if not body.startswith("return"):
        return None
    expression = body[len("return"):].strip()
    if expression == "arguments":
        return args
    match = re.fullmatch(r"arguments\[(\d+)\]", expression)
    if match:
        return args[int(match.group(1))]
    return _evaluate_arithmetic(expression)


@dataclass(frozen=True)
class RecordedRequest:
    method: str
    path: str
    body: Any


@dataclass
class MockElement:
    element_id: str
    text: str = ""
    typed: list[str] = field(default_factory=list)
    clicks: int = 0
    key: tuple[str, str] | None = None


@dataclass
class MockSession:
    session_id: str
    capabilities: dict[str, Any]
    url: str = "about:blank"
    elements: dict[str, MockElement] = field(default_factory=dict)


class _Handler(BaseHTTPRequestHandler):
    server: "_Server"

    def _dispatch(self, method: str) -> None:
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        try:
            body = json.loads(raw) if raw else None
        except ValueError:
            body = raw.decode("utf-8", "replace")
        status, payload = self.server.owner.handle(method, self.path, body)
        data = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json; charset=utf-8")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self) -> None:
        self._dispatch("GET")

    def do_POST(self) -> None:
        self._dispatch("POST")

    def do_DELETE(self) -> None:
        self._dispatch("DELETE")

    def log_message(self, format: str, *args: Any) -> None:
        logger.debug("mock webdriver: " + format % args)


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    owner: "MockWebDriverServer"


class MockWebDriverServer:
    """Usage::

        with MockWebDriverServer() as server:
            server.dom[("css selector", "#join")] = "Join"
            client.new_session(server.url, caps)
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0) -> None:
        self.host = host
        self.port = port
        self.requests: list[RecordedRequest] = []
        self.sessions: dict[str, MockSession] = {}
        self.dom: dict[tuple[str, str], str] = {}
        self.scripts: dict[str, Callable[[list[Any]], Any]] = {}
        self.screenshot_b64 = ONE_PIXEL_PNG
        self.session_ids: list[str] = []
        self.reject_new_session: str | None = None
        self.fail_delete = False
        self.title = "Mock page"
        self._queued: list[tuple[int, Any]] = []
        self._element_ids = itertools.count(1)
        self._lock = threading.Lock()
        self._server: _Server | None = None
        self._thread: threading.Thread | None = None

    # -- lifecycle ---------------------------------------------------------

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "MockWebDriverServer":
        self._server = _Server((self.host, self.port), _Handler)
        self._server.owner = self
        self.port = self._server.server_address[1]
        self._thread = threading.Thread(target=self._server.serve_forever, name="mock-webdriver", daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None

    def __enter__(self) -> "MockWebDriverServer":
        return self.start()

    def __exit__(self, *exc_info) -> None:
        self.stop()

    # -- scripting helpers for tests ---------------------------------------

    def queue_response(self, status: int, body: Any) -> None:
        """The next request gets this canned response (still recorded)."""
        with self._lock:
            self._queued.append((status, body))

    def requests_for(self, method: str, path_prefix: str = "") -> list[RecordedRequest]:
        return [r for r in self.requests if r.method == method and r.path.startswith(path_prefix)]

    def new_session_requests(self) -> list[RecordedRequest]:
        return [r for r in self.requests if r.method == "POST" and r.path == "/session"]

    def clicks(self, session_id: str, element_id: str) -> int:
        return self.sessions[session_id].elements[element_id].clicks

    # -- request handling --------------------------------------------------

    def handle(self, method: str, path: str, body: Any) -> tuple[int, Any]:
        with self._lock:
            self.requests.append(RecordedRequest(method, path, body))
            if self._queued:
                return self._queued.pop(0)
            try:
                return 200, {"value": self._route(method, path, body)}
            except _W3CError as err:
                return _STATUS_BY_ERROR.get(err.code, 500), {
                    "value": {"error": err.code, "message": err.message, "stacktrace": ""}
                }

    def _route(self, method: str, path: str, body: Any) -> Any:
        if method == "GET" and path == "/status":
            return {"ready": True, "message": "mock webdriver ready"}
        if method == "POST" and path == "/session":
            return self._new_session(body)

        match = _SESSION_PATH.match(path)
        if not match:
            raise _W3CError("unknown command", f"{method} {path}")
        sid, rest = match.group("sid"), match.group("rest") or ""
        if sid not in self.sessions:
            raise _W3CError("invalid session id", f"no active session {sid}")
        session = self.sessions[sid]

        if method == "DELETE" and rest == "":
            if self.fail_delete:
                del self.sessions[sid]
                raise _W3CError("unknown error", "delete failed")
            del self.sessions[sid]
            return None
        if rest == "/url":
            if method == "POST":
                if not isinstance(body, dict) or not isinstance(body.get("url"), str):
                    raise _W3CError("invalid argument", "url must be a string")
                session.url = body["url"]
                return None
            return session.url
        if method == "GET" and rest == "/title":
            return self.title
        if method == "POST" and rest == "/element":
            return self._find(session, body)
        element_match = _ELEMENT_PATH.match(rest)
        if element_match:
            return self._element_action(session, element_match.group("eid"), element_match.group("action"), body)
        if method == "POST" and rest == "/execute/sync":
            return self._execute(body)
        if method == "GET" and rest == "/screenshot":
            return self.screenshot_b64
        raise _W3CError("unknown command", f"{method} {path}")

    def _new_session(self, body: Any) -> Any:
        if self.reject_new_session is not None:
            raise _W3CError("session not created", self.reject_new_session)
        try:
            always_match = body["capabilities"]["alwaysMatch"]
        except (KeyError, TypeError):
            raise _W3CError("invalid argument", "missing capabilities.alwaysMatch") from None
        sid = self.session_ids.pop(0) if self.session_ids else uuid.uuid4().hex
        self.sessions[sid] = MockSession(sid, dict(always_match))
        return {"sessionId": sid, "capabilities": dict(always_match)}

    def _find(self, session: MockSession, body: Any) -> Any:
        key = (body.get("using"), body.get("value")) if isinstance(body, dict) else None
        if key not in self.dom:
            raise _W3CError("no such element", f"no element matches {key}")
        for element in session.elements.values():
            if element.key == key:
                return {ELEMENT_KEY: element.element_id}
        element = MockElement(f"el-{next(self._element_ids)}", self.dom[key], key=key)
        session.elements[element.element_id] = element
        return {ELEMENT_KEY: element.element_id}

    def _element_action(self, session: MockSession, element_id: str, action: str, body: Any) -> Any:
        element = session.elements.get(element_id)
        if element is None:
            raise _W3CError("stale element reference", f"element {element_id} is not attached")
        if action == "click":
            element.clicks += 1
            return None
        if action == "value":
            element.typed.append(body.get("text", "") if isinstance(body, dict) else "")
            return None
        return element.text

    def _execute(self, body: Any) -> Any:
        script = body.get("script", "") if isinstance(body, dict) else ""
        args = body.get("args", []) if isinstance(body, dict) else []
        try:
            if script in self.scripts:
                return self.scripts[script](args)
            return evaluate_literal_script(script, args)
        except ScriptError as exc:
            raise _W3CError("javascript error", str(exc)) from None


class _W3CError(Exception):
    def __init__(self, code: str, message: str) -> None:
        self.code = code
        self.message = message
        super().__init__(f"{code}: {message}")
