"""Minimal W3C WebDriver client: sessions, navigation, elements, scripts and screenshots.

Only the W3C dialect is spoken. To add a command, write a method that calls
``WebDriverClient._command`` with the endpoint path relative to the session.
"""

from __future__ import annotations

import base64
import binascii
import json
import logging
import threading
from dataclasses import dataclass, field
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Callable
from urllib.parse import urlparse

import requests

from browserkit.errors import (
    InvalidArgumentError,
    InvalidSessionIdError,
    JavascriptError,
    NoSuchElementError,
    ScreenshotDecodeError,
    SessionNotCreatedError,
    StaleElementReferenceError,
    WebDriverConnectionError,
    WebDriverError,
)
from browserkit.helpers import sanitize_filename, utc_timestamp
from browserkit.versions import BrowserKind

logger = logging.getLogger(__name__)

ELEMENT_KEY = "element-6066-11e4-a52e-4f735466cecf"
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"

VENDOR_OPTIONS_KEYS = {
    BrowserKind.CHROME: "goog:chromeOptions",
    BrowserKind.CHROMIUM: "goog:chromeOptions",
    BrowserKind.OPERA: "goog:chromeOptions",
    BrowserKind.EDGE: "ms:edgeOptions",
    BrowserKind.FIREFOX: "moz:firefoxOptions",
    BrowserKind.SAFARI: "safari:options",
    BrowserKind.IEXPLORER: "se:ieOptions",
}

W3C_BROWSER_NAMES = {
    BrowserKind.CHROME: "chrome",
    BrowserKind.CHROMIUM: "chrome",
    BrowserKind.OPERA: "opera",
    BrowserKind.EDGE: "MicrosoftEdge",
    BrowserKind.FIREFOX: "firefox",
    BrowserKind.SAFARI: "safari",
    BrowserKind.IEXPLORER: "internet explorer",
}

_ERRORS_BY_CODE: dict[str, type[WebDriverError]] = {
    "session not created": SessionNotCreatedError,
    "invalid session id": InvalidSessionIdError,
    "no such element": NoSuchElementError,
    "stale element reference": StaleElementReferenceError,
    "javascript error": JavascriptError,
    "invalid argument": InvalidArgumentError,
}


class Provenance(str, Enum):
    LOCAL = "local"
    REMOTE = "remote"
    DOCKER = "docker"


class LocatorStrategy(str, Enum):
    CSS = "css"
    XPATH = "xpath"
    LINK_TEXT = "link-text"
    TAG_NAME = "tag-name"

    @property
    def w3c(self) -> str:
        return {"css": "css selector", "xpath": "xpath", "link-text": "link text", "tag-name": "tag name"}[self.value]


@dataclass(frozen=True)
class Locator:
    strategy: LocatorStrategy
    expression: str

    def __post_init__(self) -> None:
        if not self.expression:
            raise ValueError("locator expression cannot be empty")

    @classmethod
    def css(cls, expression: str) -> "Locator":
        return cls(LocatorStrategy.CSS, expression)

    @classmethod
    def xpath(cls, expression: str) -> "Locator":
        return cls(LocatorStrategy.XPATH, expression)

    def __str__(self) -> str:
        return f"{self.strategy.value}={self.expression}"


@dataclass(frozen=True)
class Capabilities:
    browser_name: str
    browser_version: str | None = None
    platform_name: str | None = None
    vendor_options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for key in self.vendor_options:
            if ":" not in key:
                raise ValueError(f"vendor option key {key!r} must be namespaced (vendor:name)")

    @classmethod
    def for_kind(cls, kind: BrowserKind, browser_version: str | None = None) -> "Capabilities":
        return cls(W3C_BROWSER_NAMES[kind], browser_version)

    @classmethod
    def from_w3c(cls, always_match: dict[str, Any]) -> "Capabilities":
        vendor = {k: v for k, v in always_match.items() if ":" in k}
        return cls(
            browser_name=always_match.get("browserName", ""),
            browser_version=always_match.get("browserVersion"),
            platform_name=always_match.get("platformName"),
            vendor_options=vendor,
        )

    def always_match(self) -> dict[str, Any]:
        body: dict[str, Any] = {"browserName": self.browser_name}
        if self.browser_version:
            body["browserVersion"] = self.browser_version
        if self.platform_name:
            body["platformName"] = self.platform_name
        body.update(self.vendor_options)
        return body

    def to_w3c(self) -> dict[str, Any]:
        return {"capabilities": {"alwaysMatch": self.always_match()}}

    def to_json(self) -> str:
        """Canonical (key-sorted) JSON; identical capabilities give identical bytes."""
        return json.dumps(self.to_w3c(), sort_keys=True, separators=(",", ":"))


@dataclass
class SessionHandle:
    endpoint: str
    session_id: str
    capabilities_echo: dict[str, Any]
    provenance: Provenance
    live: bool = True
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    @property
    def url(self) -> str:
        return f"{self.endpoint.rstrip('/')}/session/{self.session_id}"

    def mark_dead(self) -> bool:
        """Transition live -> dead; returns False if it was already dead."""
        with self._lock:
            was_live, self.live = self.live, False
            return was_live


@dataclass(frozen=True)
class ElementRef:
    session: SessionHandle
    element_id: str
    locator: Locator | None = None


class ScreenshotEncoding(str, Enum):
    BASE64 = "base64"
    PNG_FILE = "png-file"


@dataclass(frozen=True)
class ScreenshotData:
    encoding: ScreenshotEncoding
    payload: str


def validate_url(url: str) -> str:
    parsed = urlparse(url)
    if parsed.scheme in ("http", "https") and parsed.netloc:
        return url
    if parsed.scheme in ("about", "data", "file", "chrome") and (parsed.path or parsed.netloc):
        return url
    raise InvalidArgumentError(f"malformed URL {url!r}")


class WebDriverClient:
    """Thread-safe client; each SessionHandle should be driven by one task at a time."""

    def __init__(
        self,
        connect_timeout: float = 10.0,
        command_timeout: float = 60.0,
        session: requests.Session | None = None,
        clock: Callable[[], datetime] | None = None,
    ) -> None:
        self.timeout = (connect_timeout, command_timeout)
        self.http = session or requests.Session()
        self.clock = clock

    @classmethod
    def from_config(cls, config) -> "WebDriverClient":
        return cls(config.get("sel.jup.connect.timeout.sec"), config.get("sel.jup.session.timeout.sec"))

    # -- transport ---------------------------------------------------------

    def _request(self, method: str, url: str, body: Any = None) -> Any:
        try:
            response = self.http.request(method, url, json=body, timeout=self.timeout)
        except requests.ConnectionError as exc:
            raise WebDriverConnectionError(f"{method} {url}: {exc}") from exc
        except requests.RequestException as exc:
            raise WebDriverError(f"{method} {url}: {exc}") from exc

        try:
            payload = response.json()
        except ValueError:
            payload = None
        value = payload.get("value") if isinstance(payload, dict) else None
        if response.status_code >= 400:
            if isinstance(value, dict) and "error" in value:
                error_class = _ERRORS_BY_CODE.get(value["error"], WebDriverError)
                raise error_class(value.get("message", ""), value["error"], value.get("data"))
            raise WebDriverError(f"HTTP {response.status_code} from {method} {url}")
        if not isinstance(payload, dict) or "value" not in payload:
            raise WebDriverError(f"malformed response from {method} {url}: {response.text[:200]!r}")
        return value

    def _command(self, handle: SessionHandle, method: str, path: str, body: Any = None) -> Any:
        if not handle.live:
            raise InvalidSessionIdError(f"session {handle.session_id} has been deleted")
        try:
            return self._request(method, f"{handle.url}{path}", body)
        except InvalidSessionIdError:
            handle.mark_dead()
            raise

    # -- sessions ----------------------------------------------------------

    def status(self, endpoint: str) -> Any:
        return self._request("GET", f"{endpoint.rstrip('/')}/status")

    def is_online(self, endpoint: str) -> bool:
        try:
            response = self.http.get(f"{endpoint.rstrip('/')}/status", timeout=self.timeout)
        except requests.RequestException:
            return False
        return response.status_code < 500

    def new_session(self, endpoint: str, caps: Capabilities, provenance: Provenance = Provenance.REMOTE) -> SessionHandle:
        value = self._request("POST", f"{endpoint.rstrip('/')}/session", caps.to_w3c())
        if not isinstance(value, dict) or not value.get("sessionId"):
            raise SessionNotCreatedError(f"no sessionId in new-session response: {value!r}")
        handle = SessionHandle(endpoint.rstrip("/"), value["sessionId"], value.get("capabilities", {}), provenance)
        logger.info(f"Created {provenance.value} session {handle.session_id} at {handle.endpoint}")
        return handle

    def delete_session(self, handle: SessionHandle) -> bool:
        """End the session; True when the server acknowledged it. Repeat calls are no-ops."""
        if not handle.mark_dead():
            return True
        try:
            self._request("DELETE", handle.url)
        except WebDriverError as exc:
            logger.warning(f"Deleting session {handle.session_id} failed: {exc}")
            return False
        logger.info(f"Deleted session {handle.session_id}")
        return True

    # -- navigation --------------------------------------------------------

    def navigate(self, handle: SessionHandle, url: str) -> None:
        validate_url(url)
        self._command(handle, "POST", "/url", {"url": url})

    def current_url(self, handle: SessionHandle) -> str:
        return self._command(handle, "GET", "/url")

    def title(self, handle: SessionHandle) -> str:
        return self._command(handle, "GET", "/title")

    # -- elements ----------------------------------------------------------

    def find_element(self, handle: SessionHandle, locator: Locator) -> ElementRef:
        try:
            value = self._command(
                handle, "POST", "/element", {"using": locator.strategy.w3c, "value": locator.expression}
            )
        except NoSuchElementError as exc:
            raise NoSuchElementError(exc.message, exc.error, exc.data, locator=locator) from None
        return ElementRef(handle, value[ELEMENT_KEY], locator)

    def click(self, element: ElementRef) -> None:
        self._command(element.session, "POST", f"/element/{element.element_id}/click", {})

    def send_keys(self, element: ElementRef, text: str) -> None:
        self._command(element.session, "POST", f"/element/{element.element_id}/value", {"text": text})

    def text(self, element: ElementRef) -> str:
        return self._command(element.session, "GET", f"/element/{element.element_id}/text")

    # -- scripts and screenshots -------------------------------------------

    def execute_script(self, handle: SessionHandle, script: str, args: list[Any] | None = None) -> Any:
        return self._command(handle, "POST", "/execute/sync", {"script": script, "args": list(args or [])})

    def screenshot(
        self,
        handle: SessionHandle,
        mode: ScreenshotEncoding = ScreenshotEncoding.BASE64,
        out_dir: Path | None = None,
        name: str | None = None,
    ) -> ScreenshotData:
        encoded = self._command(handle, "GET", "/screenshot")
        if mode is ScreenshotEncoding.BASE64:
            return ScreenshotData(ScreenshotEncoding.BASE64, encoded)

        try:
            image = base64.b64decode(encoded, validate=True)
        except (binascii.Error, TypeError, ValueError) as exc:
            raise ScreenshotDecodeError(f"screenshot is not valid Base64: {exc}") from None
        if not image.startswith(PNG_SIGNATURE):
            raise ScreenshotDecodeError("screenshot payload is not a PNG image")

        out_dir = Path(out_dir or ".")
        out_dir.mkdir(parents=True, exist_ok=True)
        filename = sanitize_filename(name or f"{handle.session_id}-{utc_timestamp(self.clock)}") + ".png"
        target = out_dir / filename
        target.write_bytes(image)
        logger.info(f"Screenshot of session {handle.session_id} stored at {target}")
        return ScreenshotData(ScreenshotEncoding.PNG_FILE, str(target))
