"""Exception hierarchy shared by every browserkit module."""

from __future__ import annotations

from typing import Any


class BrowserKitError(Exception):
    pass


# ---------------------------------------------------------------------------
# config-core
# ---------------------------------------------------------------------------


class ConfigError(BrowserKitError):
    pass


class InvalidLabelError(ConfigError):
    pass


class UnknownKeyError(ConfigError):
    pass


class ConfigParseError(ConfigError):
    def __init__(self, label: str, layer: str, raw: Any, reason: str) -> None:
        self.label = label
        self.layer = layer
        self.raw = raw
        super().__init__(f"cannot parse {label} from {layer} layer (raw value {raw!r}): {reason}")


class ConfigFileError(ConfigError):
    def __init__(self, path: Any, reason: Any) -> None:
        self.path = path
        super().__init__(f"cannot read {path}: {reason}")


# ---------------------------------------------------------------------------
# driver-manager
# ---------------------------------------------------------------------------


class DriverError(BrowserKitError):
    pass


class ProbeError(DriverError):
    """The browser binary exists but its version probe failed."""


class UnresolvedDriverError(DriverError):
    pass


class DownloadError(DriverError):
    pass


class ArchiveError(DriverError):
    pass


class ChecksumMismatchError(DriverError):
    pass


class DriverServiceError(DriverError):
    pass


# ---------------------------------------------------------------------------
# wire-client
# ---------------------------------------------------------------------------


class WebDriverError(BrowserKitError):
    error_code = "unknown error"

    def __init__(self, message: str, error: str | None = None, data: Any = None) -> None:
        self.error = error or self.error_code
        self.message = message
        self.data = data
        super().__init__(f"{self.error}: {message}")


class WebDriverConnectionError(WebDriverError):
    error_code = "connection refused"


class SessionNotCreatedError(WebDriverError):
    error_code = "session not created"


class InvalidSessionIdError(WebDriverError):
    error_code = "invalid session id"


class NoSuchElementError(WebDriverError):
    error_code = "no such element"

    def __init__(self, message: str, error: str | None = None, data: Any = None, locator: Any = None) -> None:
        self.locator = locator
        if locator is not None:
            message = f"{message} (locator {locator})"
        super().__init__(message, error, data)


class StaleElementReferenceError(WebDriverError):
    error_code = "stale element reference"


class JavascriptError(WebDriverError):
    error_code = "javascript error"


class InvalidArgumentError(WebDriverError):
    error_code = "invalid argument"


class ScreenshotDecodeError(WebDriverError):
    error_code = "screenshot decode error"


# ---------------------------------------------------------------------------
# docker-farm
# ---------------------------------------------------------------------------


class DockerFarmError(BrowserKitError):
    pass


class ManifestError(ConfigError):
    """A fleet manifest is missing or not one written by ``save_manifest``."""


class EngineUnavailableError(DockerFarmError):
    pass


class TagNotFoundError(DockerFarmError):
    pass


class InsufficientHistoryError(DockerFarmError):
    pass


class ImagePullError(DockerFarmError):
    pass


class ReadinessTimeoutError(DockerFarmError):
    pass


class FleetStartError(DockerFarmError):
    def __init__(self, causes: list[tuple[int, BaseException]]) -> None:
        self.causes = causes
        lines = [f"member {index}: {exc}" for index, exc in causes]
        super().__init__(f"{len(causes)} fleet member(s) failed to start; " + "; ".join(lines))


# ---------------------------------------------------------------------------
# harness / scenario
# ---------------------------------------------------------------------------


class HarnessError(BrowserKitError):
    pass


class FixtureResolutionError(HarnessError):
    def __init__(self, request_description: str, cause: BaseException) -> None:
        self.request_description = request_description
        self.cause = cause
        super().__init__(f"cannot resolve {request_description}: {cause}")


class PlanError(HarnessError):
    pass


class ScenarioError(BrowserKitError):
    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__(f"{path}: {reason}")


# ---------------------------------------------------------------------------
# rtc-metrics
# ---------------------------------------------------------------------------


class MetricsError(BrowserKitError):
    pass


class DataIntegrityError(MetricsError):
    def __init__(self, message: str, index: int | None = None) -> None:
        self.index = index
        if index is not None:
            message = f"sample {index}: {message}"
        super().__init__(message)


class DumpSchemaError(MetricsError):
    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        super().__init__(f"{path}: {reason}")
