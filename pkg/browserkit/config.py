"""Layered configuration: environment, properties, API values and defaults.

Every parameter has a single dotted label such as ``sel.jup.recording``. The
effective value is taken from the first layer that holds it, in this order:

1. environment variables (label uppercased, dots replaced by underscores)
2. properties (``--set key=value`` flags and an optional properties file)
3. values set programmatically (the API layer)
4. registered defaults
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Mapping

from browserkit.errors import ConfigFileError, ConfigParseError, InvalidLabelError, UnknownKeyError

LABEL_PATTERN = re.compile(r"^[a-z][a-z0-9]*(\.[a-z0-9]+)+$")

LAYER_ORDER = ("env", "property", "api", "default")


class ValueType(str, Enum):
    BOOL = "bool"
    INTEGER = "integer"
    DURATION = "duration-seconds"
    STRING = "string"
    PATH = "path"
    ENUM = "enum"


def env_name(label: str) -> str:
    """``sel.jup.recording`` -> ``SEL_JUP_RECORDING``."""
    if not isinstance(label, str) or not LABEL_PATTERN.match(label):
        raise InvalidLabelError(f"invalid configuration label: {label!r}")
    return label.upper().replace(".", "_")


@dataclass(frozen=True)
class ConfigKey:
    label: str
    value_type: ValueType
    default: Any
    doc: str = ""
    choices: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not LABEL_PATTERN.match(self.label):
            raise InvalidLabelError(f"invalid configuration label: {self.label!r}")
        if self.value_type is ValueType.ENUM and not self.choices:
            raise ValueError(f"enum key {self.label} needs choices")

    @property
    def env_name(self) -> str:
        return env_name(self.label)

    def parse(self, raw: Any, layer: str) -> Any:
        """Convert a layer value into this key's type; strings are parsed strictly."""
        try:
            return _PARSERS[self.value_type](self, raw)
        except (TypeError, ValueError) as exc:
            raise ConfigParseError(self.label, layer, raw, str(exc)) from None


def _parse_bool(key: ConfigKey, raw: Any) -> bool:
    if isinstance(raw, bool):
        return raw
    if isinstance(raw, str) and raw.strip().lower() in ("true", "false"):
        return raw.strip().lower() == "true"
    raise ValueError("expected true or false")


def _parse_integer(key: ConfigKey, raw: Any) -> int:
    if isinstance(raw, bool):
        raise ValueError("expected an integer")
    if isinstance(raw, int):
        return raw
    if isinstance(raw, str) and re.fullmatch(r"[+-]?\d+", raw.strip()):
        return int(raw.strip())
    raise ValueError("expected an integer")


def _parse_duration(key: ConfigKey, raw: Any) -> int:
    seconds = _parse_integer(key, raw)
    if seconds < 0:
        raise ValueError("durations are non-negative seconds")
    return seconds


def _parse_string(key: ConfigKey, raw: Any) -> str:
    if not isinstance(raw, str):
        raise ValueError("expected a string")
    return raw


def _parse_path(key: ConfigKey, raw: Any) -> Path:
    if isinstance(raw, Path):
        return raw.expanduser()
    if isinstance(raw, str) and raw.strip():
        return Path(raw.strip()).expanduser()
    raise ValueError("expected a non-empty path")


def _parse_enum(key: ConfigKey, raw: Any) -> str:
    value = str(raw).strip().lower() if isinstance(raw, str) else raw
    if value not in key.choices:
        raise ValueError(f"expected one of {', '.join(key.choices)}")
    return value


_PARSERS = {
    ValueType.BOOL: _parse_bool,
    ValueType.INTEGER: _parse_integer,
    ValueType.DURATION: _parse_duration,
    ValueType.STRING: _parse_string,
    ValueType.PATH: _parse_path,
    ValueType.ENUM: _parse_enum,
}


def _key(label, value_type, default, doc, choices=()):
    return ConfigKey(label, value_type, default, doc, tuple(choices))


_REGISTRY_ITEMS = (
    _key("sel.jup.recording", ValueType.BOOL, False, "Record dockerized browser sessions"),
    _key("sel.jup.recording.when.failure", ValueType.BOOL, False, "Keep recordings only for failed tests"),
    _key("sel.jup.recording.path", ValueType.STRING, "/home/selenium/video/session.mp4",
         "Recording file location inside the browser container"),
    _key("sel.jup.screenshot", ValueType.BOOL, False, "Capture a screenshot when a test fails"),
    _key("sel.jup.screenshot.always", ValueType.BOOL, False, "Capture screenshots for passed tests too"),
    _key("sel.jup.screenshot.format", ValueType.ENUM, "png", "Screenshot format", ("base64", "png")),
    _key("sel.jup.output.folder", ValueType.PATH, ".", "Directory for reports, screenshots and recordings"),
    _key("sel.jup.vnc", ValueType.BOOL, False, "Expose a VNC server for dockerized browsers"),
    _key("sel.jup.docker.host", ValueType.STRING, "unix:///var/run/docker.sock", "Container engine endpoint"),
    _key("sel.jup.docker.timeout.sec", ValueType.DURATION, 30, "Container readiness timeout"),
    _key("sel.jup.docker.ready.poll.ms", ValueType.INTEGER, 500, "Readiness polling interval"),
    _key("sel.jup.docker.parallelism", ValueType.INTEGER, 4, "Concurrent container startups in a fleet"),
    _key("sel.jup.docker.registry.url", ValueType.STRING, "https://hub.docker.com/v2", "Registry tag-list API"),
    _key("sel.jup.docker.image.stable", ValueType.STRING, "selenoid/{kind}", "Stable browser image repository"),
    _key("sel.jup.docker.image.vnc", ValueType.STRING, "selenoid/vnc_{kind}",
         "Stable browser image repository with VNC and recorder"),
    _key("sel.jup.docker.image.beta", ValueType.STRING, "twilio/selenoid", "Beta and dev browser image repository"),
    _key("sel.jup.docker.screen", ValueType.STRING, "1920x1080x24", "Container screen geometry"),
    _key("sel.jup.connect.timeout.sec", ValueType.DURATION, 10, "WebDriver connect timeout"),
    _key("sel.jup.session.timeout.sec", ValueType.DURATION, 60, "WebDriver command timeout"),
    _key("sel.jup.driver.cache.path", ValueType.PATH, "~/.cache/browserkit/drivers", "Driver cache root"),
    _key("sel.jup.driver.metadata.url", ValueType.STRING, "",
         "Driver metadata document (path or URL); empty uses the bundled file"),
    _key("sel.jup.driver.metadata.ttl.sec", ValueType.DURATION, 86400, "Cached metadata time-to-live"),
    _key("sel.jup.default.browser", ValueType.STRING, "chrome-in-docker", "Browser type of the generic driver"),
    _key("sel.jup.default.version", ValueType.STRING, "latest", "Browser version of the generic driver"),
    _key("sel.jup.freeze.threshold.ms", ValueType.INTEGER, 500, "Inter-frame gap counted as a freeze"),
    _key("sel.jup.jitter.threshold.ms", ValueType.INTEGER, 75, "Jitter delay above which QoE is flagged"),
    _key("sel.jup.load.participants", ValueType.INTEGER, 9, "Dockerized participants in a WebRTC load test"),
    _key("sel.jup.load.rate.sec", ValueType.DURATION, 5, "Delay between participants joining"),
    _key("sel.jup.load.session.sec", ValueType.DURATION, 60, "Session time once every participant joined"),
    _key("sel.jup.load.sampling.sec", ValueType.DURATION, 1, "Stats sampling period"),
)

REGISTRY: Mapping[str, ConfigKey] = MappingProxyType({key.label: key for key in _REGISTRY_ITEMS})


def registered_keys() -> list[tuple[ConfigKey, Any, str]]:
    """(key, default, documentation line) for every key, sorted by label."""
    return [(key, key.default, key.doc) for key in sorted(REGISTRY.values(), key=lambda k: k.label)]


def lookup_key(label: str) -> ConfigKey | None:
    return REGISTRY.get(label)


def _require_key(label: str) -> ConfigKey:
    env_name(label)
    key = REGISTRY.get(label)
    if key is None:
        raise UnknownKeyError(f"unregistered configuration key: {label}")
    return key


def read_properties_file(path: Path) -> dict[str, str]:
    """Read ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigFileError(path, exc.strerror if isinstance(exc, OSError) else exc) from exc

    values: dict[str, str] = {}
    for raw_line in text.splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#") or "=" not in line:
            continue

        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip().strip('"').strip("'")

        if key:
            values[key] = value
    return values


def parse_assignment(text: str) -> tuple[str, str]:
    """Split a ``key=value`` command-line assignment."""
    if "=" not in text:
        raise UnknownKeyError(f"expected key=value, got {text!r}")
    key, value = text.split("=", 1)
    return key.strip(), value.strip()


@dataclass(frozen=True)
class ConfigStore:
    """Immutable snapshot of the four layers; safe to share across threads."""

    env_layer: Mapping[str, Any] = field(default_factory=dict)
    property_layer: Mapping[str, Any] = field(default_factory=dict)
    api_layer: Mapping[str, Any] = field(default_factory=dict)
    defaults: Mapping[str, Any] = field(default_factory=lambda: {k.label: k.default for k in REGISTRY.values()})

    def __post_init__(self) -> None:
        for name in ("env_layer", "property_layer", "api_layer", "defaults"):
            object.__setattr__(self, name, MappingProxyType(dict(getattr(self, name))))

    def layer(self, name: str) -> Mapping[str, Any]:
        return {
            "env": self.env_layer,
            "property": self.property_layer,
            "api": self.api_layer,
            "default": self.defaults,
        }[name]

    def source_of(self, label: str) -> str:
        _require_key(label)
        for name in LAYER_ORDER:
            if label in self.layer(name):
                return name
        raise UnknownKeyError(f"no value or default for {label}")

    def get(self, label: str) -> Any:
        return resolve(_require_key(label), self)

    def with_api(self, values: Mapping[str, Any]) -> "ConfigStore":
        """Copy of this store with extra API-layer values."""
        for label in values:
            _require_key(label)
        api = {**self.api_layer, **values}
        return ConfigStore(self.env_layer, self.property_layer, api, self.defaults)


def resolve(key: ConfigKey, store: ConfigStore) -> Any:
    """Highest-priority layer's value for ``key``, parsed into its value type."""
    for name in LAYER_ORDER:
        layer = store.layer(name)
        if key.label in layer:
            return key.parse(layer[key.label], name)
    raise UnknownKeyError(f"no value or default for {key.label}")


class ConfigBuilder:
    """Collects layers before freezing them into a ConfigStore; single-threaded."""

    def __init__(self) -> None:
        self._properties: dict[str, str] = {}
        self._api: dict[str, Any] = {}

    def set(self, label: str, value: Any) -> "ConfigBuilder":
        _require_key(label)
        self._api[label] = value
        return self

    def set_property(self, label: str, raw: str) -> "ConfigBuilder":
        _require_key(label)
        self._properties[label] = raw
        return self

    def load_properties_file(self, path: Path) -> "ConfigBuilder":
        for label, raw in read_properties_file(path).items():
            self.set_property(label, raw)
        return self

    def build(self, environ: Mapping[str, str] | None = None) -> ConfigStore:
        environ = os.environ if environ is None else environ
        env_layer = {key.label: environ[key.env_name] for key in REGISTRY.values() if key.env_name in environ}
        return ConfigStore(env_layer=env_layer, property_layer=self._properties, api_layer=self._api)


def default_store() -> ConfigStore:
    """Store with defaults only (no environment capture); handy for tests and library use."""
    return ConfigStore()
