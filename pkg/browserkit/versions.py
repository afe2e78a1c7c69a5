"""Browser identity and dotted version ordering, the pivot of all resolution logic."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum

_VERSION_TOKEN = re.compile(r"\d+(?:\.\d+)+|\d+")
_STRICT_VERSION = re.compile(r"^\d+(?:\.\d+)*$")


class BrowserKind(str, Enum):
    CHROME = "chrome"
    FIREFOX = "firefox"
    EDGE = "edge"
    OPERA = "opera"
    SAFARI = "safari"
    CHROMIUM = "chromium"
    IEXPLORER = "iexplorer"

    @property
    def driver_name(self) -> str:
        return _DRIVER_NAMES[self]

    @property
    def system_driver(self) -> bool:
        """True when the driver ships with the operating system (nothing to download)."""
        return self in (BrowserKind.SAFARI, BrowserKind.IEXPLORER)

    @classmethod
    def parse(cls, text: str) -> "BrowserKind":
        try:
            return cls(text.strip().lower())
        except ValueError:
            known = ", ".join(kind.value for kind in cls)
            raise ValueError(f"unknown browser kind {text!r} (known: {known})") from None


_DRIVER_NAMES = {
    BrowserKind.CHROME: "chromedriver",
    BrowserKind.CHROMIUM: "chromedriver",
    BrowserKind.FIREFOX: "geckodriver",
    BrowserKind.EDGE: "msedgedriver",
    BrowserKind.OPERA: "operadriver",
    BrowserKind.SAFARI: "safaridriver",
    BrowserKind.IEXPLORER: "IEDriverServer",
}


@dataclass(frozen=True, order=True)
class VersionString:
    segments: tuple[int, ...]
    raw: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError("version needs at least one segment")
        if any(segment < 0 for segment in self.segments):
            raise ValueError("version segments must be non-negative")
        if not self.raw:
            object.__setattr__(self, "raw", ".".join(str(s) for s in self.segments))

    @classmethod
    def parse(cls, text: str) -> "VersionString":
        stripped = text.strip()
        if not _STRICT_VERSION.match(stripped):
            raise ValueError(f"not a dotted version: {text!r}")
        return cls(tuple(int(part) for part in stripped.split(".")), stripped)

    @classmethod
    def find(cls, text: str) -> "VersionString | None":
        """First version-looking token in free text, e.g. probe output."""
        match = _VERSION_TOKEN.search(text)
        if match is None:
            return None
        return cls.parse(match.group(0))

    def major(self) -> int:
        return self.segments[0]

    def __str__(self) -> str:
        return ".".join(str(s) for s in self.segments)
