"""Driver management: detect the browser, find the compatible driver, download and cache it.

The resolution algorithm has three steps:

1. detect the installed browser version at runtime (platform-specific probe)
2. look up the compatible driver version in the resolution metadata
3. download the driver archive once and keep the binary in a local cache
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import platform as platform_module
import shutil
import socket
import stat
import subprocess
import tarfile
import time
import zipfile
import zlib
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from types import MappingProxyType
from typing import Any, Callable, Mapping, Protocol

import requests
from filelock import FileLock

from browserkit.config import ConfigStore
from browserkit.errors import (
    ArchiveError,
    ChecksumMismatchError,
    DownloadError,
    DriverServiceError,
    ProbeError,
    UnresolvedDriverError,
)
from browserkit.helpers import retry
from browserkit.versions import BrowserKind, VersionString

logger = logging.getLogger(__name__)

METADATA_SCHEMA = 1
BUNDLED_METADATA = "driver_metadata.json"


class Platform(str, Enum):
    LINUX_X64 = "linux-x64"
    MAC_X64 = "mac-x64"
    MAC_ARM64 = "mac-arm64"
    WIN_X64 = "win-x64"
    WIN_X86 = "win-x86"

    @property
    def family(self) -> str:
        return self.value.split("-")[0]

    @property
    def executable_suffix(self) -> str:
        return ".exe" if self.family == "win" else ""


def current_platform() -> Platform:
    system = platform_module.system().lower()
    machine = platform_module.machine().lower()
    if system == "darwin":
        return Platform.MAC_ARM64 if machine in ("arm64", "aarch64") else Platform.MAC_X64
    if system == "windows":
        return Platform.WIN_X64 if machine.endswith("64") else Platform.WIN_X86
    return Platform.LINUX_X64


# ---------------------------------------------------------------------------
# Step 1: browser version detection
# ---------------------------------------------------------------------------


def _win_file_version(path: str) -> tuple[list[str], str]:
    command = f"(Get-Item -Path '{path}').VersionInfo.FileVersion"
    return ["powershell", "-NoProfile", "-Command", command], path


def _mac_bundle(app: str, binary: str) -> tuple[list[str], str]:
    path = f"/Applications/{app}.app/Contents/MacOS/{binary}"
    return [path, "--version"], path


# Each candidate is (argv, path that must exist); an empty path means "look argv[0] up on PATH".
PROBE_COMMANDS: Mapping[str, Mapping[BrowserKind, list[tuple[list[str], str]]]] = {
    "linux": {
        BrowserKind.CHROME: [(["google-chrome", "--version"], ""), (["google-chrome-stable", "--version"], "")],
        BrowserKind.CHROMIUM: [(["chromium", "--version"], ""), (["chromium-browser", "--version"], "")],
        BrowserKind.FIREFOX: [(["firefox", "--version"], "")],
        BrowserKind.EDGE: [(["microsoft-edge", "--version"], ""), (["microsoft-edge-stable", "--version"], "")],
        BrowserKind.OPERA: [(["opera", "--version"], "")],
    },
    "mac": {
        BrowserKind.CHROME: [_mac_bundle("Google Chrome", "Google Chrome")],
        BrowserKind.CHROMIUM: [_mac_bundle("Chromium", "Chromium")],
        BrowserKind.FIREFOX: [_mac_bundle("Firefox", "firefox")],
        BrowserKind.EDGE: [_mac_bundle("Microsoft Edge", "Microsoft Edge")],
        BrowserKind.OPERA: [_mac_bundle("Opera", "Opera")],
        BrowserKind.SAFARI: [
            (
                ["/usr/bin/defaults", "read", "/Applications/Safari.app/Contents/Info", "CFBundleShortVersionString"],
                "/Applications/Safari.app",
            )
        ],
    },
    "win": {
        BrowserKind.CHROME: [
            _win_file_version(r"C:\Program Files\Google\Chrome\Application\chrome.exe"),
            _win_file_version(r"C:\Program Files (x86)\Google\Chrome\Application\chrome.exe"),
        ],
        BrowserKind.FIREFOX: [
            _win_file_version(r"C:\Program Files\Mozilla Firefox\firefox.exe"),
            _win_file_version(r"C:\Program Files (x86)\Mozilla Firefox\firefox.exe"),
        ],
        BrowserKind.EDGE: [_win_file_version(r"C:\Program Files (x86)\Microsoft\Edge\Application\msedge.exe")],
        BrowserKind.IEXPLORER: [_win_file_version(r"C:\Program Files\Internet Explorer\iexplore.exe")],
    },
}


def run_probe_command(argv: list[str]) -> str:
    completed = subprocess.run(argv, capture_output=True, text=True, timeout=15, check=True)
    return completed.stdout


def parse_probe_output(text: str) -> VersionString:
    version = VersionString.find(text)
    if version is None:
        raise ProbeError(f"no version in probe output {text.strip()!r}")
    return version


class BrowserProbe:
    """Runs the platform's probe command table; the runner is injectable for tests."""

    def __init__(
        self,
        runner: Callable[[list[str]], str] | None = None,
        platform: Platform | None = None,
        which: Callable[[str], str | None] = shutil.which,
        exists: Callable[[str], bool] = os.path.exists,
    ) -> None:
        self.runner = runner or run_probe_command
        self.platform = platform or current_platform()
        self.which = which
        self.exists = exists

    def candidates(self, kind: BrowserKind) -> list[list[str]]:
        found = []
        for argv, required_path in PROBE_COMMANDS.get(self.platform.family, {}).get(kind, []):
            if required_path:
                if self.exists(required_path):
                    found.append(argv)
            elif self.which(argv[0]):
                found.append(argv)
        return found

    def detect(self, kind: BrowserKind) -> VersionString | None:
        for argv in self.candidates(kind):
            try:
                output = self.runner(argv)
            except FileNotFoundError:
                continue
            except (subprocess.CalledProcessError, subprocess.TimeoutExpired, OSError) as exc:
                raise ProbeError(f"{kind.value} probe {argv[0]!r} failed: {exc}") from exc
            version = parse_probe_output(output)
            logger.debug(f"Detected {kind.value} {version} via {argv[0]}")
            return version
        return None


def detect_browser_version(kind: BrowserKind, probe: BrowserProbe | None = None) -> VersionString | None:
    """Installed browser version, or None when the browser is not installed."""
    return (probe or BrowserProbe()).detect(kind)


# ---------------------------------------------------------------------------
# Step 2: metadata and driver version resolution
# ---------------------------------------------------------------------------


class HttpTransport(Protocol):
    def get(self, url: str, timeout: float) -> bytes: ...


class RequestsTransport:
    def __init__(self, session: requests.Session | None = None) -> None:
        self.session = session or requests.Session()

    @retry(max_attempts=3, delay=0.5, exceptions=(requests.ConnectionError, requests.Timeout))
    def _fetch(self, url: str, timeout: float) -> bytes:
        response = self.session.get(url, timeout=timeout)
        response.raise_for_status()
        return response.content

    def get(self, url: str, timeout: float = 60.0) -> bytes:
        try:
            return self._fetch(url, timeout)
        except requests.RequestException as exc:
            raise DownloadError(f"GET {url} failed: {exc}") from exc


@dataclass(frozen=True)
class MetadataEntry:
    kind: BrowserKind
    browser_major: int
    driver_version: VersionString
    url: str = ""
    sha256: str = ""


@dataclass(frozen=True)
class ResolutionMetadata:
    source: str
    entries: Mapping[tuple[BrowserKind, int], MetadataEntry]
    download_template: str = ""
    platform_aliases: Mapping[BrowserKind, Mapping[str, str]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def majors(self, kind: BrowserKind) -> list[int]:
        return sorted(major for entry_kind, major in self.entries if entry_kind is kind)

    def download_url(self, entry: MetadataEntry, platform: Platform) -> str:
        template = entry.url or self.download_template
        if not template:
            raise UnresolvedDriverError(f"no download URL for {entry.kind.value} driver {entry.driver_version}")
        alias = self.platform_aliases.get(entry.kind, {}).get(platform.value, platform.value)
        return template.format(
            browser=entry.kind.value,
            driver_name=entry.kind.driver_name,
            driver_version=entry.driver_version,
            platform=alias,
        )


def parse_metadata(document: Mapping[str, Any], source: str) -> ResolutionMetadata:
    if not isinstance(document, Mapping):
        raise UnresolvedDriverError(f"{source}: metadata must be a JSON object")
    if document.get("schema") != METADATA_SCHEMA:
        raise UnresolvedDriverError(f"{source}: unsupported metadata schema {document.get('schema')!r}")
    entries = {}
    for index, raw in enumerate(document.get("entries", [])):
        try:
            kind = BrowserKind.parse(raw["browser"])
            entry = MetadataEntry(
                kind=kind,
                browser_major=int(raw["browser_major"]),
                driver_version=VersionString.parse(raw["driver_version"]),
                url=raw.get("url", ""),
                sha256=raw.get("sha256", "").lower(),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise UnresolvedDriverError(f"{source}: bad entry {index}: {exc}") from exc
        entries[(kind, entry.browser_major)] = entry
    aliases = {
        BrowserKind.parse(name): MappingProxyType(dict(mapping))
        for name, mapping in document.get("platform_aliases", {}).items()
    }
    return ResolutionMetadata(source, entries, document.get("download_template", ""), aliases)


def bundled_metadata() -> ResolutionMetadata:
    text = resources.files("browserkit.data").joinpath(BUNDLED_METADATA).read_text(encoding="utf-8")
    return parse_metadata(json.loads(text), f"bundled:{BUNDLED_METADATA}")


def metadata_cache_name(url: str) -> str:
    digest = hashlib.sha256(url.encode("utf-8")).hexdigest()
    return f"metadata-{digest[:16]}.json"


def load_metadata(
    source: str | Path | None,
    transport: HttpTransport | None = None,
    cache_root: Path | None = None,
    ttl_seconds: int = 86400,
    clock: Callable[[], float] = time.time,
) -> ResolutionMetadata:
    """Load metadata from a local file or an http(s) URL (cached for ``ttl_seconds``)."""
    if not source:
        return bundled_metadata()
    source = str(source)
    if not source.startswith(("http://", "https://")):
        try:
            document = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UnresolvedDriverError(f"cannot read driver metadata {source}: {exc}") from exc
        return parse_metadata(document, source)

    cached = Path(cache_root) / metadata_cache_name(source) if cache_root else None
    if cached is not None and cached.exists() and clock() - cached.stat().st_mtime < ttl_seconds:
        try:
            meta = parse_metadata(json.loads(cached.read_text(encoding="utf-8")), source)
        except (OSError, ValueError, UnresolvedDriverError) as exc:
            logger.warning(f"Discarding unreadable driver metadata cache {cached}: {exc}")
        else:
            logger.debug(f"Using cached driver metadata {cached}")
            return meta

    payload = (transport or RequestsTransport()).get(source, timeout=30)
    try:
        document = json.loads(payload)
    except ValueError as exc:
        raise UnresolvedDriverError(f"driver metadata at {source} is not JSON: {exc}") from exc
    meta = parse_metadata(document, source)
    if cached is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        cached.write_bytes(payload)
    return meta


def _entry_for(kind: BrowserKind, browser_version: VersionString, meta: ResolutionMetadata) -> MetadataEntry:
    major = browser_version.major()
    candidates = [m for m in meta.majors(kind) if m <= major]
    if not candidates:
        raise UnresolvedDriverError(
            f"no {kind.driver_name} known for {kind.value} {browser_version} (metadata {meta.source})"
        )
    chosen = max(candidates)
    if chosen != major:
        logger.warning(f"No {kind.driver_name} entry for {kind.value} {major}; falling back to major {chosen}")
    return meta.entries[(kind, chosen)]


def resolve_driver_version(kind: BrowserKind, browser_version: VersionString, meta: ResolutionMetadata) -> VersionString:
    """Driver version for the browser major, or for the nearest lower major with an entry."""
    return _entry_for(kind, browser_version, meta).driver_version


# ---------------------------------------------------------------------------
# Step 3: download and cache
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriverArtifact:
    kind: BrowserKind
    driver_version: VersionString
    platform: Platform
    cache_path: Path
    executable: bool


def cache_path_for(cache_root: Path, kind: BrowserKind, driver_version: VersionString, platform: Platform) -> Path:
    binary = kind.driver_name + platform.executable_suffix
    return Path(cache_root) / kind.driver_name / platform.value / str(driver_version) / binary


def _is_executable(path: Path) -> bool:
    return path.is_file() and os.access(path, os.X_OK)


def extract_driver(archive: bytes, binary_name: str) -> bytes:
    """Driver binary out of a zip or tar(.gz) archive."""
    buffer = io.BytesIO(archive)
    try:
        if zipfile.is_zipfile(buffer):
            with zipfile.ZipFile(buffer) as bundle:
                for member in bundle.namelist():
                    if Path(member).name == binary_name:
                        return bundle.read(member)
        else:
            buffer.seek(0)
            with tarfile.open(fileobj=buffer, mode="r:*") as bundle:
                for member in bundle.getmembers():
                    if member.isfile() and Path(member.name).name == binary_name:
                        return bundle.extractfile(member).read()
    except (zipfile.BadZipFile, tarfile.TarError, zlib.error, EOFError, OSError) as exc:
        raise ArchiveError(f"corrupt driver archive: {exc}") from exc
    raise ArchiveError(f"{binary_name} not found in driver archive")


def _system_artifact(kind: BrowserKind, browser_version: VersionString | None, platform: Platform) -> DriverArtifact:
    located = shutil.which(kind.driver_name)
    return DriverArtifact(
        kind=kind,
        driver_version=browser_version or VersionString((0,)),
        platform=platform,
        cache_path=Path(located or kind.driver_name),
        executable=False,
    )


def ensure_driver(
    kind: BrowserKind,
    meta: ResolutionMetadata,
    cache_root: Path,
    *,
    browser_version: VersionString | None = None,
    platform: Platform | None = None,
    transport: HttpTransport | None = None,
    probe: BrowserProbe | None = None,
) -> DriverArtifact:
    """Cached driver for ``kind``; downloads it only on a cache miss."""
    platform = platform or current_platform()
    if browser_version is None:
        browser_version = detect_browser_version(kind, probe)
        if browser_version is None and not kind.system_driver:
            raise UnresolvedDriverError(f"{kind.value} is not installed; cannot pick a driver")
    if kind.system_driver:
        return _system_artifact(kind, browser_version, platform)

    entry = _entry_for(kind, browser_version, meta)
    target = cache_path_for(cache_root, kind, entry.driver_version, platform)
    artifact = DriverArtifact(kind, entry.driver_version, platform, target, executable=True)
    if _is_executable(target):
        logger.info(f"Driver cache hit: {target}")
        return artifact

    target.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(target.parent) + ".lock"):
        if _is_executable(target):
            return artifact
        _download_into(target, entry, meta.download_url(entry, platform), transport or RequestsTransport())
    return artifact


def _download_into(target: Path, entry: MetadataEntry, url: str, transport: HttpTransport) -> None:
    logger.info(f"Downloading {entry.kind.driver_name} {entry.driver_version} from {url}")
    partial = target.with_name(target.name + ".part")
    try:
        archive = transport.get(url, timeout=120)
        if entry.sha256:
            digest = hashlib.sha256(archive).hexdigest()
            if digest != entry.sha256:
                raise ChecksumMismatchError(f"sha256 mismatch for {url}: expected {entry.sha256}, got {digest}")
        partial.write_bytes(extract_driver(archive, target.name))
        partial.chmod(partial.stat().st_mode | stat.S_IXUSR | stat.S_IXGRP | stat.S_IXOTH)
        os.replace(partial, target)
    except BaseException:
        partial.unlink(missing_ok=True)
        if target.parent.exists() and not any(target.parent.iterdir()):
            target.parent.rmdir()
        raise
    logger.info(f"Driver stored at {target}")


# ---------------------------------------------------------------------------
# Diagnosis of driver/browser mismatch
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnosis:
    ok: bool
    message: str


def mismatch_diagnosis(browser_major: int, driver_supported_major: int, kind: BrowserKind = BrowserKind.CHROME) -> Diagnosis:
    if browser_major < 0 or driver_supported_major < 0:
        raise ValueError("majors must be >= 0")
    if browser_major == driver_supported_major:
        return Diagnosis(True, f"compatibility-ok: {kind.driver_name} supports {kind.value} {browser_major}")
    relation = "older" if driver_supported_major < browser_major else "newer"
    return Diagnosis(
        False,
        f"this version of {kind.driver_name} only supports {kind.value} version {driver_supported_major}; "
        f"detected {kind.value} {browser_major} (driver is {relation} than the browser). "
        f"Re-run driver resolution to fetch a compatible driver.",
    )


# ---------------------------------------------------------------------------
# Local driver process
# ---------------------------------------------------------------------------


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def driver_command(artifact: DriverArtifact, port: int) -> list[str]:
    path = str(artifact.cache_path)
    if artifact.kind is BrowserKind.IEXPLORER:
        return [path, f"/port={port}"]
    if artifact.kind in (BrowserKind.FIREFOX, BrowserKind.SAFARI):
        return [path, "--port", str(port)]
    return [path, f"--port={port}"]


def http_status_ok(url: str) -> bool:
    try:
        return requests.get(url, timeout=1).ok
    except requests.RequestException:
        return False


class DriverService:
    """A driver binary running on a local port."""

    def __init__(
        self,
        artifact: DriverArtifact,
        *,
        port: int | None = None,
        popen: Callable[..., Any] = subprocess.Popen,
        status_check: Callable[[str], bool] = http_status_ok,
        timeout: float = 20.0,
        poll_interval: float = 0.2,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.artifact = artifact
        self.port = port or free_port()
        self.popen = popen
        self.status_check = status_check
        self.timeout = timeout
        self.poll_interval = poll_interval
        self.sleep = sleep
        self.clock = clock
        self.process = None

    @property
    def url(self) -> str:
        return f"http://127.0.0.1:{self.port}"

    def start(self) -> "DriverService":
        argv = driver_command(self.artifact, self.port)
        logger.info(f"Starting {' '.join(argv)}")
        try:
            self.process = self.popen(argv, stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL)
        except OSError as exc:
            raise DriverServiceError(f"cannot launch {argv[0]}: {exc}") from exc

        deadline = self.clock() + self.timeout
        while self.clock() < deadline:
            code = self.process.poll()
            if code is not None:
                self.stop()
                raise DriverServiceError(f"{argv[0]} exited with code {code}")
            if self.status_check(f"{self.url}/status"):
                return self
            self.sleep(self.poll_interval)
        self.stop()
        raise DriverServiceError(f"{argv[0]} not ready on port {self.port} after {self.timeout}s")

    def stop(self) -> None:
        process, self.process = self.process, None
        if process is None:
            return
        process.terminate()
        try:
            process.wait(timeout=5)
        except subprocess.TimeoutExpired:
            process.kill()
            process.wait(timeout=5)
        logger.info(f"Stopped {self.artifact.kind.driver_name} on port {self.port}")


class DriverManager:
    """detect -> resolve -> ensure, bound to one configuration."""

    def __init__(
        self,
        config: ConfigStore,
        *,
        metadata: ResolutionMetadata | None = None,
        transport: HttpTransport | None = None,
        probe: BrowserProbe | None = None,
        platform: Platform | None = None,
        service_factory: Callable[[DriverArtifact], DriverService] = DriverService,
    ) -> None:
        self.config = config
        self.transport = transport or RequestsTransport()
        self.probe = probe or BrowserProbe(platform=platform)
        self.platform = platform or self.probe.platform
        self.service_factory = service_factory
        self._metadata = metadata

    @property
    def cache_root(self) -> Path:
        return self.config.get("sel.jup.driver.cache.path")

    @property
    def metadata(self) -> ResolutionMetadata:
        if self._metadata is None:
            self._metadata = load_metadata(
                self.config.get("sel.jup.driver.metadata.url"),
                transport=self.transport,
                cache_root=self.cache_root,
                ttl_seconds=self.config.get("sel.jup.driver.metadata.ttl.sec"),
            )
        return self._metadata

    def detect_browser_version(self, kind: BrowserKind) -> VersionString | None:
        return detect_browser_version(kind, self.probe)

    def resolve(self, kind: BrowserKind, browser_version: VersionString | None = None) -> VersionString:
        browser_version = browser_version or self.detect_browser_version(kind)
        if browser_version is None:
            raise UnresolvedDriverError(f"{kind.value} is not installed; cannot pick a driver")
        return resolve_driver_version(kind, browser_version, self.metadata)

    def ensure(self, kind: BrowserKind, browser_version: VersionString | None = None) -> DriverArtifact:
        return ensure_driver(
            kind,
            self.metadata,
            self.cache_root,
            browser_version=browser_version,
            platform=self.platform,
            transport=self.transport,
            probe=self.probe,
        )

    def start_service(self, artifact: DriverArtifact) -> DriverService:
        return self.service_factory(artifact).start()
