"""Browsers in containers: image tag resolution, container lifecycle, VNC and recordings.

Stable browsers come from the Aerokube-style repositories (one image per
browser version, optionally with a VNC server and recorder); beta and dev
channels come from a separate repository whose tags look like
``chrome_beta`` or ``firefox_dev_95.0``. The driver already lives inside the
container, so no driver resolution is needed here.
"""

from __future__ import annotations

import io
import json
import logging
import re
import tarfile
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol
from urllib.parse import urlparse

import docker
import requests
from docker.errors import DockerException, ImageNotFound

from browserkit.config import ConfigStore
from browserkit.errors import (
    DockerFarmError,
    EngineUnavailableError,
    FleetStartError,
    ImagePullError,
    InsufficientHistoryError,
    ManifestError,
    ReadinessTimeoutError,
    TagNotFoundError,
)
from browserkit.helpers import retry, sanitize_filename
from browserkit.versions import BrowserKind, VersionString

logger = logging.getLogger(__name__)

DOCKER_KINDS = (BrowserKind.CHROME, BrowserKind.FIREFOX, BrowserKind.EDGE, BrowserKind.OPERA)
DRIVER_PORT = 4444
VNC_PORT = 5900
MANAGED_LABEL = "io.browserkit.managed"
DRIVER_PATHS = {BrowserKind.FIREFOX: "/wd/hub"}

_LATEST_MINUS = re.compile(r"^latest-(\d+)$")
_FIXED = re.compile(r"^\d+(?:\.\d+)*$")


# ---------------------------------------------------------------------------
# Version selectors and image references
# ---------------------------------------------------------------------------


class SelectorKind(str, Enum):
    LATEST = "latest"
    LATEST_MINUS = "latest_minus"
    BETA = "beta"
    DEV = "dev"
    FIXED = "fixed"


@dataclass(frozen=True)
class VersionSelector:
    kind: SelectorKind
    k: int = 0
    version: VersionString | None = None

    def __post_init__(self) -> None:
        if self.kind is SelectorKind.LATEST_MINUS and self.k < 1:
            raise ValueError("latest-k requires k >= 1")
        if self.kind is SelectorKind.FIXED and self.version is None:
            raise ValueError("fixed selector needs a version")

    @classmethod
    def latest(cls) -> "VersionSelector":
        return cls(SelectorKind.LATEST)

    @classmethod
    def latest_minus(cls, k: int) -> "VersionSelector":
        return cls(SelectorKind.LATEST_MINUS, k=k)

    @classmethod
    def fixed(cls, version: str | VersionString) -> "VersionSelector":
        if isinstance(version, str):
            version = VersionString.parse(version)
        return cls(SelectorKind.FIXED, version=version)

    @property
    def family(self) -> "ImageFamily":
        return ImageFamily.BETA_DEV if self.kind in (SelectorKind.BETA, SelectorKind.DEV) else ImageFamily.STABLE

    def __str__(self) -> str:
        if self.kind is SelectorKind.LATEST_MINUS:
            return f"latest-{self.k}"
        if self.kind is SelectorKind.FIXED:
            return self.version.raw
        return self.kind.value


def parse_selector(text: str) -> VersionSelector:
    """``latest``, ``latest-<k>``, ``beta``, ``dev`` or a dotted version."""
    value = text.strip().lower()
    if value == "latest":
        return VersionSelector.latest()
    if value in ("beta", "dev"):
        return VersionSelector(SelectorKind(value))
    match = _LATEST_MINUS.match(value)
    if match:
        return VersionSelector.latest_minus(int(match.group(1)))
    if _FIXED.match(value):
        return VersionSelector.fixed(value)
    raise ValueError(f"unknown version selector {text!r}")


class ImageFamily(str, Enum):
    STABLE = "stable"
    BETA_DEV = "beta-dev"


@dataclass(frozen=True)
class ImageRef:
    repository: str
    tag: str
    family: ImageFamily

    @property
    def name(self) -> str:
        return f"{self.repository}:{self.tag}"


@dataclass(frozen=True)
class ScreenGeometry:
    width: int = 1920
    height: int = 1080
    depth: int = 24

    @classmethod
    def parse(cls, text: str) -> "ScreenGeometry":
        try:
            width, height, depth = (int(part) for part in text.lower().split("x"))
        except ValueError:
            raise ValueError(f"screen geometry must look like 1920x1080x24, got {text!r}") from None
        return cls(width, height, depth)

    def __str__(self) -> str:
        return f"{self.width}x{self.height}x{self.depth}"


@dataclass(frozen=True)
class DockerBrowserSpec:
    kind: BrowserKind
    selector: VersionSelector = field(default_factory=VersionSelector.latest)
    vnc: bool = False
    recording: bool = False
    screen: ScreenGeometry = field(default_factory=ScreenGeometry)
    repository: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in DOCKER_KINDS and self.repository is None:
            raise ValueError(f"{self.kind.value} is not available as a container image")
        if self.repository is not None and self.selector.kind is not SelectorKind.FIXED:
            raise ValueError("a custom repository needs a fixed version tag")

    def describe(self) -> str:
        return f"{self.kind.value}-in-docker:{self.selector}"


def _stable_versions(tags: list[str]) -> list[tuple[VersionString, str]]:
    parsed = []
    for tag in tags:
        if _FIXED.match(tag):
            parsed.append((VersionString.parse(tag), tag))
    return parsed


def resolve_tag(
    kind: BrowserKind,
    selector: VersionSelector,
    registry_tags: list[str],
    repository: str | None = None,
) -> ImageRef:
    """Pick the image tag that ``selector`` denotes among ``registry_tags``.

    ``latest-k`` counts distinct majors, so point releases never make
    ``latest-1`` a patch step.
    """
    repository = repository or f"selenoid/{kind.value}"
    if selector.family is ImageFamily.BETA_DEV:
        return ImageRef(repository, _beta_dev_tag(kind, selector.kind.value, registry_tags), ImageFamily.BETA_DEV)

    versions = _stable_versions(registry_tags)
    if selector.kind is SelectorKind.FIXED:
        for version, tag in versions:
            if version == selector.version:
                return ImageRef(repository, tag, ImageFamily.STABLE)
        raise TagNotFoundError(f"{repository} has no tag {selector.version.raw}")

    if not versions:
        raise TagNotFoundError(f"{repository} has no version tags")
    if selector.kind is SelectorKind.LATEST:
        return ImageRef(repository, max(versions)[1], ImageFamily.STABLE)

    majors = sorted({version.major() for version, _ in versions}, reverse=True)
    if len(majors) < selector.k + 1:
        raise InsufficientHistoryError(
            f"{repository} has {len(majors)} major version(s); latest-{selector.k} needs {selector.k + 1}"
        )
    target = majors[selector.k]
    return ImageRef(repository, max(v for v in versions if v[0].major() == target)[1], ImageFamily.STABLE)


def _beta_dev_tag(kind: BrowserKind, channel: str, tags: list[str]) -> str:
    pattern = re.compile(rf"^{kind.value}_{channel}(?:_(\d+(?:\.\d+)*))?$")
    bare, versioned = None, []
    for tag in tags:
        match = pattern.match(tag)
        if not match:
            continue
        if match.group(1):
            versioned.append((VersionString.parse(match.group(1)), tag))
        else:
            bare = tag
    if versioned:
        return max(versioned)[1]
    if bare:
        return bare
    raise TagNotFoundError(f"no {channel} image for {kind.value}")


# ---------------------------------------------------------------------------
# Container handles
# ---------------------------------------------------------------------------


class ContainerState(str, Enum):
    STARTING = "starting"
    READY = "ready"
    STOPPED = "stopped"
    REMOVED = "removed"


@dataclass
class ContainerHandle:
    container_id: str
    image: str
    recording: bool = False
    driver_url: str | None = None
    vnc_url: str | None = None
    recording_path: Path | None = None
    state: ContainerState = ContainerState.STARTING
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)
    _removing: bool = field(default=False, repr=False, compare=False)

    def mark_ready(self, driver_url: str, vnc_url: str | None) -> None:
        with self._lock:
            if self.state is not ContainerState.STARTING:
                raise DockerFarmError(f"container {self.container_id} cannot become ready from {self.state.value}")
            self.driver_url = driver_url
            self.vnc_url = vnc_url
            self.state = ContainerState.READY

    def claim_removal(self) -> bool:
        """True for exactly one caller; later calls see the container as already handled."""
        with self._lock:
            if self._removing or self.state is ContainerState.REMOVED:
                return False
            self._removing = True
            return True

    def transition(self, state: ContainerState) -> None:
        with self._lock:
            self.state = state
            if state is not ContainerState.READY:
                self.driver_url = None

    def to_manifest(self) -> dict[str, Any]:
        return {
            "container_id": self.container_id,
            "image": self.image,
            "recording": self.recording,
            "driver_url": self.driver_url,
            "vnc_url": self.vnc_url,
        }

    @classmethod
    def from_manifest(cls, data: dict[str, Any]) -> "ContainerHandle":
        return cls(
            container_id=data["container_id"],
            image=data.get("image", ""),
            recording=bool(data.get("recording", False)),
            driver_url=data.get("driver_url"),
            vnc_url=data.get("vnc_url"),
            state=ContainerState.READY,
        )


def save_manifest(handles: list[ContainerHandle], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"containers": [h.to_manifest() for h in handles]}, indent=2), encoding="utf-8")
    return path


def load_manifest(path: Path) -> list[ContainerHandle]:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc.strerror}") from exc
    except ValueError as exc:
        raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
    try:
        return [ContainerHandle.from_manifest(item) for item in data["containers"]]
    except (KeyError, TypeError, AttributeError) as exc:
        raise ManifestError(f"manifest {path} is malformed: {exc!r}") from exc


# ---------------------------------------------------------------------------
# Container engine and registry clients
# ---------------------------------------------------------------------------


class EngineClient(Protocol):
    host: str

    def ping(self) -> bool: ...

    def has_image(self, image: str) -> bool: ...

    def pull(self, repository: str, tag: str) -> None: ...

    def create(self, image: str, ports: list[int], environment: dict[str, str], labels: dict[str, str]) -> str: ...

    def start(self, container_id: str) -> None: ...

    def host_port(self, container_id: str, private_port: int) -> int: ...

    def stop(self, container_id: str) -> None: ...

    def remove(self, container_id: str) -> None: ...

    def get_archive(self, container_id: str, path: str) -> bytes: ...


def engine_host(base_url: str) -> str:
    parsed = urlparse(base_url)
    if parsed.scheme in ("tcp", "http", "https") and parsed.hostname:
        return parsed.hostname
    return "localhost"


class DockerEngine:
    """EngineClient over the container engine HTTP API (unix socket or TCP)."""

    def __init__(self, base_url: str = "unix:///var/run/docker.sock", timeout: int = 60) -> None:
        self.base_url = base_url
        self.host = engine_host(base_url)
        try:
            self.api = docker.APIClient(base_url=base_url, timeout=timeout)
        except DockerException as exc:
            raise EngineUnavailableError(f"cannot reach container engine at {base_url}: {exc}") from exc

    def _call(self, action: str, func: Callable[..., Any], *args: Any, **kwargs: Any) -> Any:
        try:
            return func(*args, **kwargs)
        except DockerException as exc:
            raise DockerFarmError(f"engine {action} failed: {exc}") from exc

    def ping(self) -> bool:
        try:
            return bool(self.api.ping())
        except (DockerException, requests.RequestException):
            return False

    def has_image(self, image: str) -> bool:
        try:
            self.api.inspect_image(image)
        except ImageNotFound:
            return False
        except DockerException as exc:
            raise DockerFarmError(f"engine inspect failed: {exc}") from exc
        return True

    def pull(self, repository: str, tag: str) -> None:
        try:
            self.api.pull(repository, tag=tag)
        except DockerException as exc:
            raise ImagePullError(f"cannot pull {repository}:{tag}: {exc}") from exc

    def create(self, image: str, ports: list[int], environment: dict[str, str], labels: dict[str, str]) -> str:
        host_config = self.api.create_host_config(port_bindings={port: None for port in ports}, shm_size="2g")
        created = self._call(
            "create",
            self.api.create_container,
            image,
            ports=ports,
            environment=environment,
            labels=labels,
            host_config=host_config,
        )
        return created["Id"]

    def start(self, container_id: str) -> None:
        self._call("start", self.api.start, container_id)

    def host_port(self, container_id: str, private_port: int) -> int:
        bindings = self._call("port", self.api.port, container_id, private_port) or []
        if not bindings:
            raise DockerFarmError(f"port {private_port} of {container_id} is not published")
        return int(bindings[0]["HostPort"])

    def stop(self, container_id: str) -> None:
        self._call("stop", self.api.stop, container_id, timeout=10)

    def remove(self, container_id: str) -> None:
        self._call("remove", self.api.remove_container, container_id, force=True)

    def get_archive(self, container_id: str, path: str) -> bytes:
        stream, _ = self._call("archive", self.api.get_archive, container_id, path)
        return b"".join(stream)

    def managed_containers(self) -> list[str]:
        containers = self._call("list", self.api.containers, all=True, filters={"label": MANAGED_LABEL})
        return [item["Id"] for item in containers]


class RegistryClient:
    """Tag listing against a Docker Hub style ``/v2/repositories/<repo>/tags`` endpoint."""

    def __init__(self, base_url: str = "https://hub.docker.com/v2", session: requests.Session | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()

    @retry(max_attempts=3, delay=1.0, exceptions=(requests.ConnectionError, requests.Timeout))
    def _page(self, url: str) -> dict[str, Any]:
        response = self.session.get(url, timeout=30)
        response.raise_for_status()
        return response.json()

    def list_tags(self, repository: str) -> list[str]:
        url = f"{self.base_url}/repositories/{repository}/tags?page_size=100"
        tags: list[str] = []
        try:
            while url:
                page = self._page(url)
                tags.extend(item["name"] for item in page.get("results", []))
                url = page.get("next")
        except requests.RequestException as exc:
            raise DockerFarmError(f"cannot list tags of {repository}: {exc}") from exc
        logger.debug(f"Registry lists {len(tags)} tags for {repository}")
        return tags


def http_ok(url: str) -> bool:
    try:
        return requests.get(url, timeout=2).status_code == 200
    except requests.RequestException:
        return False


# ---------------------------------------------------------------------------
# The farm
# ---------------------------------------------------------------------------


class DockerFarm:
    def __init__(
        self,
        config: ConfigStore,
        engine: EngineClient | None = None,
        registry: RegistryClient | None = None,
        *,
        status_check: Callable[[str], bool] = http_ok,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.config = config
        self._engine = engine
        self.registry = registry or RegistryClient(config.get("sel.jup.docker.registry.url"))
        self.status_check = status_check
        self.sleep = sleep
        self.clock = clock

    @property
    def engine(self) -> EngineClient:
        if self._engine is None:
            self._engine = DockerEngine(self.config.get("sel.jup.docker.host"))
        return self._engine

    def available(self) -> bool:
        try:
            return self.engine.ping()
        except Exception:
            return False

    def repository_for(self, spec: DockerBrowserSpec) -> str:
        if spec.repository:
            return spec.repository
        if spec.selector.family is ImageFamily.BETA_DEV:
            template = self.config.get("sel.jup.docker.image.beta")
        elif spec.vnc or spec.recording:
            template = self.config.get("sel.jup.docker.image.vnc")
        else:
            template = self.config.get("sel.jup.docker.image.stable")
        return template.format(kind=spec.kind.value)

    def image_for(self, spec: DockerBrowserSpec) -> ImageRef:
        repository = self.repository_for(spec)
        if spec.repository:
            return ImageRef(repository, spec.selector.version.raw, ImageFamily.STABLE)
        return resolve_tag(spec.kind, spec.selector, self.registry.list_tags(repository), repository)

    # -- single container --------------------------------------------------

    def start_browser(self, spec: DockerBrowserSpec, image: ImageRef | None = None) -> ContainerHandle:
        image = image or self.image_for(spec)
        engine = self.engine
        if not engine.has_image(image.name):
            logger.info(f"Pulling {image.name}")
            engine.pull(image.repository, image.tag)

        ports = [DRIVER_PORT] + ([VNC_PORT] if spec.vnc else [])
        environment = {"SCREEN_RESOLUTION": str(spec.screen), "ENABLE_VNC": str(spec.vnc).lower()}
        if spec.recording:
            environment["ENABLE_VIDEO"] = "true"
            environment["VIDEO_PATH"] = self.config.get("sel.jup.recording.path")
        container_id = engine.create(image.name, ports, environment, {MANAGED_LABEL: "true"})
        handle = ContainerHandle(container_id, image.name, recording=spec.recording)
        logger.info(f"Created container {container_id[:12]} from {image.name}")

        try:
            engine.start(container_id)
            base = f"http://{engine.host}:{engine.host_port(container_id, DRIVER_PORT)}"
            driver_url = base + DRIVER_PATHS.get(spec.kind, "")
            vnc_url = f"vnc://{engine.host}:{engine.host_port(container_id, VNC_PORT)}" if spec.vnc else None
            self._wait_ready(driver_url)
            handle.mark_ready(driver_url, vnc_url)
        except BaseException:
            self._discard(handle)
            raise

        logger.info(f"Container {container_id[:12]} ready, driver at {driver_url}")
        if vnc_url:
            logger.info(f"VNC for {container_id[:12]}: {vnc_url}")
        return handle

    def _wait_ready(self, driver_url: str) -> None:
        timeout = self.config.get("sel.jup.docker.timeout.sec")
        interval = self.config.get("sel.jup.docker.ready.poll.ms") / 1000
        deadline = self.clock() + timeout
        while True:
            if self.status_check(f"{driver_url}/status"):
                return
            if self.clock() >= deadline:
                raise ReadinessTimeoutError(f"driver at {driver_url} not ready after {timeout}s")
            self.sleep(interval)

    def _discard(self, handle: ContainerHandle) -> None:
        try:
            self.stop_and_remove(handle)
        except DockerFarmError as exc:
            logger.warning(f"Cleanup of container {handle.container_id[:12]} failed: {exc}")

    def stop_and_remove(
        self,
        handle: ContainerHandle,
        out_dir: Path | None = None,
        recording_name: str | None = None,
    ) -> Path | None:
        """Stop, keep the recording (when ``out_dir`` is given), remove. Repeat calls are no-ops."""
        if not handle.claim_removal():
            return handle.recording_path
        failures = []
        try:
            self.engine.stop(handle.container_id)
        except DockerFarmError as exc:
            failures.append(exc)
        handle.transition(ContainerState.STOPPED)

        if handle.recording and out_dir is not None:
            try:
                handle.recording_path = self._copy_recording(handle, Path(out_dir), recording_name)
            except (DockerFarmError, tarfile.TarError, OSError) as exc:
                failures.append(exc)

        try:
            self.engine.remove(handle.container_id)
        except DockerFarmError as exc:
            failures.append(exc)
        handle.transition(ContainerState.REMOVED)
        logger.info(f"Removed container {handle.container_id[:12]}")

        if failures:
            raise DockerFarmError("; ".join(str(exc) for exc in failures))
        return handle.recording_path

    def _copy_recording(self, handle: ContainerHandle, out_dir: Path, name: str | None) -> Path:
        archive = self.engine.get_archive(handle.container_id, self.config.get("sel.jup.recording.path"))
        with tarfile.open(fileobj=io.BytesIO(archive), mode="r:*") as bundle:
            member = next((m for m in bundle.getmembers() if m.isfile()), None)
            if member is None:
                raise DockerFarmError(f"no recording inside container {handle.container_id[:12]}")
            data = bundle.extractfile(member).read()
        out_dir.mkdir(parents=True, exist_ok=True)
        target = out_dir / (sanitize_filename(name or handle.container_id[:12]) + ".mp4")
        target.write_bytes(data)
        logger.info(f"Recording of {handle.container_id[:12]} stored at {target}")
        return target

    # -- fleets ------------------------------------------------------------

    def start_fleet(self, spec: DockerBrowserSpec, count: int) -> list[ContainerHandle]:
        """Start ``count`` containers concurrently; all of them or none."""
        if count < 1:
            raise ValueError("fleet size must be >= 1")
        image = self.image_for(spec)
        if count == 1:
            return [self.start_browser(spec, image)]

        workers = max(1, min(self.config.get("sel.jup.docker.parallelism"), count))
        with ThreadPoolExecutor(max_workers=workers, thread_name_prefix="fleet") as pool:
            futures = [pool.submit(self.start_browser, spec, image) for _ in range(count)]
            started, failures = [], []
            for index, future in enumerate(futures):
                try:
                    started.append(future.result())
                except Exception as exc:
                    failures.append((index, exc))

        if failures:
            logger.warning(f"Fleet start failed for {len(failures)} of {count}; rolling back {len(started)}")
            for handle in started:
                self._discard(handle)
            raise FleetStartError(failures)
        return started
