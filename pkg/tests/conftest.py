import io
import itertools
import tarfile
import zipfile
from pathlib import Path

import pytest

from browserkit.config import ConfigStore
from browserkit.docker_farm import DRIVER_PORT, DockerFarm
from browserkit.drivers import DriverArtifact, Platform
from browserkit.errors import DockerFarmError, DriverError, ImagePullError
from browserkit.mock_server import MockWebDriverServer
from browserkit.versions import VersionString
from browserkit.webdriver import WebDriverClient

CHROME_TAGS = ["89.0", "90.0", "91.0", "91.0.1", "latest", "nightly"]


class ScriptedEngine:
    """In-memory container engine; ``faults[op]`` holds the 1-based call numbers that fail."""

    def __init__(self, driver_port, faults=None, images=(), recording=b"mp4-bytes"):
        self.host = "127.0.0.1"
        self.driver_port = driver_port
        self.faults = {op: set(calls) for op, calls in (faults or {}).items()}
        self.images = set(images)
        self.recording = recording
        self.calls = {op: 0 for op in ("create", "start", "stop", "remove", "pull", "archive")}
        self.created = []
        self.removed = []
        self.started = []
        self.stopped = []
        self.pulled = []
        self.environments = {}
        self.ping_ok = True
        self._ids = itertools.count(1)

    def _tick(self, op):
        self.calls[op] += 1
        if self.calls[op] in self.faults.get(op, ()):
            error = ImagePullError if op == "pull" else DockerFarmError
            raise error(f"injected {op} failure")

    @property
    def live(self):
        return [cid for cid in self.created if cid not in self.removed]

    def ping(self):
        return self.ping_ok

    def has_image(self, image):
        return image in self.images

    def pull(self, repository, tag):
        self._tick("pull")
        self.pulled.append(f"{repository}:{tag}")
        self.images.add(f"{repository}:{tag}")

    def create(self, image, ports, environment, labels):
        self._tick("create")
        container_id = f"{next(self._ids):064x}"
        self.created.append(container_id)
        self.environments[container_id] = dict(environment)
        return container_id

    def start(self, container_id):
        self._tick("start")
        self.started.append(container_id)

    def host_port(self, container_id, private_port):
        return self.driver_port if private_port == DRIVER_PORT else 5900 + len(self.created)

    def stop(self, container_id):
        self.stopped.append(container_id)
        self._tick("stop")

    def remove(self, container_id):
        self._tick("remove")
        self.removed.append(container_id)

    def get_archive(self, container_id, path):
        self._tick("archive")
        buffer = io.BytesIO()
        with tarfile.open(fileobj=buffer, mode="w") as bundle:
            info = tarfile.TarInfo(Path(path).name)
            info.size = len(self.recording)
            bundle.addfile(info, io.BytesIO(self.recording))
        return buffer.getvalue()


class FakeRegistry:
    def __init__(self, tags=None):
        self.tags = tags or {}
        self.requests = []

    def list_tags(self, repository):
        self.requests.append(repository)
        return list(self.tags.get(repository, CHROME_TAGS))


class CountingTransport:
    def __init__(self, payloads=None):
        self.payloads = payloads or {}
        self.urls = []

    def get(self, url, timeout=60.0):
        self.urls.append(url)
        payload = self.payloads.get(url, self.payloads.get("*"))
        if isinstance(payload, Exception):
            raise payload
        return payload


class FakeService:
    """Stands in for a local driver process; points at the mock server."""

    def __init__(self, url, ledger):
        self.url = url
        self.port = int(url.rsplit(":", 1)[1])
        self.ledger = ledger

    def stop(self):
        self.ledger.append("stop")


class FakeDrivers:
    def __init__(self, url, detected="91.0.4472.114", failing_starts=()):
        self.url = url
        self.failing_starts = set(failing_starts)
        self.start_calls = 0
        self.detected = VersionString.parse(detected) if detected else None
        self.services = []
        self.events = []

    def detect_browser_version(self, kind):
        return self.detected

    def ensure(self, kind, browser_version=None):
        return DriverArtifact(kind, VersionString.parse("91.0.4472.19"), Platform.LINUX_X64, Path("/tmp/chromedriver"), True)

    def start_service(self, artifact):
        self.start_calls += 1
        if self.start_calls in self.failing_starts:
            raise DriverError(f"scripted start failure #{self.start_calls}")
        self.events.append("start")
        service = FakeService(self.url, self.events)
        self.services.append(service)
        return service


def zip_archive(name, payload=b"#!/bin/sh\necho driver\n"):
    buffer = io.BytesIO()
    with zipfile.ZipFile(buffer, "w") as bundle:
        bundle.writestr(f"nested/{name}", payload)
    return buffer.getvalue()


def tar_archive(name, payload=b"#!/bin/sh\necho driver\n"):
    buffer = io.BytesIO()
    with tarfile.open(fileobj=buffer, mode="w:gz") as bundle:
        info = tarfile.TarInfo(name)
        info.size = len(payload)
        info.mode = 0o644
        bundle.addfile(info, io.BytesIO(payload))
    return buffer.getvalue()


def counting_clock(step=1.0):
    ticks = itertools.count()
    return lambda: next(ticks) * step


@pytest.fixture
def config():
    return ConfigStore()


@pytest.fixture
def mock_server():
    with MockWebDriverServer() as server:
        yield server


@pytest.fixture
def client():
    return WebDriverClient(connect_timeout=2, command_timeout=5)


@pytest.fixture
def engine(mock_server):
    return ScriptedEngine(mock_server.port, images={"selenoid/chrome:91.0.1", "selenoid/vnc_chrome:91.0.1"})


@pytest.fixture
def farm(config, engine):
    return DockerFarm(
        config.with_api({"sel.jup.docker.timeout.sec": 3}),
        engine,
        FakeRegistry(),
        status_check=lambda url: True,
        sleep=lambda seconds: None,
        clock=counting_clock(),
    )

