"""Test harness: browser fixtures, lifecycle, skip conditions, options and failure artifacts.

A test declares the browsers it needs as ``BrowserRequest`` objects. The
harness turns every request into live W3C sessions (starting local driver
processes or containers when needed), runs the test body, captures
screenshots and recordings for failures, and releases everything afterwards,
including when the body raises.

Plans can be built in code or loaded from a JSON plan file whose tests are
lists of steps (navigate, click, send_keys, assert_text, assert_url, execute,
wait).
"""

from __future__ import annotations

import base64
import copy
import json
import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Mapping, Union

import pandas as pd

from browserkit.config import ConfigStore
from browserkit.docker_farm import (
    DOCKER_KINDS,
    ContainerHandle,
    DockerBrowserSpec,
    DockerFarm,
    ScreenGeometry,
    parse_selector,
)
from browserkit.drivers import DriverManager, DriverService
from browserkit.errors import FixtureResolutionError, PlanError
from browserkit.helpers import sanitize_filename, utc_timestamp
from browserkit.versions import BrowserKind, VersionString
from browserkit.webdriver import (
    VENDOR_OPTIONS_KEYS,
    W3C_BROWSER_NAMES,
    Capabilities,
    Locator,
    LocatorStrategy,
    Provenance,
    ScreenshotEncoding,
    SessionHandle,
    WebDriverClient,
)

logger = logging.getLogger(__name__)

_CHROMIUM_FAMILY = {"goog:chromeOptions", "ms:edgeOptions"}
DOCKER_SUFFIX = "-in-docker"


# ---------------------------------------------------------------------------
# Requests and options
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BrowserOptions:
    arguments: tuple[str, ...] = ()
    preferences: Mapping[str, Any] = field(default_factory=dict)
    binary: str | None = None
    extensions: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not (self.arguments or self.preferences or self.binary or self.extensions)

    def merge_into(self, caps: Capabilities, kind: BrowserKind) -> Capabilities:
        """Capabilities with these options added under the kind's vendor key; arguments keep declaration order."""
        if self.empty:
            return caps
        key = VENDOR_OPTIONS_KEYS[kind]
        vendor = copy.deepcopy(dict(caps.vendor_options))
        options = vendor.setdefault(key, {})
        if self.arguments:
            options["args"] = list(options.get("args", [])) + list(self.arguments)
        if self.preferences:
            options["prefs"] = {**options.get("prefs", {}), **self.preferences}
        if self.binary:
            options["binary"] = str(self.binary)
        if self.extensions:
            if key not in _CHROMIUM_FAMILY:
                raise ValueError(f"{kind.value} does not accept extensions through capabilities")
            encoded = [base64.b64encode(Path(p).read_bytes()).decode("ascii") for p in self.extensions]
            options["extensions"] = list(options.get("extensions", [])) + encoded
        return replace(caps, vendor_options=vendor)

    def to_dict(self) -> dict[str, Any]:
        return {
            "arguments": list(self.arguments),
            "preferences": dict(self.preferences),
            "binary": self.binary,
            "extensions": list(self.extensions),
        }


@dataclass(frozen=True)
class LocalTarget:
    kind: BrowserKind
    browser_version: VersionString | None = None


@dataclass(frozen=True)
class RemoteTarget:
    driver_url: str
    caps: Capabilities


@dataclass(frozen=True)
class DockerTarget:
    spec: DockerBrowserSpec


@dataclass(frozen=True)
class GenericTarget:
    pass


@dataclass(frozen=True)
class CustomTarget:
    name: str


Target = Union[LocalTarget, RemoteTarget, DockerTarget, GenericTarget, CustomTarget]


@dataclass(frozen=True)
class BrowserRequest:
    target: Target
    count: int = 1
    options: BrowserOptions = field(default_factory=BrowserOptions)

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ValueError("browser count must be >= 1")
        if self.count > 1 and not isinstance(self.target, (DockerTarget, RemoteTarget)):
            raise ValueError("lists of browsers are only available for docker and remote targets")

    def describe(self) -> str:
        target = self.target
        if isinstance(target, LocalTarget):
            text = f"local {target.kind.value}"
        elif isinstance(target, RemoteTarget):
            text = f"remote {target.caps.browser_name} at {target.driver_url}"
        elif isinstance(target, DockerTarget):
            text = target.spec.describe()
        elif isinstance(target, CustomTarget):
            text = f"custom driver {target.name!r}"
        else:
            text = "generic browser"
        return text if self.count == 1 else f"{text} x{self.count}"

    @property
    def key(self) -> str:
        return json.dumps([self.describe(), self.options.to_dict()], sort_keys=True, default=str)


def kind_for_browser_name(name: str) -> BrowserKind:
    for kind, w3c_name in W3C_BROWSER_NAMES.items():
        if w3c_name.lower() == name.lower():
            return kind
    return BrowserKind.parse(name)


def request_for_type(
    type_text: str,
    version: str = "latest",
    count: int = 1,
    options: BrowserOptions | None = None,
    config: ConfigStore | None = None,
) -> BrowserRequest:
    """``chrome`` is a local browser, ``chrome-in-docker`` a container."""
    options = options or BrowserOptions()
    if type_text.endswith(DOCKER_SUFFIX):
        kind = BrowserKind.parse(type_text[: -len(DOCKER_SUFFIX)])
        if kind not in DOCKER_KINDS:
            raise ValueError(f"{kind.value} is not available in docker")
        spec = DockerBrowserSpec(kind, parse_selector(version))
        if config is not None:
            spec = replace(
                spec,
                vnc=config.get("sel.jup.vnc"),
                recording=config.get("sel.jup.recording"),
                screen=ScreenGeometry.parse(config.get("sel.jup.docker.screen")),
            )
        return BrowserRequest(DockerTarget(spec), count, options)

    kind = BrowserKind.parse(type_text)
    if version in ("", "latest"):
        return BrowserRequest(LocalTarget(kind), count, options)
    try:
        pinned = VersionString.parse(version)
    except ValueError:
        raise ValueError(f"local browsers accept 'latest' or a fixed version, not {version!r}") from None
    return BrowserRequest(LocalTarget(kind, pinned), count, options)


# ---------------------------------------------------------------------------
# Plans and outcomes
# ---------------------------------------------------------------------------


class ConditionKind(str, Enum):
    BROWSER_AVAILABLE = "browser_available"
    DOCKER_AVAILABLE = "docker_available"
    DRIVER_URL_ONLINE = "driver_url_online"


@dataclass(frozen=True)
class Condition:
    kind: ConditionKind
    browser: BrowserKind | None = None
    url: str | None = None

    @classmethod
    def browser_available(cls, kind: BrowserKind) -> "Condition":
        return cls(ConditionKind.BROWSER_AVAILABLE, browser=kind)

    @classmethod
    def docker_available(cls) -> "Condition":
        return cls(ConditionKind.DOCKER_AVAILABLE)

    @classmethod
    def driver_url_online(cls, url: str) -> "Condition":
        return cls(ConditionKind.DRIVER_URL_ONLINE, url=url)

    def __str__(self) -> str:
        detail = self.browser.value if self.browser else self.url
        return f"{self.kind.value}({detail})" if detail else self.kind.value


class SessionMode(str, Enum):
    PER_TEST = "per_test"
    SINGLE_SESSION = "single_session"


class OutcomeStatus(str, Enum):
    PASSED = "passed"
    FAILED = "failed"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class Artifact:
    type: str
    path: Path


@dataclass
class TestContext:
    """What a test body receives: one list of sessions per declared request."""

    __test__ = False

    name: str
    sessions: list[list[SessionHandle]]
    client: WebDriverClient
    out_dir: Path

    def browser(self, index: int = 0) -> SessionHandle:
        return self.sessions[index][0]

    def browsers(self, index: int = 0) -> list[SessionHandle]:
        return self.sessions[index]


@dataclass(frozen=True)
class TestCase:
    __test__ = False

    name: str
    requests: tuple[BrowserRequest, ...]
    body: Callable[[TestContext], None]
    conditions: tuple[Condition, ...] = ()


@dataclass(frozen=True)
class TestPlan:
    __test__ = False

    tests: tuple[TestCase, ...]
    session_mode: SessionMode = SessionMode.PER_TEST
    skip_conditions: tuple[Condition, ...] = ()


@dataclass
class TestOutcome:
    __test__ = False

    name: str
    status: OutcomeStatus
    artifacts: list[Artifact] = field(default_factory=list)
    duration: float = 0.0
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "status": self.status.value,
            "artifacts": [{"type": a.type, "path": str(a.path)} for a in self.artifacts],
            "duration": round(self.duration, 6),
            "message": self.message,
        }


# ---------------------------------------------------------------------------
# Resources acquired for a test (or a whole single-session plan)
# ---------------------------------------------------------------------------


class ResourceLedger:
    """Everything acquired while resolving fixtures, released in reverse order."""

    def __init__(self) -> None:
        self.sessions: list[SessionHandle] = []
        self.containers: list[ContainerHandle] = []
        self.services: list[DriverService] = []
        self.container_of: dict[str, ContainerHandle] = {}
        self.retained: set[str] = set()
        self.cache: dict[str, list[SessionHandle]] = {}

    def retain_recording(self, handle: SessionHandle) -> None:
        container = self.container_of.get(handle.session_id)
        if container is not None:
            self.retained.add(container.container_id)


DriverFactory = Callable[[WebDriverClient, BrowserOptions], SessionHandle]


class Harness:
    def __init__(
        self,
        config: ConfigStore,
        *,
        client: WebDriverClient | None = None,
        drivers: DriverManager | None = None,
        farm: DockerFarm | None = None,
        out_dir: Path | None = None,
        clock: Callable[[], float] = time.perf_counter,
    ) -> None:
        self.config = config
        self.client = client or WebDriverClient.from_config(config)
        self.drivers = drivers or DriverManager(config)
        self.farm = farm or DockerFarm(config)
        self.out_dir = Path(out_dir or config.get("sel.jup.output.folder"))
        self.clock = clock
        self._custom: dict[str, DriverFactory] = {}

    def register_driver(self, name: str, factory: DriverFactory) -> None:
        """Make ``CustomTarget(name)`` resolvable through ``factory``."""
        self._custom[name] = factory

    # -- conditions ----------------------------------------------------------

    def evaluate_condition(self, condition: Condition) -> bool:
        try:
            if condition.kind is ConditionKind.BROWSER_AVAILABLE:
                return self.drivers.detect_browser_version(condition.browser) is not None
            if condition.kind is ConditionKind.DOCKER_AVAILABLE:
                return self.farm.available()
            return self.client.is_online(condition.url)
        except Exception as exc:
            logger.debug(f"Condition {condition} evaluated to false: {exc}")
            return False

    # -- fixture resolution ------------------------------------------------

    def resolve_fixture(self, request: BrowserRequest, ledger: ResourceLedger) -> list[SessionHandle]:
        """``request.count`` live sessions; every acquisition is recorded in ``ledger``."""
        try:
            return self._resolve(request, ledger)
        except FixtureResolutionError:
            raise
        except Exception as exc:
            raise FixtureResolutionError(request.describe(), exc) from exc

    def _resolve(self, request: BrowserRequest, ledger: ResourceLedger) -> list[SessionHandle]:
        target = request.target
        if isinstance(target, GenericTarget):
            concrete = request_for_type(
                self.config.get("sel.jup.default.browser"),
                self.config.get("sel.jup.default.version"),
                options=request.options,
                config=self.config,
            )
            return self._resolve(concrete, ledger)

        if isinstance(target, LocalTarget):
            artifact = self.drivers.ensure(target.kind, target.browser_version)
            service = self.drivers.start_service(artifact)
            ledger.services.append(service)
            caps = request.options.merge_into(Capabilities.for_kind(target.kind), target.kind)
            handle = self.client.new_session(service.url, caps, Provenance.LOCAL)
            ledger.sessions.append(handle)
            return [handle]

        if isinstance(target, RemoteTarget):
            caps = target.caps
            if not request.options.empty:
                caps = request.options.merge_into(caps, kind_for_browser_name(caps.browser_name))
            handles = []
            for _ in range(request.count):
                handle = self.client.new_session(target.driver_url, caps, Provenance.REMOTE)
                ledger.sessions.append(handle)
                handles.append(handle)
            return handles

        if isinstance(target, DockerTarget):
            return self._resolve_docker(target.spec, request, ledger)

        factory = self._custom.get(target.name)
        if factory is None:
            raise PlanError(f"no driver registered under {target.name!r}")
        handle = factory(self.client, request.options)
        ledger.sessions.append(handle)
        return [handle]

    def _resolve_docker(self, spec: DockerBrowserSpec, request: BrowserRequest, ledger: ResourceLedger) -> list[SessionHandle]:
        spec = replace(
            spec,
            vnc=spec.vnc or self.config.get("sel.jup.vnc"),
            recording=spec.recording or self.config.get("sel.jup.recording"),
        )
        if request.count == 1:
            containers = [self.farm.start_browser(spec)]
        else:
            containers = self.farm.start_fleet(spec, request.count)
        ledger.containers.extend(containers)

        caps = request.options.merge_into(Capabilities.for_kind(spec.kind), spec.kind)
        handles = []
        for container in containers:
            handle = self.client.new_session(container.driver_url, caps, Provenance.DOCKER)
            ledger.sessions.append(handle)
            ledger.container_of[handle.session_id] = container
            handles.append(handle)
        return handles

    def _resolve_cached(self, request: BrowserRequest, ledger: ResourceLedger) -> list[SessionHandle]:
        if request.key not in ledger.cache:
            ledger.cache[request.key] = self.resolve_fixture(request, ledger)
        return ledger.cache[request.key]

    # -- artifacts and disposal --------------------------------------------

    def capture_failure_artifacts(
        self,
        handle: SessionHandle,
        test_name: str,
        ledger: ResourceLedger | None = None,
    ) -> list[Artifact]:
        """Screenshot in the configured format; flags the container recording for retention."""
        artifacts: list[Artifact] = []
        if ledger is not None and self.config.get("sel.jup.recording.when.failure"):
            ledger.retain_recording(handle)
        if not handle.live:
            return artifacts

        name = sanitize_filename(f"{test_name}-{handle.session_id}-{utc_timestamp()}")
        try:
            if self.config.get("sel.jup.screenshot.format") == "png":
                shot = self.client.screenshot(handle, ScreenshotEncoding.PNG_FILE, self.out_dir, name)
                artifacts.append(Artifact("screenshot", Path(shot.payload)))
            else:
                shot = self.client.screenshot(handle, ScreenshotEncoding.BASE64)
                self.out_dir.mkdir(parents=True, exist_ok=True)
                target = self.out_dir / f"{name}.b64"
                target.write_text(shot.payload, encoding="ascii")
                artifacts.append(Artifact("screenshot", target))
        except Exception as exc:
            logger.warning(f"Screenshot of session {handle.session_id} for {test_name} failed: {exc}")
        return artifacts

    def dispose(self, ledger: ResourceLedger, test_name: str = "plan") -> list[Artifact]:
        """Delete sessions, stop containers (keeping recordings by policy), stop driver processes."""
        for handle in reversed(ledger.sessions):
            try:
                self.client.delete_session(handle)
            except Exception as exc:
                logger.warning(f"Deleting session {handle.session_id} failed: {exc}")

        artifacts = []
        only_on_failure = self.config.get("sel.jup.recording.when.failure")
        for container in reversed(ledger.containers):
            keep = container.recording and (not only_on_failure or container.container_id in ledger.retained)
            try:
                if keep:
                    name = f"{test_name}-{container.container_id[:12]}-{utc_timestamp()}"
                    path = self.farm.stop_and_remove(container, self.out_dir, name)
                    if path is not None:
                        artifacts.append(Artifact("recording", path))
                else:
                    self.farm.stop_and_remove(container)
            except Exception as exc:
                logger.warning(f"Disposing container {container.container_id[:12]} failed: {exc}")

        for service in reversed(ledger.services):
            try:
                service.stop()
            except Exception as exc:
                logger.warning(f"Stopping driver on port {service.port} failed: {exc}")

        ledger.sessions.clear()
        ledger.containers.clear()
        ledger.services.clear()
        ledger.cache.clear()
        return artifacts

    # -- plan execution ----------------------------------------------------

    def run_plan(self, plan: TestPlan) -> list[TestOutcome]:
        outcomes: list[TestOutcome] = []
        if plan.session_mode is SessionMode.SINGLE_SESSION:
            shared = ResourceLedger()
            try:
                for test in plan.tests:
                    outcomes.append(self._run_test(test, plan, shared))
            finally:
                recordings = self.dispose(shared, "plan")
                if outcomes:
                    outcomes[-1].artifacts.extend(recordings)
            return outcomes

        for test in plan.tests:
            ledger = ResourceLedger()
            try:
                outcome = self._run_test(test, plan, ledger)
            finally:
                recordings = self.dispose(ledger, test.name)
            outcome.artifacts.extend(recordings)
            outcomes.append(outcome)
        return outcomes

    def _run_test(self, test: TestCase, plan: TestPlan, ledger: ResourceLedger) -> TestOutcome:
        started = self.clock()
        for condition in (*plan.skip_conditions, *test.conditions):
            if not self.evaluate_condition(condition):
                logger.info(f"Skipping {test.name}: {condition} is false")
                return TestOutcome(test.name, OutcomeStatus.SKIPPED, message=f"condition {condition} is false")

        try:
            sessions = [self._resolve_cached(request, ledger) for request in test.requests]
        except FixtureResolutionError as exc:
            logger.error(f"{test.name} failed during fixture resolution: {exc}")
            return TestOutcome(test.name, OutcomeStatus.FAILED, duration=self.clock() - started, message=str(exc))

        context = TestContext(test.name, sessions, self.client, self.out_dir)
        status, message = OutcomeStatus.PASSED, ""
        try:
            test.body(context)
        except Exception as exc:
            status, message = OutcomeStatus.FAILED, f"{type(exc).__name__}: {exc}"
            logger.error(f"{test.name} failed: {message}")

        failed = status is OutcomeStatus.FAILED
        capture = self.config.get("sel.jup.screenshot.always") or (failed and self.config.get("sel.jup.screenshot"))
        artifacts: list[Artifact] = []
        for group in sessions:
            for handle in group:
                if capture:
                    artifacts.extend(self.capture_failure_artifacts(handle, test.name, ledger if failed else None))
                elif failed and self.config.get("sel.jup.recording.when.failure"):
                    ledger.retain_recording(handle)
        for artifact in artifacts:
            logger.info(f"Captured {artifact.type} for {test.name}: {artifact.path}")
        return TestOutcome(test.name, status, artifacts, self.clock() - started, message)


# ---------------------------------------------------------------------------
# Plan files and reports
# ---------------------------------------------------------------------------


def _locator(spec: Any, where: str) -> Locator:
    if not isinstance(spec, dict):
        raise PlanError(f"{where}: expected a locator object such as {{\"css\": \"#id\"}}")
    for strategy in LocatorStrategy:
        if strategy.value in spec:
            return Locator(strategy, spec[strategy.value])
    raise PlanError(f"{where}: locator needs one of {', '.join(s.value for s in LocatorStrategy)}")


def _compile_step(step: Any, where: str, sleep: Callable[[float], None]) -> Callable[[TestContext], None]:
    if not isinstance(step, dict):
        raise PlanError(f"{where}: a step must be an object")
    index = step.get("browser", 0)
    actions = [name for name in _STEP_NAMES if name in step]
    if len(actions) != 1:
        raise PlanError(f"{where}: a step needs exactly one of {', '.join(_STEP_NAMES)}")
    action = actions[0]
    value = step[action]

    if action == "navigate":
        return lambda ctx: ctx.client.navigate(ctx.browser(index), value)
    if action == "click":
        locator = _locator(value, where)
        return lambda ctx: ctx.client.click(ctx.client.find_element(ctx.browser(index), locator))
    if action == "send_keys":
        locator = _locator(value, where)
        text = value.get("text", "")
        return lambda ctx: ctx.client.send_keys(ctx.client.find_element(ctx.browser(index), locator), text)
    if action == "assert_text":
        locator = _locator(value, where)
        expected = value.get("equals")

        def assert_text(ctx: TestContext) -> None:
            actual = ctx.client.text(ctx.client.find_element(ctx.browser(index), locator))
            assert actual == expected, f"text of {locator} is {actual!r}, expected {expected!r}"

        return assert_text
    if action == "assert_url":

        def assert_url(ctx: TestContext) -> None:
            actual = ctx.client.current_url(ctx.browser(index))
            assert actual == value, f"url is {actual!r}, expected {value!r}"

        return assert_url
    if action == "execute":
        args = step.get("args", [])

        def execute(ctx: TestContext) -> None:
            result = ctx.client.execute_script(ctx.browser(index), value, args)
            if "expect" in step:
                assert result == step["expect"], f"script returned {result!r}, expected {step['expect']!r}"

        return execute
    if not isinstance(value, (int, float)) or value < 0:
        raise PlanError(f"{where}: wait needs a non-negative number of seconds")
    return lambda ctx: sleep(value)


_STEP_NAMES = ("navigate", "click", "send_keys", "assert_text", "assert_url", "execute", "wait")


def steps_body(steps: list[Any], where: str = "steps", sleep: Callable[[float], None] = time.sleep):
    compiled = [_compile_step(step, f"{where}[{i}]", sleep) for i, step in enumerate(steps)]

    def body(ctx: TestContext) -> None:
        for run_step in compiled:
            run_step(ctx)

    return body


def _condition(item: Any, where: str) -> Condition:
    if not isinstance(item, dict) or "type" not in item:
        raise PlanError(f"{where}: condition needs a type")
    try:
        kind = ConditionKind(item["type"])
        if kind is ConditionKind.BROWSER_AVAILABLE:
            return Condition.browser_available(BrowserKind.parse(item["browser"]))
        if kind is ConditionKind.DRIVER_URL_ONLINE:
            return Condition.driver_url_online(item["url"])
        return Condition.docker_available()
    except (KeyError, ValueError) as exc:
        raise PlanError(f"{where}: {exc}") from None


def _options(item: Any, where: str) -> BrowserOptions:
    if item is None:
        return BrowserOptions()
    if not isinstance(item, dict):
        raise PlanError(f"{where}: options must be an object")
    for key in ("arguments", "extensions"):
        values = item.get(key, [])
        if not isinstance(values, list) or not all(isinstance(value, str) for value in values):
            raise PlanError(f"{where}.{key}: must be a list of strings")
    if not isinstance(item.get("preferences", {}), dict):
        raise PlanError(f"{where}.preferences: must be an object")
    binary = item.get("binary")
    if binary is not None and not isinstance(binary, str):
        raise PlanError(f"{where}.binary: must be a string")
    return BrowserOptions(
        arguments=tuple(item.get("arguments", ())),
        preferences=dict(item.get("preferences", {})),
        binary=binary,
        extensions=tuple(item.get("extensions", ())),
    )


def _request(item: Any, where: str, config: ConfigStore | None) -> BrowserRequest:
    if not isinstance(item, dict) or "type" not in item:
        raise PlanError(f"{where}: browser needs a type")
    options = _options(item.get("options"), f"{where}.options")
    count = item.get("count", 1)
    if isinstance(count, bool) or not isinstance(count, int):
        raise PlanError(f"{where}: count must be an integer")
    try:
        if item["type"] == "generic":
            return BrowserRequest(GenericTarget(), count, options)
        if item["type"] == "custom":
            return BrowserRequest(CustomTarget(item["name"]), count, options)
        if item["type"] == "remote":
            caps = Capabilities(
                browser_name=item.get("browserName", "chrome"),
                browser_version=item.get("browserVersion"),
                platform_name=item.get("platformName"),
                vendor_options=dict(item.get("vendorOptions", {})),
            )
            return BrowserRequest(RemoteTarget(item["url"], caps), count, options)
        return request_for_type(item["type"], str(item.get("version", "latest")), count, options, config)
    except (KeyError, ValueError) as exc:
        raise PlanError(f"{where}: {exc}") from None


@dataclass(frozen=True)
class PlanTemplate:
    """A plan test without browsers; a scenario supplies them."""

    name: str
    body: Callable[[TestContext], None]
    conditions: tuple[Condition, ...] = ()


def load_plan(
    source: Path | Mapping[str, Any],
    config: ConfigStore | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[TestPlan, list[PlanTemplate]]:
    """Validate a plan document; nothing is acquired here."""
    if isinstance(source, Mapping):
        document = source
    else:
        try:
            document = json.loads(Path(source).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise PlanError(f"cannot read plan {source}: {exc}") from None
    if not isinstance(document, Mapping) or not isinstance(document.get("tests"), list):
        raise PlanError("plan needs a 'tests' list")

    try:
        mode = SessionMode(document.get("session_mode", SessionMode.PER_TEST.value))
    except ValueError:
        raise PlanError(f"unknown session_mode {document.get('session_mode')!r}") from None
    skip = tuple(_condition(c, f"$.conditions[{i}]") for i, c in enumerate(document.get("conditions", [])))

    tests, templates, names = [], [], set()
    for i, item in enumerate(document["tests"]):
        where = f"$.tests[{i}]"
        if not isinstance(item, dict) or not item.get("name"):
            raise PlanError(f"{where}: test needs a name")
        if item["name"] in names:
            raise PlanError(f"{where}: duplicate test name {item['name']!r}")
        names.add(item["name"])
        body = steps_body(item.get("steps", []), f"{where}.steps", sleep)
        conditions = tuple(_condition(c, f"{where}.conditions[{j}]") for j, c in enumerate(item.get("conditions", [])))
        browsers = item.get("browsers")
        if not browsers:
            templates.append(PlanTemplate(item["name"], body, conditions))
            continue
        requests = tuple(_request(b, f"{where}.browsers[{j}]", config) for j, b in enumerate(browsers))
        tests.append(TestCase(item["name"], requests, body, conditions))
    return TestPlan(tuple(tests), mode, skip), templates


def summary_table(outcomes: list[TestOutcome]) -> str:
    if not outcomes:
        return "no tests"
    df = pd.DataFrame(
        [
            {
                "test": o.name,
                "status": o.status.value,
                "duration_s": round(o.duration, 3),
                "artifacts": len(o.artifacts),
            }
            for o in outcomes
        ]
    )
    totals = df["status"].value_counts().reindex([s.value for s in OutcomeStatus], fill_value=0)
    footer = ", ".join(f"{status}: {count}" for status, count in totals.items())
    return df.to_string(index=False) + "\n\n" + footer


def write_report(outcomes: list[TestOutcome], out_dir: Path, name: str = "report.jsonl") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    target = out_dir / name
    with target.open("w", encoding="utf-8") as handle:
        for outcome in outcomes:
            handle.write(json.dumps(outcome.to_dict()) + "\n")
    logger.info(f"Report with {len(outcomes)} outcome(s) written to {target}")
    return target
