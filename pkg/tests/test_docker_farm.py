import random
import threading
from unittest.mock import Mock

import pytest
import requests

from conftest import CHROME_TAGS, FakeRegistry, ScriptedEngine, counting_clock

from browserkit.docker_farm import (
    ContainerHandle,
    ContainerState,
    DockerBrowserSpec,
    DockerFarm,
    ImageFamily,
    RegistryClient,
    ScreenGeometry,
    SelectorKind,
    VersionSelector,
    engine_host,
    load_manifest,
    parse_selector,
    resolve_tag,
    save_manifest,
)
from browserkit.errors import (
    DockerFarmError,
    FleetStartError,
    ImagePullError,
    InsufficientHistoryError,
    ManifestError,
    ReadinessTimeoutError,
    TagNotFoundError,
)
from browserkit.versions import BrowserKind, VersionString

CHROME = BrowserKind.CHROME


def make_farm(config, engine, status_check=lambda url: True, tags=None, **settings):
    return DockerFarm(
        config.with_api({"sel.jup.docker.timeout.sec": 3, **settings}),
        engine,
        FakeRegistry(tags),
        status_check=status_check,
        sleep=lambda seconds: None,
        clock=counting_clock(),
    )


# ---------------------------------------------------------------------------
# selectors and tag resolution
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "text, kind, shown",
    [
        ("latest", SelectorKind.LATEST, "latest"),
        (" Latest-2 ", SelectorKind.LATEST_MINUS, "latest-2"),
        ("beta", SelectorKind.BETA, "beta"),
        ("dev", SelectorKind.DEV, "dev"),
        ("91.0", SelectorKind.FIXED, "91.0"),
    ],
)
def test_parse_selector(text, kind, shown):
    selector = parse_selector(text)

    assert selector.kind is kind
    assert str(selector) == shown


@pytest.mark.parametrize("text", ["latest-0", "latest-x", "newest", "91.x", ""])
def test_parse_selector_rejects_garbage(text):
    with pytest.raises(ValueError):
        parse_selector(text)


@pytest.mark.parametrize(
    "selector, tag",
    [
        (VersionSelector.latest(), "91.0.1"),
        (VersionSelector.latest_minus(1), "90.0"),
        (VersionSelector.latest_minus(2), "89.0"),
        (VersionSelector.fixed("91.0"), "91.0"),
    ],
)
def test_resolve_tag_against_registry_listing(selector, tag):
    image = resolve_tag(CHROME, selector, CHROME_TAGS)

    assert image.name == f"selenoid/chrome:{tag}"
    assert image.family is ImageFamily.STABLE


def test_latest_minus_beyond_history():
    with pytest.raises(InsufficientHistoryError, match="latest-3"):
        resolve_tag(CHROME, VersionSelector.latest_minus(3), CHROME_TAGS)


def test_fixed_version_missing_from_registry():
    with pytest.raises(TagNotFoundError, match="88.0"):
        resolve_tag(CHROME, VersionSelector.fixed("88.0"), CHROME_TAGS)


def test_registry_without_version_tags():
    with pytest.raises(TagNotFoundError):
        resolve_tag(CHROME, VersionSelector.latest(), ["latest", "nightly"])


def random_tags(rng):
    tags = {"latest", "nightly", "stable"}
    for _ in range(rng.randint(1, 25)):
        parts = [rng.randint(60, 100)] + [rng.randint(0, 9) for _ in range(rng.randint(0, 2))]
        tags.add(".".join(map(str, parts)))
    return sorted(tags)


def test_resolution_matches_sort_and_index():
    rng = random.Random(4444)
    for _ in range(1000):
        tags = random_tags(rng)
        k = rng.randint(0, 4)
        ordered = sorted((VersionString.parse(t) for t in tags if t[0].isdigit()), reverse=True)
        majors = []
        for version in ordered:
            if version.major() not in majors:
                majors.append(version.major())

        selector = VersionSelector.latest_minus(k) if k else VersionSelector.latest()
        if k >= len(majors):
            with pytest.raises(InsufficientHistoryError):
                resolve_tag(CHROME, selector, tags)
            continue
        expected = next(v for v in ordered if v.major() == majors[k])
        assert resolve_tag(CHROME, selector, tags).tag == str(expected)


def test_latest_minus_one_skips_point_releases():
    tags = ["91.0", "91.0.1", "91.1", "90.0.5", "90.0"]

    assert resolve_tag(CHROME, VersionSelector.latest_minus(1), tags).tag == "90.0.5"


@pytest.mark.parametrize(
    "kind, channel, expected",
    [
        (BrowserKind.CHROME, "beta", "chrome_beta_93.0"),
        (BrowserKind.CHROME, "dev", "chrome_dev"),
        (BrowserKind.FIREFOX, "beta", "firefox_beta_90.0"),
    ],
)
def test_beta_and_dev_channels(kind, channel, expected):
    tags = ["chrome_beta", "chrome_beta_92.0", "chrome_beta_93.0", "chrome_dev", "firefox_beta_90.0"]

    image = resolve_tag(kind, parse_selector(channel), tags, "twilio/selenoid")

    assert image.tag == expected
    assert image.family is ImageFamily.BETA_DEV


def test_missing_channel():
    with pytest.raises(TagNotFoundError, match="no dev image for firefox"):
        resolve_tag(BrowserKind.FIREFOX, parse_selector("dev"), ["firefox_beta"])


def test_spec_validation():
    with pytest.raises(ValueError, match="not available as a container image"):
        DockerBrowserSpec(BrowserKind.SAFARI)
    with pytest.raises(ValueError, match="fixed version"):
        DockerBrowserSpec(CHROME, repository="acme/chrome")
    assert DockerBrowserSpec(CHROME, parse_selector("latest-1")).describe() == "chrome-in-docker:latest-1"


def test_screen_geometry():
    assert str(ScreenGeometry.parse("1280x720x24")) == "1280x720x24"
    with pytest.raises(ValueError, match="1920x1080x24"):
        ScreenGeometry.parse("1280x720")


@pytest.mark.parametrize(
    "base_url, host",
    [("unix:///var/run/docker.sock", "localhost"), ("tcp://10.0.0.5:2375", "10.0.0.5"), ("npipe:////./pipe/x", "localhost")],
)
def test_engine_host(base_url, host):
    assert engine_host(base_url) == host


# ---------------------------------------------------------------------------
# single container lifecycle
# ---------------------------------------------------------------------------


def test_start_browser_with_vnc(farm, engine, mock_server):
    handle = farm.start_browser(DockerBrowserSpec(CHROME, vnc=True))

    assert handle.state is ContainerState.READY
    assert handle.image == "selenoid/vnc_chrome:91.0.1"
    assert handle.driver_url == mock_server.url
    assert handle.vnc_url == "vnc://127.0.0.1:5901"
    assert engine.pulled == []
    assert engine.environments[handle.container_id] == {"SCREEN_RESOLUTION": "1920x1080x24", "ENABLE_VNC": "true"}


def test_firefox_driver_lives_under_wd_hub(config, mock_server):
    engine = ScriptedEngine(mock_server.port)
    farm = make_farm(config, engine)

    handle = farm.start_browser(DockerBrowserSpec(BrowserKind.FIREFOX))

    assert handle.driver_url == f"{mock_server.url}/wd/hub"


def test_missing_image_is_pulled(farm, engine):
    handle = farm.start_browser(DockerBrowserSpec(CHROME, VersionSelector.fixed("90.0")))

    assert engine.pulled == ["selenoid/chrome:90.0"]
    assert handle.image == "selenoid/chrome:90.0"


def test_pull_failure_creates_nothing(config, mock_server):
    engine = ScriptedEngine(mock_server.port, faults={"pull": {1}})
    farm = make_farm(config, engine)

    with pytest.raises(ImagePullError):
        farm.start_browser(DockerBrowserSpec(CHROME))
    assert engine.created == []


def test_readiness_timeout_removes_container(config, mock_server):
    engine = ScriptedEngine(mock_server.port, images={"selenoid/chrome:91.0.1"})
    farm = make_farm(config, engine, status_check=lambda url: False)

    with pytest.raises(ReadinessTimeoutError, match="not ready after 3s"):
        farm.start_browser(DockerBrowserSpec(CHROME))
    assert engine.created and engine.live == []


def test_start_failure_removes_container(config, mock_server):
    engine = ScriptedEngine(mock_server.port, faults={"start": {1}}, images={"selenoid/chrome:91.0.1"})
    farm = make_farm(config, engine)

    with pytest.raises(DockerFarmError, match="injected start failure"):
        farm.start_browser(DockerBrowserSpec(CHROME))
    assert engine.live == []


def test_stop_and_remove_keeps_recording_once(tmp_path, farm, engine):
    handle = farm.start_browser(DockerBrowserSpec(CHROME, recording=True))

    first = farm.stop_and_remove(handle, tmp_path, "call test")
    second = farm.stop_and_remove(handle, tmp_path, "call test")

    assert first == second == tmp_path / "call_test.mp4"
    assert first.read_bytes() == b"mp4-bytes"
    assert engine.environments[handle.container_id]["ENABLE_VIDEO"] == "true"
    assert engine.calls["stop"] == engine.calls["remove"] == 1
    assert handle.state is ContainerState.REMOVED
    assert handle.driver_url is None


def test_stop_failure_still_removes(config, mock_server):
    engine = ScriptedEngine(mock_server.port, faults={"stop": {1}}, images={"selenoid/chrome:91.0.1"})
    farm = make_farm(config, engine)
    handle = farm.start_browser(DockerBrowserSpec(CHROME))

    with pytest.raises(DockerFarmError, match="injected stop failure"):
        farm.stop_and_remove(handle)
    assert engine.removed == [handle.container_id]
    assert handle.state is ContainerState.REMOVED


def test_concurrent_removal_happens_once(farm, engine):
    handle = farm.start_browser(DockerBrowserSpec(CHROME))
    threads = [threading.Thread(target=farm.stop_and_remove, args=(handle,)) for _ in range(8)]

    for thread in threads:
        thread.start()
    for thread in threads:
        thread.join()

    assert engine.removed == [handle.container_id]


def test_handle_cannot_become_ready_twice():
    handle = ContainerHandle("c" * 64, "selenoid/chrome:91.0")
    handle.mark_ready("http://127.0.0.1:4444", None)

    with pytest.raises(DockerFarmError, match="from ready"):
        handle.mark_ready("http://127.0.0.1:4444", None)


def test_manifest_round_trip(tmp_path):
    handles = [
        ContainerHandle("a" * 64, "selenoid/chrome:91.0", driver_url="http://localhost:32768"),
        ContainerHandle("b" * 64, "selenoid/vnc_chrome:91.0", True, "http://localhost:32769", "vnc://localhost:32770"),
    ]

    loaded = load_manifest(save_manifest(handles, tmp_path / "run" / "fleet.json"))

    assert [h.to_manifest() for h in loaded] == [h.to_manifest() for h in handles]
    assert all(h.state is ContainerState.READY for h in loaded)


@pytest.mark.parametrize(
    "content, reason",
    [
        (None, "cannot read manifest"),
        ("{not json", "not valid JSON"),
        ('{"fleet": []}', "malformed"),
        ('{"containers": ["abc"]}', "malformed"),
        ('{"containers": [{"image": "selenoid/chrome:91.0"}]}', "malformed"),
    ],
)
def test_bad_manifest_raises_manifest_error(tmp_path, content, reason):
    path = tmp_path / "fleet.json"
    if content is not None:
        path.write_text(content, encoding="utf-8")

    with pytest.raises(ManifestError, match=reason):
        load_manifest(path)



# ---------------------------------------------------------------------------
# fleets
# ---------------------------------------------------------------------------


def test_fleet_starts_every_member(farm, engine):
    handles = farm.start_fleet(DockerBrowserSpec(CHROME), 5)

    assert len({h.container_id for h in handles}) == 5
    assert len(engine.live) == 5
    assert farm.registry.requests == ["selenoid/chrome"]


@pytest.mark.parametrize("faults", [{"create": {3}}, {"start": {2, 5}}])
def test_fleet_failure_rolls_back_everything(config, mock_server, faults):
    engine = ScriptedEngine(mock_server.port, faults=faults, images={"selenoid/chrome:91.0.1"})
    farm = make_farm(config, engine, **{"sel.jup.docker.parallelism": 3})

    with pytest.raises(FleetStartError) as excinfo:
        farm.start_fleet(DockerBrowserSpec(CHROME), 6)

    assert len(excinfo.value.causes) == sum(len(calls) for calls in faults.values())
    assert engine.live == []


def test_fleet_size_must_be_positive(farm):
    with pytest.raises(ValueError):
        farm.start_fleet(DockerBrowserSpec(CHROME), 0)


def test_unavailable_engine(config):
    engine = Mock(ping=Mock(side_effect=RuntimeError("socket missing")))

    assert make_farm(config, engine).available() is False


# ---------------------------------------------------------------------------
# registry client
# ---------------------------------------------------------------------------


def page(names, next_url=None):
    response = Mock()
    response.json.return_value = {"results": [{"name": n} for n in names], "next": next_url}
    return response


def test_registry_follows_next_links():
    session = Mock()
    session.get.side_effect = [page(["91.0", "90.0"], "https://hub.example.test/page2"), page(["latest"])]

    tags = RegistryClient("https://hub.example.test/v2/", session).list_tags("selenoid/chrome")

    assert tags == ["91.0", "90.0", "latest"]
    assert session.get.call_args_list[0].args[0] == (
        "https://hub.example.test/v2/repositories/selenoid/chrome/tags?page_size=100"
    )


def test_registry_errors_are_wrapped(monkeypatch):
    monkeypatch.setattr("browserkit.helpers.time.sleep", lambda seconds: None)
    session = Mock()
    session.get.side_effect = requests.ConnectionError("no route")

    with pytest.raises(DockerFarmError, match="cannot list tags"):
        RegistryClient("https://hub.example.test/v2", session).list_tags("selenoid/chrome")
    assert session.get.call_count == 3
