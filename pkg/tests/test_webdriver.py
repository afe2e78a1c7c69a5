import base64
import json
from datetime import datetime, timezone

import pytest

from browserkit.errors import (
    InvalidArgumentError,
    InvalidSessionIdError,
    JavascriptError,
    NoSuchElementError,
    ScreenshotDecodeError,
    SessionNotCreatedError,
    WebDriverConnectionError,
    WebDriverError,
)
from browserkit.mock_server import ELEMENT_KEY, ONE_PIXEL_PNG, ScriptError
from browserkit.versions import BrowserKind
from browserkit.webdriver import (
    Capabilities,
    Locator,
    LocatorStrategy,
    Provenance,
    ScreenshotEncoding,
    WebDriverClient,
)


def fixed_clock():
    return datetime(2021, 6, 1, 12, 0, 0, tzinfo=timezone.utc)


@pytest.fixture
def session(client, mock_server):
    mock_server.session_ids.append("s-1")
    return client.new_session(mock_server.url, Capabilities.for_kind(BrowserKind.CHROME))


# ---------------------------------------------------------------------------
# capabilities
# ---------------------------------------------------------------------------


def test_capabilities_json_is_canonical():
    first = Capabilities("chrome", "91", vendor_options={"goog:chromeOptions": {"args": ["--headless"]}, "se:name": "x"})
    second = Capabilities("chrome", "91", vendor_options={"se:name": "x", "goog:chromeOptions": {"args": ["--headless"]}})

    assert first.to_json() == second.to_json()
    assert json.loads(first.to_json())["capabilities"]["alwaysMatch"]["browserVersion"] == "91"


def test_vendor_options_must_be_namespaced():
    with pytest.raises(ValueError, match="namespaced"):
        Capabilities("chrome", vendor_options={"args": []})


def test_capabilities_round_trip_through_w3c():
    caps = Capabilities("firefox", "89.0", "linux", {"moz:firefoxOptions": {"prefs": {"a": 1}}})

    assert Capabilities.from_w3c(caps.always_match()) == caps


@pytest.mark.parametrize(
    "kind, expected",
    [(BrowserKind.EDGE, "MicrosoftEdge"), (BrowserKind.CHROMIUM, "chrome"), (BrowserKind.IEXPLORER, "internet explorer")],
)
def test_w3c_browser_names(kind, expected):
    assert Capabilities.for_kind(kind).browser_name == expected


# ---------------------------------------------------------------------------
# recorded exchanges against the mock server
# ---------------------------------------------------------------------------


def test_new_session_posts_always_match(client, mock_server):
    caps = Capabilities("chrome", vendor_options={"goog:chromeOptions": {"args": ["--headless"]}})

    handle = client.new_session(mock_server.url, caps, Provenance.LOCAL)

    [request] = mock_server.new_session_requests()
    assert request.body == {"capabilities": {"alwaysMatch": caps.always_match()}}
    assert handle.session_id in mock_server.sessions
    assert handle.capabilities_echo["browserName"] == "chrome"
    assert handle.provenance is Provenance.LOCAL


def test_status_and_online_probe(client, mock_server):
    assert client.status(mock_server.url)["ready"] is True
    assert client.is_online(mock_server.url)
    assert not client.is_online("http://127.0.0.1:9")


def test_navigate_then_read_url_and_title(client, mock_server, session):
    client.navigate(session, "https://example.test/room")

    assert client.current_url(session) == "https://example.test/room"
    assert client.title(session) == "Mock page"
    assert mock_server.requests_for("POST", "/session/s-1/url")[0].body == {"url": "https://example.test/room"}


def test_find_click_type_and_read_text(client, mock_server, session):
    mock_server.dom[("css selector", "#join")] = "Join"

    element = client.find_element(session, Locator.css("#join"))
    client.click(element)
    client.click(element)
    client.send_keys(element, "alice")

    assert client.text(element) == "Join"
    assert mock_server.clicks("s-1", element.element_id) == 2
    assert mock_server.sessions["s-1"].elements[element.element_id].typed == ["alice"]


def test_locator_strategies_use_w3c_names(client, mock_server, session):
    mock_server.dom[("link text", "Next")] = "Next"

    client.find_element(session, Locator(LocatorStrategy.LINK_TEXT, "Next"))

    assert mock_server.requests_for("POST", "/session/s-1/element")[0].body == {"using": "link text", "value": "Next"}


def test_execute_script_returns_value(client, mock_server, session):
    mock_server.scripts["return window.stats"] = lambda args: {"pc-1": []}

    assert client.execute_script(session, "return arguments[1]", ["a", 42]) == 42
    assert client.execute_script(session, "return 2 * (3 + 4)") == 14
    assert client.execute_script(session, "return window.stats") == {"pc-1": []}


def test_screenshot_base64(client, session):
    shot = client.screenshot(session)

    assert shot.encoding is ScreenshotEncoding.BASE64
    assert shot.payload == ONE_PIXEL_PNG


def test_screenshot_png_file(tmp_path, mock_server, session):
    client = WebDriverClient(2, 5, clock=fixed_clock)

    shot = client.screenshot(session, ScreenshotEncoding.PNG_FILE, tmp_path)

    assert shot.payload == str(tmp_path / "s-1-20210601T120000000000Z.png")
    assert (tmp_path / "s-1-20210601T120000000000Z.png").read_bytes() == base64.b64decode(ONE_PIXEL_PNG)


def test_delete_session_is_idempotent(client, mock_server, session):
    assert client.delete_session(session) is True
    assert client.delete_session(session) is True

    assert len(mock_server.requests_for("DELETE")) == 1
    assert "s-1" not in mock_server.sessions


def test_replayed_exchange_is_decoded(client, mock_server, session):
    mock_server.queue_response(200, {"value": "https://recorded.example.test/"})

    assert client.current_url(session) == "https://recorded.example.test/"
    assert mock_server.requests[-1].path == "/session/s-1/url"


# ---------------------------------------------------------------------------
# error mapping
# ---------------------------------------------------------------------------


def test_no_such_element_carries_locator(client, session):
    with pytest.raises(NoSuchElementError) as excinfo:
        client.find_element(session, Locator.xpath("//button[@id='leave']"))

    assert excinfo.value.error == "no such element"
    assert "xpath=//button[@id='leave']" in str(excinfo.value)


def test_javascript_error_is_mapped(client, mock_server, session):
    def explode(args):
        raise ScriptError("ReferenceError: foo is not defined")

    mock_server.scripts["return foo()"] = explode

    with pytest.raises(JavascriptError, match="foo is not defined"):
        client.execute_script(session, "return foo()")


def test_invalid_session_marks_handle_dead(client, mock_server, session):
    del mock_server.sessions["s-1"]

    with pytest.raises(InvalidSessionIdError):
        client.title(session)
    assert session.live is False


def test_session_not_created(client, mock_server):
    mock_server.reject_new_session = "Chrome version must be between 90 and 91"

    with pytest.raises(SessionNotCreatedError, match="between 90 and 91"):
        client.new_session(mock_server.url, Capabilities("chrome"))


def test_new_session_without_id_is_rejected(client, mock_server):
    mock_server.queue_response(200, {"value": {"capabilities": {}}})

    with pytest.raises(SessionNotCreatedError, match="no sessionId"):
        client.new_session(mock_server.url, Capabilities("chrome"))


def test_unknown_error_code_maps_to_base_error(client, mock_server, session):
    mock_server.queue_response(500, {"value": {"error": "unexpected alert open", "message": "alert"}})

    with pytest.raises(WebDriverError) as excinfo:
        client.title(session)
    assert excinfo.value.error == "unexpected alert open"


def test_malformed_body_is_an_error(client, mock_server, session):
    mock_server.queue_response(200, ["no", "value"])

    with pytest.raises(WebDriverError, match="malformed response"):
        client.title(session)


def test_invalid_base64_screenshot(tmp_path, client, mock_server, session):
    mock_server.screenshot_b64 = "%%% not base64 %%%"

    with pytest.raises(ScreenshotDecodeError):
        client.screenshot(session, ScreenshotEncoding.PNG_FILE, tmp_path)
    assert list(tmp_path.iterdir()) == []


def test_non_png_screenshot(tmp_path, client, mock_server, session):
    mock_server.screenshot_b64 = base64.b64encode(b"GIF89a....").decode()

    with pytest.raises(ScreenshotDecodeError, match="not a PNG"):
        client.screenshot(session, ScreenshotEncoding.PNG_FILE, tmp_path)


def test_connection_refused(client):
    with pytest.raises(WebDriverConnectionError):
        client.new_session("http://127.0.0.1:9", Capabilities("chrome"))


# ---------------------------------------------------------------------------
# nothing reaches the wire
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("url", ["", "example.test", "http://", "ftp:/x", "not a url"])
def test_malformed_url_is_rejected_locally(client, mock_server, session, url):
    before = len(mock_server.requests)

    with pytest.raises(InvalidArgumentError):
        client.navigate(session, url)
    assert len(mock_server.requests) == before


def test_dead_handle_sends_nothing(client, mock_server, session):
    client.delete_session(session)
    before = len(mock_server.requests)

    with pytest.raises(InvalidSessionIdError):
        client.navigate(session, "https://example.test/")
    assert len(mock_server.requests) == before


def test_failed_delete_still_kills_handle(client, mock_server, session):
    mock_server.fail_delete = True

    assert client.delete_session(session) is False
    assert session.live is False


def test_element_reference_is_read_from_w3c_key(client, mock_server, session):
    mock_server.dom[("tag name", "video")] = ""
    mock_server.queue_response(200, {"value": {ELEMENT_KEY: "recorded-element"}})

    element = client.find_element(session, Locator(LocatorStrategy.TAG_NAME, "video"))

    assert element.element_id == "recorded-element"
    assert element.locator == Locator(LocatorStrategy.TAG_NAME, "video")
