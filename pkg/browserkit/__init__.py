"""browserkit: browser drivers, W3C sessions, dockerized browsers and WebRTC metrics for test automation."""

from browserkit.config import ConfigBuilder, ConfigStore, default_store, env_name
from browserkit.docker_farm import DockerBrowserSpec, DockerFarm, parse_selector, resolve_tag
from browserkit.drivers import DriverManager, ensure_driver, resolve_driver_version
from browserkit.errors import BrowserKitError
from browserkit.harness import BrowserOptions, BrowserRequest, Condition, Harness, TestCase, TestPlan
from browserkit.scenario import expand_template, parse_scenario
from browserkit.versions import BrowserKind, VersionString
from browserkit.webdriver import Capabilities, Locator, WebDriverClient

__version__ = "0.1.0"

__all__ = [
    "BrowserKind",
    "BrowserKitError",
    "BrowserOptions",
    "BrowserRequest",
    "Capabilities",
    "Condition",
    "ConfigBuilder",
    "ConfigStore",
    "DockerBrowserSpec",
    "DockerFarm",
    "DriverManager",
    "Harness",
    "Locator",
    "TestCase",
    "TestPlan",
    "VersionString",
    "WebDriverClient",
    "default_store",
    "ensure_driver",
    "env_name",
    "expand_template",
    "parse_scenario",
    "parse_selector",
    "resolve_driver_version",
    "resolve_tag",
]
