"""Browser scenarios: repeat one test template for every browser listed in a JSON document.

Document layout::

    {
      "browsers": [
        [{"type": "chrome-in-docker", "version": "latest"}],
        [{"type": "chrome-in-docker", "version": "latest-1"}],
        [{"type": "chrome-in-docker", "version": "beta"}]
      ]
    }

Each item of the outer list is one invocation of the template; the inner list
holds the browsers that invocation needs, in fixture order.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from browserkit.config import ConfigStore
from browserkit.docker_farm import DOCKER_KINDS
from browserkit.errors import ScenarioError
from browserkit.harness import DOCKER_SUFFIX, BrowserRequest, PlanTemplate, TestCase, request_for_type
from browserkit.versions import BrowserKind

SCENARIO_SCHEMA = 1
_ENTRY_KEYS = {"type", "version"}


class ScenarioSource(str, Enum):
    JSON_FILE = "json-file"
    PROGRAMMATIC = "programmatic"


@dataclass(frozen=True)
class ScenarioBrowser:
    type: str
    version: str = "latest"

    def request(self, config: ConfigStore | None = None) -> BrowserRequest:
        return request_for_type(self.type, self.version, config=config)

    @property
    def label(self) -> str:
        return f"{self.type}-{self.version}"


@dataclass(frozen=True)
class BrowserScenario:
    entries: tuple[tuple[ScenarioBrowser, ...], ...]
    source: ScenarioSource = field(default=ScenarioSource.PROGRAMMATIC, compare=False)

    def __post_init__(self) -> None:
        if not self.entries:
            raise ScenarioError("$.browsers", "a scenario needs at least one entry")
        for i, invocation in enumerate(self.entries):
            if not invocation:
                raise ScenarioError(f"$.browsers[{i}]", "an entry needs at least one browser")

    def __len__(self) -> int:
        return len(self.entries)


def _browser(item: Any, path: str) -> ScenarioBrowser:
    if not isinstance(item, dict):
        raise ScenarioError(path, "expected an object with type and version")
    unknown = set(item) - _ENTRY_KEYS
    if unknown:
        raise ScenarioError(f"{path}.{sorted(unknown)[0]}", "unknown field")
    if not isinstance(item.get("type"), str) or not item["type"]:
        raise ScenarioError(f"{path}.type", "expected a non-empty string")
    version = item.get("version", "latest")
    if not isinstance(version, str):
        raise ScenarioError(f"{path}.version", "expected a string")
    browser_type = item["type"]
    in_docker = browser_type.endswith(DOCKER_SUFFIX)
    try:
        kind = BrowserKind.parse(browser_type[: -len(DOCKER_SUFFIX)] if in_docker else browser_type)
    except ValueError as exc:
        raise ScenarioError(f"{path}.type", str(exc)) from None
    if in_docker and kind not in DOCKER_KINDS:
        raise ScenarioError(f"{path}.type", f"{kind.value} is not available in docker")

    browser = ScenarioBrowser(browser_type, version)
    try:
        browser.request()
    except ValueError as exc:
        raise ScenarioError(f"{path}.version", str(exc)) from None
    return browser


def parse_scenario(document: str, source: ScenarioSource = ScenarioSource.PROGRAMMATIC) -> BrowserScenario:
    try:
        data = json.loads(document)
    except ValueError as exc:
        raise ScenarioError("$", f"malformed JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ScenarioError("$", "expected an object")
    if data.get("schema", SCENARIO_SCHEMA) != SCENARIO_SCHEMA:
        raise ScenarioError("$.schema", f"unsupported schema {data['schema']!r}")
    browsers = data.get("browsers")
    if not isinstance(browsers, list) or not browsers:
        raise ScenarioError("$.browsers", "expected a non-empty list")

    entries = []
    for i, invocation in enumerate(browsers):
        path = f"$.browsers[{i}]"
        if isinstance(invocation, dict):
            invocation = [invocation]
        if not isinstance(invocation, list) or not invocation:
            raise ScenarioError(path, "expected a non-empty list of browsers")
        entries.append(tuple(_browser(item, f"{path}[{j}]") for j, item in enumerate(invocation)))
    return BrowserScenario(tuple(entries), source)


def load_scenario(path: Path) -> BrowserScenario:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(str(path), str(exc)) from None
    return parse_scenario(text, ScenarioSource.JSON_FILE)


def serialize_scenario(scenario: BrowserScenario) -> str:
    """Canonical form: two-space indent, sorted keys, version always present."""
    document = {
        "browsers": [
            [{"type": browser.type, "version": browser.version} for browser in invocation]
            for invocation in scenario.entries
        ]
    }
    return json.dumps(document, indent=2, sort_keys=True)


def expand_template(
    template: PlanTemplate,
    scenario: BrowserScenario,
    config: ConfigStore | None = None,
) -> list[TestCase]:
    """One test per scenario entry, named ``<template>[<type>-<version>]`` and unique."""
    seen: Counter[str] = Counter()
    instances = []
    for invocation in scenario.entries:
        name = f"{template.name}[{'+'.join(browser.label for browser in invocation)}]"
        seen[name] += 1
        if seen[name] > 1:
            name = f"{name}#{seen[name]}"
        requests = tuple(browser.request(config) for browser in invocation)
        instances.append(TestCase(name, requests, template.body, template.conditions))
    return instances
