"""Command-line interface: ``python -m browserkit <verb> ...``.

Exit codes: 0 success, 1 runtime or test failure, 2 usage or validation error.
``run`` exits with the number of failed tests, capped at 125.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Mapping

import pandas as pd

from browserkit.config import ConfigBuilder, ConfigStore, parse_assignment, registered_keys
from browserkit.docker_farm import (
    DockerBrowserSpec,
    DockerFarm,
    ScreenGeometry,
    load_manifest,
    parse_selector,
    save_manifest,
)
from browserkit.drivers import DriverManager, mismatch_diagnosis
from browserkit.errors import BrowserKitError, ConfigError, DockerFarmError, PlanError, ScenarioError
from browserkit.harness import Harness, TestPlan, load_plan, summary_table, write_report
from browserkit.helpers import sanitize_filename
from browserkit.loadtest import LoadSettings, run_load
from browserkit.rtc_metrics import (
    analyze,
    export_csv,
    export_svg,
    first_joined,
    import_dump,
    import_webrtc_internals,
    qoe_flags,
    qoe_table,
)
from browserkit.scenario import expand_template, load_scenario
from browserkit.versions import BrowserKind, VersionString

logger = logging.getLogger(__name__)

MAX_EXIT_FAILURES = 125
MANIFEST_NAME = "fleet.json"
_MAJOR_TRACKING_KINDS = (BrowserKind.CHROME, BrowserKind.CHROMIUM, BrowserKind.EDGE)


def configure_logging(verbose: bool = False) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%H:%M:%S",
    )


# Factories are module-level so tests can swap in fakes.


def build_drivers(config: ConfigStore) -> DriverManager:
    return DriverManager(config)


def build_farm(config: ConfigStore) -> DockerFarm:
    return DockerFarm(config)


def build_harness(config: ConfigStore) -> Harness:
    return Harness(config, drivers=build_drivers(config), farm=build_farm(config))


# ---------------------------------------------------------------------------
# Arguments
# ---------------------------------------------------------------------------


def _kind(text: str) -> BrowserKind:
    try:
        return BrowserKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _common_flags() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--set", dest="assignments", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS)
    common.add_argument("--config", dest="config_file", type=Path, default=argparse.SUPPRESS)
    common.add_argument("--out", dest="out_dir", type=Path, default=argparse.SUPPRESS)
    common.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS)
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags()
    parser = argparse.ArgumentParser(
        prog="browserkit",
        description="Browser drivers, W3C sessions, dockerized browsers and WebRTC metrics.",
        parents=[common],
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    resolve = verbs.add_parser("resolve-driver", parents=[common], help="detect, resolve and cache a driver")
    resolve.add_argument("--browser", type=_kind, required=True)
    resolve.add_argument("--browser-version")
    resolve.add_argument("--metadata", help="driver metadata document (path or URL)")
    resolve.add_argument("--dry-run", action="store_true", help="print the resolved version only")

    run = verbs.add_parser("run", parents=[common], help="run a plan file")
    run.add_argument("--plan", type=Path, required=True)
    run.add_argument("--scenario", type=Path)

    browser = verbs.add_parser("browser", parents=[common], help="start or stop dockerized browsers")
    actions = browser.add_subparsers(dest="action", required=True)
    start = actions.add_parser("start", parents=[common])
    start.add_argument("--kind", type=_kind, required=True)
    start.add_argument("--version", default="latest")
    start.add_argument("--count", type=_positive, default=1)
    start.add_argument("--vnc", action="store_true")
    start.add_argument("--record", action="store_true")
    stop = actions.add_parser("stop", parents=[common])
    stop.add_argument("--manifest", type=Path)

    analyze_cmd = verbs.add_parser("analyze", parents=[common], help="compute WebRTC metrics from a stats dump")
    analyze_cmd.add_argument("--dump", type=Path, required=True)
    analyze_cmd.add_argument("--threshold-ms", type=float, help="jitter delay QoE threshold")
    analyze_cmd.add_argument("--freeze-threshold-ms", type=float)
    analyze_cmd.add_argument("--csv", action="store_true")
    analyze_cmd.add_argument("--svg", action="store_true")
    analyze_cmd.add_argument("--all-connections", action="store_true")
    analyze_cmd.add_argument("--webrtc-internals", action="store_true", help="input is a raw webrtc-internals dump")

    verbs.add_parser("keys", parents=[common], help="list configuration keys")

    load = verbs.add_parser("load", parents=[common], help="WebRTC load test against a room URL")
    load.add_argument("--room", required=True)
    load.add_argument("--participants", type=_positive)
    load.add_argument("--join-script", type=Path, help="JavaScript run in each browser to enter the room")
    return parser


def build_config(args: argparse.Namespace, environ: Mapping[str, str] | None = None) -> ConfigStore:
    builder = ConfigBuilder()
    if getattr(args, "config_file", None):
        builder.load_properties_file(args.config_file)
    for assignment in getattr(args, "assignments", []):
        builder.set_property(*parse_assignment(assignment))
    if getattr(args, "out_dir", None):
        builder.set("sel.jup.output.folder", str(args.out_dir))
    return builder.build(environ)


# ---------------------------------------------------------------------------
# Verbs
# ---------------------------------------------------------------------------


def cmd_resolve_driver(args: argparse.Namespace, config: ConfigStore) -> int:
    if args.metadata:
        config = config.with_api({"sel.jup.driver.metadata.url": args.metadata})
    drivers = build_drivers(config)
    kind = args.browser
    try:
        browser_version = VersionString.parse(args.browser_version) if args.browser_version else None
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    browser_version = browser_version or drivers.detect_browser_version(kind)

    driver_version = drivers.resolve(kind, browser_version)
    if kind in _MAJOR_TRACKING_KINDS and browser_version and driver_version.major() != browser_version.major():
        logger.warning(mismatch_diagnosis(browser_version.major(), driver_version.major(), kind).message)
    if args.dry_run:
        print(driver_version)
        return 0
    artifact = drivers.ensure(kind, browser_version)
    print(artifact.cache_path)
    return 0


def _plan_for(args: argparse.Namespace, config: ConfigStore) -> TestPlan:
    plan, templates = load_plan(args.plan, config)
    if args.scenario is None:
        if templates:
            raise PlanError(f"test {templates[0].name!r} declares no browsers; pass --scenario")
        return plan
    scenario = load_scenario(args.scenario)
    if not templates:
        logger.warning("--scenario given but the plan has no browser-less template tests")
    expanded = [instance for template in templates for instance in expand_template(template, scenario, config)]
    return TestPlan(plan.tests + tuple(expanded), plan.session_mode, plan.skip_conditions)


def cmd_run(args: argparse.Namespace, config: ConfigStore) -> int:
    plan = _plan_for(args, config)
    harness = build_harness(config)
    outcomes = harness.run_plan(plan)
    report = write_report(outcomes, config.get("sel.jup.output.folder"))
    print(summary_table(outcomes))
    print(f"\nreport: {report}")
    failed = sum(1 for outcome in outcomes if outcome.status.value == "failed")
    return min(failed, MAX_EXIT_FAILURES)


def _manifest_path(args: argparse.Namespace, config: ConfigStore) -> Path:
    return getattr(args, "manifest", None) or Path(config.get("sel.jup.output.folder")) / MANIFEST_NAME


def cmd_browser(args: argparse.Namespace, config: ConfigStore) -> int:
    farm = build_farm(config)
    if not farm.available():
        print(
            f"docker_available is false: no container engine answers at {config.get('sel.jup.docker.host')}",
            file=sys.stderr,
        )
        return 1

    if args.action == "stop":
        return _stop_fleet(farm, _manifest_path(args, config), config)

    try:
        selector = parse_selector(args.version)
        spec = DockerBrowserSpec(
            args.kind,
            selector,
            vnc=args.vnc or config.get("sel.jup.vnc"),
            recording=args.record or config.get("sel.jup.recording"),
            screen=ScreenGeometry.parse(config.get("sel.jup.docker.screen")),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None

    handles = farm.start_fleet(spec, args.count)
    manifest = save_manifest(handles, _manifest_path(args, config))
    for handle in handles:
        print(f"{handle.container_id[:12]}  driver={handle.driver_url}  vnc={handle.vnc_url or '-'}")
    print(f"manifest: {manifest}")
    return 0


def _stop_fleet(farm: DockerFarm, manifest: Path, config: ConfigStore) -> int:
    if not manifest.exists():
        raise ConfigError(f"no fleet manifest at {manifest}")
    out_dir = Path(config.get("sel.jup.output.folder"))
    failures = 0
    for handle in load_manifest(manifest):
        try:
            recording = farm.stop_and_remove(handle, out_dir if handle.recording else None)
        except DockerFarmError as exc:
            logger.error(f"Stopping {handle.container_id[:12]} failed: {exc}")
            failures += 1
            continue
        suffix = f"  recording={recording}" if recording else ""
        print(f"{handle.container_id[:12]}  removed{suffix}")
    if failures:
        return 1
    manifest.unlink()
    return 0


def cmd_analyze(args: argparse.Namespace, config: ConfigStore) -> int:
    jitter_threshold = args.threshold_ms if args.threshold_ms is not None else config.get("sel.jup.jitter.threshold.ms")
    freeze_threshold = (
        args.freeze_threshold_ms if args.freeze_threshold_ms is not None else config.get("sel.jup.freeze.threshold.ms")
    )
    if args.webrtc_internals:
        timelines = import_webrtc_internals(args.dump)
        selected = first_joined(timelines)
    else:
        imported = import_dump(args.dump)
        timelines, selected = list(imported.timelines), imported.first_joined
    connections = timelines if args.all_connections else [selected]

    # Everything is computed before anything is written.
    results = [(timeline, analyze(timeline, freeze_threshold)) for timeline in connections]
    out_dir = Path(config.get("sel.jup.output.folder"))
    csv = args.csv or not args.svg
    for timeline, series in results:
        stem = sanitize_filename(timeline.connection_id)
        for metric, item in series.items():
            if csv:
                export_csv(item, out_dir / f"{stem}-{metric.value}.csv")
            if args.svg:
                export_svg(item, out_dir / f"{stem}-{metric.value}.svg")
            logger.info(f"{timeline.connection_id} {metric.value}: final {item.final:.2f}")

    report = qoe_flags([s for _, series in results for s in series.values()], jitter_threshold)
    rows = [
        {"connection": f.connection_id, "metric": f.metric.value, "value": f.value, "threshold": f.threshold, "flagged": f.flagged}
        for f in report
    ]
    pd.DataFrame(rows, columns=["connection", "metric", "value", "threshold", "flagged"]).to_csv(
        out_dir / "qoe-flags.csv", index=False
    )
    print(qoe_table(report))
    return 0


def cmd_keys(args: argparse.Namespace, config: ConfigStore) -> int:
    df = pd.DataFrame(
        [
            {"key": key.label, "env": key.env_name, "default": str(default), "description": doc}
            for key, default, doc in registered_keys()
        ]
    )
    print(df.to_string(index=False))
    return 0


def cmd_load(args: argparse.Namespace, config: ConfigStore) -> int:
    join_script = args.join_script.read_text(encoding="utf-8") if args.join_script else None
    try:
        settings = LoadSettings.from_config(config, args.room, args.participants, join_script)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    dump = run_load(build_harness(config), settings)
    print(f"stats dump: {dump}")
    return 0


_HANDLERS = {
    "resolve-driver": cmd_resolve_driver,
    "run": cmd_run,
    "browser": cmd_browser,
    "analyze": cmd_analyze,
    "keys": cmd_keys,
    "load": cmd_load,
}


def main(argv: list[str] | None = None, environ: Mapping[str, str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    configure_logging(getattr(args, "verbose", False))

    try:
        config = build_config(args, environ)
        return _HANDLERS[args.verb](args, config)
    except (ConfigError, PlanError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BrowserKitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
