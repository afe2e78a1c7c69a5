"""WebRTC load test: one monitored browser plus N dockerized participants joining a room.

The monitor session gets an in-page collector that wraps ``RTCPeerConnection``
and samples ``getStats()`` for every connection. Participants enter the room
one at a time; after the session time the collected samples are written as a
stats dump that ``rtc_metrics.import_dump`` reads.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

from browserkit.config import ConfigStore
from browserkit.errors import DataIntegrityError
from browserkit.harness import BrowserOptions, BrowserRequest, Harness, LocalTarget, ResourceLedger, request_for_type
from browserkit.helpers import utc_timestamp
from browserkit.rtc_metrics import PeerConnectionTimeline, StatSample, write_dump
from browserkit.versions import BrowserKind
from browserkit.webdriver import SessionHandle, WebDriverClient

logger = logging.getLogger(__name__)

FAKE_MEDIA_ARGUMENTS = ("--use-fake-ui-for-media-stream", "--use-fake-device-for-media-stream")

COLLECTOR_SCRIPT = """
return (function (samplingMs) {
  if (window.__browserkit) { return true; }
  var state = {pcs: [], samples: {}, start: performance.now()};
  window.__browserkit = state;
  var Native = window.RTCPeerConnection;
  var Wrapped = function (config, constraints) {
    var pc = new Native(config, constraints);
    var id = 'pc-' + state.pcs.length;
    state.pcs.push({id: id, pc: pc});
    state.samples[id] = [];
    return pc;
  };
  Wrapped.prototype = Native.prototype;
  window.RTCPeerConnection = Wrapped;
  setInterval(function () {
    var t = (performance.now() - state.start) / 1000;
    state.pcs.forEach(function (entry) {
      entry.pc.getStats().then(function (report) {
        var taken = false;
        report.forEach(function (stat) {
          if (taken || stat.type !== 'inbound-rtp' || stat.kind !== 'video') { return; }
          taken = true;
          state.samples[entry.id].push({
            t: t,
            bytesReceived: stat.bytesReceived || 0,
            packetsReceived: stat.packetsReceived || 0,
            packetsLost: stat.packetsLost || 0,
            jitterBufferDelay: stat.jitterBufferDelay || 0,
            jitterBufferEmittedCount: stat.jitterBufferEmittedCount || 0
          });
        });
      });
    });
  }, samplingMs);
  return true;
})(arguments[0]);
"""

READ_STATS_SCRIPT = """
var state = window.__browserkit;
if (!state) { return []; }
return Object.keys(state.samples).map(function (id) { return {id: id, samples: state.samples[id]}; });
"""


@dataclass(frozen=True)
class LoadSettings:
    room_url: str
    participants: int = 9
    rate_sec: float = 5
    session_sec: float = 60
    sampling_sec: float = 1
    join_script: str | None = None
    out_dir: Path = Path(".")

    def __post_init__(self) -> None:
        if self.participants < 1:
            raise ValueError("a load test needs at least one participant")
        if self.sampling_sec <= 0:
            raise ValueError("sampling period must be positive")

    @classmethod
    def from_config(
        cls,
        config: ConfigStore,
        room_url: str,
        participants: int | None = None,
        join_script: str | None = None,
    ) -> "LoadSettings":
        return cls(
            room_url=room_url,
            participants=participants or config.get("sel.jup.load.participants"),
            rate_sec=config.get("sel.jup.load.rate.sec"),
            session_sec=config.get("sel.jup.load.session.sec"),
            sampling_sec=config.get("sel.jup.load.sampling.sec"),
            join_script=join_script,
            out_dir=config.get("sel.jup.output.folder"),
        )


def timelines_from_collector(raw: Any, sampling_sec: float = 1.0) -> list[PeerConnectionTimeline]:
    """Collector output -> timelines; expected packets are received plus lost (base sequence 1)."""
    timelines = []
    for connection in raw or []:
        samples: list[StatSample] = []
        for row in connection.get("samples", []):
            sample = StatSample(
                t=float(row["t"]),
                bytes_received=int(row.get("bytesReceived", 0)),
                highest_seq=int(row.get("packetsReceived", 0)) + max(int(row.get("packetsLost", 0)), 0),
                base_seq=1,
                packets_received=int(row.get("packetsReceived", 0)),
                jitter_buffer_delay=float(row.get("jitterBufferDelay", 0.0)),
                jitter_buffer_emitted=int(row.get("jitterBufferEmittedCount", 0)),
            )
            if samples and sample.t <= samples[-1].t:
                samples[-1] = sample
            else:
                samples.append(sample)
        if samples:
            timelines.append(PeerConnectionTimeline(str(connection.get("id")), tuple(samples), sampling_sec))
    return timelines


def run_webrtc_load(
    settings: LoadSettings,
    monitor: SessionHandle,
    participants: list[SessionHandle],
    client: WebDriverClient,
    sleep: Callable[[float], None] = time.sleep,
) -> Path:
    """Drive the room and return the path of the written stats dump."""
    client.navigate(monitor, settings.room_url)
    client.execute_script(monitor, COLLECTOR_SCRIPT, [int(settings.sampling_sec * 1000)])
    if settings.join_script:
        client.execute_script(monitor, settings.join_script)
    logger.info(f"Monitor session {monitor.session_id} joined {settings.room_url}")

    for index, participant in enumerate(participants):
        if index:
            sleep(settings.rate_sec)
        client.navigate(participant, settings.room_url)
        if settings.join_script:
            client.execute_script(participant, settings.join_script)
        logger.info(f"Participant {index + 1}/{len(participants)} joined")

    sleep(settings.session_sec)
    timelines = timelines_from_collector(client.execute_script(monitor, READ_STATS_SCRIPT), settings.sampling_sec)
    if not timelines:
        raise DataIntegrityError("the monitor browser collected no WebRTC stats")
    target = write_dump(timelines, Path(settings.out_dir) / f"webrtc-stats-{utc_timestamp()}.json")
    logger.info(f"Stats of {len(timelines)} connection(s) written to {target}")
    return target


def run_load(
    harness: Harness,
    settings: LoadSettings,
    monitor_request: BrowserRequest | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> Path:
    """Resolve the monitor and the participant fleet through the harness, run, then release everything."""
    options = BrowserOptions(arguments=FAKE_MEDIA_ARGUMENTS)
    monitor_request = monitor_request or BrowserRequest(LocalTarget(BrowserKind.CHROME), options=options)
    fleet_request = request_for_type(
        "chrome-in-docker", "latest", count=settings.participants, options=options, config=harness.config
    )
    ledger = ResourceLedger()
    try:
        monitor = harness.resolve_fixture(monitor_request, ledger)[0]
        participants = harness.resolve_fixture(fleet_request, ledger)
        return run_webrtc_load(settings, monitor, participants, harness.client, sleep)
    finally:
        harness.dispose(ledger, "load")
