"""WebRTC performance indicators from sampled peer-connection stats.

Four series are computed per connection, each as (t, value) points:

* bit rate: received bytes per second, in KBps
* jitter delay: jitter-buffer delay normalized by emitted packets, in ms
* freeze count: cumulative number of inter-frame gaps at or above a threshold
* packet loss: cumulative lost packets, expected minus received (RFC 3550)

An RFC 3550 inter-arrival jitter estimator is available as a fifth series
for traces that carry RTP timestamp / arrival time pairs.

Stats dumps use this layout (arrays are per sample, all the same length)::

    {"schema": 1,
     "connections": [{"id": "pc-1", "sampling_period": 1,
                      "samples": {"t": [...], "bytes_received": [...], ...}}]}
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402

from browserkit.errors import DataIntegrityError, DumpSchemaError  # noqa: E402

logger = logging.getLogger(__name__)

DUMP_SCHEMA = 1
DEFAULT_FREEZE_THRESHOLD_MS = 500
DEFAULT_JITTER_THRESHOLD_MS = 75
RTP_VIDEO_CLOCK_RATE = 90000
_MS_DECIMALS = 6

REQUIRED_FIELDS = (
    "t",
    "bytes_received",
    "highest_seq",
    "base_seq",
    "packets_received",
    "jitter_buffer_delay",
    "jitter_buffer_emitted",
)
CUMULATIVE_FIELDS = ("bytes_received", "packets_received", "jitter_buffer_delay", "jitter_buffer_emitted")


class Metric(str, Enum):
    BIT_RATE = "bit_rate_kbps"
    JITTER_DELAY = "jitter_delay_ms"
    FREEZE_COUNT = "freeze_count"
    PACKET_LOSS = "packet_loss"
    INTERARRIVAL_JITTER = "interarrival_jitter_ms"


@dataclass(frozen=True)
class StatSample:
    t: float
    bytes_received: int = 0
    highest_seq: int = 0
    base_seq: int = 0
    packets_received: int = 0
    jitter_buffer_delay: float = 0.0
    jitter_buffer_emitted: int = 0
    frame_times: tuple[float, ...] = ()
    transit_pairs: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class PeerConnectionTimeline:
    connection_id: str
    samples: tuple[StatSample, ...]
    sampling_period: float = 1.0

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(sample, name) for sample in self.samples], dtype=float)

    def to_frame(self) -> pd.DataFrame:
        rows = [{name: getattr(sample, name) for name in REQUIRED_FIELDS} for sample in self.samples]
        df = pd.DataFrame(rows, columns=list(REQUIRED_FIELDS))
        df.insert(0, "connection_id", self.connection_id)
        df["frames"] = [len(sample.frame_times) for sample in self.samples]
        return df


@dataclass(frozen=True)
class MetricSeries:
    metric: Metric
    points: tuple[tuple[float, float], ...]
    connection_id: str = ""
    metadata: Mapping[str, Any] = field(default_factory=dict, compare=False)

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.points], dtype=float)

    @property
    def values(self) -> np.ndarray:
        return np.array([v for _, v in self.points], dtype=float)

    @property
    def final(self) -> float:
        return self.points[-1][1] if self.points else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"t": self.times, "metric": self.metric.value, "value": self.values},
            columns=["t", "metric", "value"],
        )


def _series(metric: Metric, times: np.ndarray, values: np.ndarray, timeline: PeerConnectionTimeline, **metadata):
    points = tuple((float(t), float(v)) for t, v in zip(times, values))
    return MetricSeries(metric, points, timeline.connection_id, metadata)


def _check_time(timeline: PeerConnectionTimeline) -> np.ndarray:
    t = timeline.column("t")
    steps = np.diff(t)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        raise DataIntegrityError("sample times must be strictly increasing", int(bad[0]) + 1)
    return t


def _check_non_decreasing(values: np.ndarray, name: str) -> None:
    bad = np.flatnonzero(np.diff(values) < 0)
    if bad.size:
        raise DataIntegrityError(f"cumulative {name} decreased", int(bad[0]) + 1)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def bit_rate(timeline: PeerConnectionTimeline) -> MetricSeries:
    if len(timeline.samples) < 2:
        raise DataIntegrityError(f"bit rate of {timeline.connection_id} needs at least two samples")
    t = _check_time(timeline)
    received = timeline.column("bytes_received")
    _check_non_decreasing(received, "bytes_received")
    rate = np.diff(received) / np.diff(t) / 1000
    return _series(Metric.BIT_RATE, t[1:], rate, timeline)


def jitter_delay(timeline: PeerConnectionTimeline) -> MetricSeries:
    """Running jitter-buffer delay per emitted packet; the raw cumulative sum is kept in metadata."""
    t = _check_time(timeline)
    delay = timeline.column("jitter_buffer_delay")
    emitted = timeline.column("jitter_buffer_emitted")
    _check_non_decreasing(delay, "jitter_buffer_delay")
    _check_non_decreasing(emitted, "jitter_buffer_emitted")
    bad = np.flatnonzero((emitted == 0) & (delay > 0))
    if bad.size:
        raise DataIntegrityError("jitter buffer delay without emitted packets", int(bad[0]))
    values = delay * 1000 / np.maximum(1, emitted)
    return _series(Metric.JITTER_DELAY, t, values, timeline, cumulative_ms=(delay * 1000).tolist())


def freeze_count(timeline: PeerConnectionTimeline, threshold_ms: float = DEFAULT_FREEZE_THRESHOLD_MS) -> MetricSeries:
    t = timeline.column("t")
    lengths = [len(sample.frame_times) for sample in timeline.samples]
    counts = np.zeros(len(timeline.samples), dtype=int)
    if sum(lengths) > 1:
        frames = np.concatenate([np.asarray(s.frame_times, dtype=float) for s in timeline.samples])
        owner = np.repeat(np.arange(len(timeline.samples)), lengths)
        gaps = np.diff(frames)
        bad = np.flatnonzero(gaps < 0)
        if bad.size:
            raise DataIntegrityError("frame times are not ordered", int(owner[bad[0] + 1]))
        frozen = np.round(gaps * 1000, _MS_DECIMALS) >= threshold_ms
        counts = np.bincount(owner[1:][frozen], minlength=len(timeline.samples))
    return _series(Metric.FREEZE_COUNT, t, np.cumsum(counts), timeline, threshold_ms=threshold_ms)


def packet_loss(timeline: PeerConnectionTimeline) -> MetricSeries:
    """Cumulative lost packets; negative values (duplicates) are kept and listed in metadata."""
    t = _check_time(timeline)
    highest = timeline.column("highest_seq")
    base = timeline.column("base_seq")
    received = timeline.column("packets_received")
    _check_non_decreasing(highest, "highest_seq")
    _check_non_decreasing(received, "packets_received")
    bad = np.flatnonzero(highest < base)
    if bad.size:
        raise DataIntegrityError("highest sequence number below base sequence number", int(bad[0]))
    lost = (highest - base + 1) - received
    negative = np.flatnonzero(lost < 0).tolist()
    if negative:
        logger.warning(f"{timeline.connection_id}: negative loss (duplicates) at samples {negative}")
    return _series(Metric.PACKET_LOSS, t, lost, timeline, negative_samples=negative)


def interarrival_jitter(timeline: PeerConnectionTimeline, clock_rate: int = RTP_VIDEO_CLOCK_RATE) -> MetricSeries:
    """RFC 3550 estimator J += (|D| - J) / 16 over (rtp_timestamp, arrival seconds) pairs, in ms."""
    t = timeline.column("t")
    values = np.zeros(len(timeline.samples))
    jitter, previous = 0.0, None
    for i, sample in enumerate(timeline.samples):
        for rtp_timestamp, arrival in sample.transit_pairs:
            transit = arrival * clock_rate - rtp_timestamp
            if previous is not None:
                jitter += (abs(transit - previous) - jitter) / 16
            previous = transit
        values[i] = jitter / clock_rate * 1000
    return _series(Metric.INTERARRIVAL_JITTER, t, values, timeline, clock_rate=clock_rate)


def analyze(timeline: PeerConnectionTimeline, freeze_threshold_ms: float = DEFAULT_FREEZE_THRESHOLD_MS) -> dict[Metric, MetricSeries]:
    series = {
        Metric.BIT_RATE: bit_rate(timeline),
        Metric.JITTER_DELAY: jitter_delay(timeline),
        Metric.FREEZE_COUNT: freeze_count(timeline, freeze_threshold_ms),
        Metric.PACKET_LOSS: packet_loss(timeline),
    }
    if any(sample.transit_pairs for sample in timeline.samples):
        series[Metric.INTERARRIVAL_JITTER] = interarrival_jitter(timeline)
    return series


# ---------------------------------------------------------------------------
# QoE flags
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QoeFlag:
    connection_id: str
    metric: Metric
    value: float
    threshold: float
    flagged: bool


def qoe_flags(series: Iterable[MetricSeries], threshold_ms: float = DEFAULT_JITTER_THRESHOLD_MS) -> list[QoeFlag]:
    """One entry per jitter-delay series; flagged when the final value is >= the threshold."""
    report = []
    for item in series:
        if item.metric is not Metric.JITTER_DELAY:
            continue
        report.append(QoeFlag(item.connection_id, item.metric, item.final, threshold_ms, item.final >= threshold_ms))
    return report


def qoe_table(report: list[QoeFlag]) -> str:
    if not report:
        return "no jitter series"
    df = pd.DataFrame(
        [
            {
                "connection": flag.connection_id,
                "metric": flag.metric.value,
                "value": round(flag.value, 2),
                "threshold": flag.threshold,
                "flagged": flag.flagged,
            }
            for flag in report
        ]
    )
    return df.to_string(index=False)


# ---------------------------------------------------------------------------
# Dumps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DumpImport:
    timelines: tuple[PeerConnectionTimeline, ...]
    first_joined: PeerConnectionTimeline


def first_joined(timelines: Iterable[PeerConnectionTimeline]) -> PeerConnectionTimeline:
    timelines = [tl for tl in timelines if tl.samples]
    if not timelines:
        raise DataIntegrityError("no connection has samples")
    return min(timelines, key=lambda tl: tl.samples[0].t)


def _connection(item: Any, path: str) -> PeerConnectionTimeline:
    if not isinstance(item, dict):
        raise DumpSchemaError(path, "expected an object")
    samples = item.get("samples")
    if not isinstance(samples, dict):
        raise DumpSchemaError(f"{path}.samples", "expected an object of arrays")

    length = None
    for name in REQUIRED_FIELDS:
        values = samples.get(name)
        if name == "base_seq" and isinstance(values, (int, float)):
            continue
        if not isinstance(values, list):
            raise DumpSchemaError(f"{path}.samples.{name}", "missing array")
        if length is None:
            length = len(values)
        elif len(values) != length:
            raise DumpSchemaError(f"{path}.samples.{name}", f"expected {length} values, got {len(values)}")
    if not length:
        raise DumpSchemaError(f"{path}.samples.t", "no samples")

    def per_sample(name: str, default: Any) -> list[Any]:
        values = samples.get(name, default)
        if not isinstance(values, list):
            return [values] * length
        if len(values) != length:
            raise DumpSchemaError(f"{path}.samples.{name}", f"expected {length} values, got {len(values)}")
        return values

    frames = per_sample("frame_times", [[]] * length)
    pairs = per_sample("transit_pairs", [[]] * length)
    base = per_sample("base_seq", 0)
    try:
        built = tuple(
            StatSample(
                t=float(samples["t"][i]),
                bytes_received=int(samples["bytes_received"][i]),
                highest_seq=int(samples["highest_seq"][i]),
                base_seq=int(base[i]),
                packets_received=int(samples["packets_received"][i]),
                jitter_buffer_delay=float(samples["jitter_buffer_delay"][i]),
                jitter_buffer_emitted=int(samples["jitter_buffer_emitted"][i]),
                frame_times=tuple(float(x) for x in frames[i]),
                transit_pairs=tuple((float(a), float(b)) for a, b in pairs[i]),
            )
            for i in range(length)
        )
    except (TypeError, ValueError) as exc:
        raise DumpSchemaError(f"{path}.samples", f"non-numeric value: {exc}") from None
    return PeerConnectionTimeline(str(item.get("id", path)), built, float(item.get("sampling_period", 1.0)))


def parse_dump(document: Any) -> DumpImport:
    if not isinstance(document, dict):
        raise DumpSchemaError("$", "expected an object")
    if document.get("schema") != DUMP_SCHEMA:
        raise DumpSchemaError("$.schema", f"expected schema {DUMP_SCHEMA}")
    connections = document.get("connections")
    if not isinstance(connections, list):
        raise DumpSchemaError("$.connections", "expected a list")
    if not connections:
        raise DumpSchemaError("$.connections", "empty dump")
    timelines = tuple(_connection(item, f"$.connections[{i}]") for i, item in enumerate(connections))
    return DumpImport(timelines, first_joined(timelines))


def _read_json(path: Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DumpSchemaError(str(path), str(exc)) from None
    except ValueError as exc:
        raise DumpSchemaError("$", f"malformed JSON: {exc}") from None


def import_dump(path: Path) -> DumpImport:
    imported = parse_dump(_read_json(path))
    logger.info(
        f"Imported {len(imported.timelines)} connection(s) from {path}; first joined: {imported.first_joined.connection_id}"
    )
    return imported


def dump_document(timelines: Iterable[PeerConnectionTimeline]) -> dict[str, Any]:
    connections = []
    for timeline in timelines:
        samples: dict[str, Any] = {name: [getattr(s, name) for s in timeline.samples] for name in REQUIRED_FIELDS}
        samples["frame_times"] = [list(s.frame_times) for s in timeline.samples]
        samples["transit_pairs"] = [[list(pair) for pair in s.transit_pairs] for s in timeline.samples]
        connections.append(
            {"id": timeline.connection_id, "sampling_period": timeline.sampling_period, "samples": samples}
        )
    return {"schema": DUMP_SCHEMA, "connections": connections}


def write_dump(timelines: Iterable[PeerConnectionTimeline], path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(dump_document(timelines)), encoding="utf-8")
    return path


def _values(raw: Any) -> list[float]:
    values = json.loads(raw) if isinstance(raw, str) else raw
    return [float(v) if v is not None else 0.0 for v in values]


def import_webrtc_internals(path: Path) -> list[PeerConnectionTimeline]:
    """Best-effort reader for raw ``webrtc-internals`` dumps.

    Only inbound RTP counters are used. Frame arrival times are not part of
    that format, so freeze counts come out as zero.
    """
    document = _read_json(path)
    connections = document.get("PeerConnections") if isinstance(document, dict) else None
    if not isinstance(connections, dict):
        raise DumpSchemaError("$.PeerConnections", "expected an object")

    raw_timelines = []
    for pc_id, pc in connections.items():
        stats = pc.get("stats", {}) if isinstance(pc, dict) else {}
        streams: dict[str, dict[str, Any]] = {}
        for key, stat in stats.items():
            if not isinstance(stat, dict) or stat.get("statsType") != "inbound-rtp" or "-" not in key:
                continue
            stream_id, name = key.rsplit("-", 1)
            streams.setdefault(stream_id, {})[name] = stat
        stream = next((s for s in streams.values() if "bytesReceived" in s and "packetsReceived" in s), None)
        if stream is None:
            logger.debug(f"Connection {pc_id} has no inbound RTP stream; skipped")
            continue

        anchor = stream["bytesReceived"]
        received = _values(anchor["values"])
        n = len(received)
        start = pd.Timestamp(anchor["startTime"])
        end = pd.Timestamp(anchor["endTime"])
        step = (end - start).total_seconds() / (n - 1) if n > 1 else 1.0
        if step <= 0:
            step = 1.0

        def field_values(name: str) -> list[float]:
            stat = stream.get(name)
            values = _values(stat["values"]) if stat else [0.0] * n
            return (values + [values[-1] if values else 0.0] * n)[:n]

        packets = field_values("packetsReceived")
        lost = field_values("packetsLost")
        delay = field_values("jitterBufferDelay")
        emitted = field_values("jitterBufferEmittedCount")
        raw_timelines.append(
            (
                str(pc_id),
                start,
                step,
                [
                    (i * step, received[i], packets[i] + max(lost[i], 0), packets[i], delay[i], emitted[i])
                    for i in range(n)
                ],
            )
        )

    if not raw_timelines:
        raise DumpSchemaError("$.PeerConnections", "no connection with inbound RTP stats")
    origin = min(start for _, start, _, _ in raw_timelines)
    timelines = []
    for pc_id, start, step, rows in raw_timelines:
        offset = (start - origin).total_seconds()
        samples = tuple(
            StatSample(
                t=offset + rel,
                bytes_received=int(recv),
                highest_seq=int(expected),
                base_seq=1,
                packets_received=int(packets),
                jitter_buffer_delay=float(delay),
                jitter_buffer_emitted=int(emitted),
            )
            for rel, recv, expected, packets, delay, emitted in rows
        )
        timelines.append(PeerConnectionTimeline(pc_id, samples, step))
    return timelines


# ---------------------------------------------------------------------------
# Exports
# ---------------------------------------------------------------------------


def export_csv(series: MetricSeries, path: Path) -> Path:
    """One row per (t, metric, value)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    series.to_frame().to_csv(path, index=False)
    return path


def export_svg(series: MetricSeries, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 4))
    drawstyle = "steps-post" if series.metric in (Metric.FREEZE_COUNT, Metric.PACKET_LOSS) else "default"
    ax.plot(series.times, series.values, drawstyle=drawstyle)
    ax.set_xlabel("time (s)")
    ax.set_ylabel(series.metric.value)
    ax.set_title(f"{series.metric.value} ({series.connection_id})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
