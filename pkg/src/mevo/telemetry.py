"""Once-per-second measurement records and the session log format.

One CSV row per remote stream per second.  The column set and formatting
are pinned (fixed order, three-decimal floats, empty field for a missing
RTT) so that reruns of a deterministic session produce byte-identical
logs and fixtures can be diffed.

Loss numbers in a row are definitive, not provisional: frames concealed
so recently that a late arrival could still reclassify them are held
back until their reclassification window closes.  That keeps every
column non-decreasing across rows.  The final row of a session reports
the buffer counters exactly (nothing can be reclassified after the end).

RTT comes from echo probes on the control flag: the responder copies the
ping's 48-bit send clock into the pong payload, and the prober subtracts
it from its own clock on return.  No cross-clock arithmetic, ever.
"""

from __future__ import annotations

import csv
import re
from collections import deque
from dataclasses import dataclass

import numpy as np

from .wire import StreamConfig

SCHEMA_VERSION = 1

COLUMNS = (
    "t_s",
    "peer_id",
    "stream_id",
    "rtt_ms",
    "buffer_target_ms",
    "buffer_occupancy_ms",
    "frames_played",
    "frames_lost",
    "frames_late",
    "frames_concealed",
    "frames_skipped",
    "dgrams_sent",
    "dgrams_recv",
    "dgrams_malformed",
)

PROBE_PING = 0x01
PROBE_PONG = 0x02
PROBE_TIMEOUT_US = 3_000_000


@dataclass(frozen=True)
class TelemetryRow:
    t_s: float
    peer_id: str
    stream_id: int
    rtt_ms: float | None
    buffer_target_ms: float
    buffer_occupancy_ms: float
    frames_played: int
    frames_lost: int
    frames_late: int
    frames_concealed: int
    frames_skipped: int
    dgrams_sent: int
    dgrams_recv: int
    dgrams_malformed: int


def metadata_line(stream: StreamConfig) -> str:
    return "# mevo-telemetry v%d rate=%d fpp=%d" % (
        SCHEMA_VERSION, stream.sample_rate, stream.frames_per_packet,
    )


def format_row(row: TelemetryRow) -> str:
    rtt = "" if row.rtt_ms is None else "%.3f" % row.rtt_ms
    return "%.3f,%s,%d,%s,%.3f,%.3f,%d,%d,%d,%d,%d,%d,%d,%d" % (
        row.t_s, row.peer_id, row.stream_id, rtt,
        row.buffer_target_ms, row.buffer_occupancy_ms,
        row.frames_played, row.frames_lost, row.frames_late,
        row.frames_concealed, row.frames_skipped,
        row.dgrams_sent, row.dgrams_recv, row.dgrams_malformed,
    )


class TelemetryWriter:
    """Appends rows to a session log file.

    A write failure never raises into the sampling path: rows fall back
    to an in-memory ring (most recent 3600) and the error is kept for
    the status surface to report.
    """

    RING_CAPACITY = 3600

    def __init__(self, path, stream: StreamConfig):
        self.path = path
        self.ring = deque(maxlen=self.RING_CAPACITY)
        self.error = None
        self._fh = None
        try:
            self._fh = open(path, "w", encoding="ascii", newline="")
            self._fh.write(metadata_line(stream) + "\n")
            self._fh.write(",".join(COLUMNS) + "\n")
        except OSError as exc:
            self.error = str(exc)
            self._fh = None

    def write(self, row: TelemetryRow):
        line = format_row(row)
        if self._fh is not None:
            try:
                self._fh.write(line + "\n")
                return
            except OSError as exc:
                self.error = str(exc)
                self._fh = None
        self.ring.append(line)

    def close(self):
        if self._fh is not None:
            try:
                self._fh.close()
            except OSError as exc:
                self.error = str(exc)
            self._fh = None


# ---- reading logs back -----------------------------------------------


_META_RE = re.compile(r"# mevo-telemetry v(\d+) rate=(\d+) fpp=(\d+)\s*$")

#: Quantile levels reported by summaries and histogram stats.
RTT_QUANTILES = (0.5, 0.9, 0.99, 0.999)


@dataclass(frozen=True)
class TelemetryLog:
    """A parsed session log: stream parameters plus rows in file order."""

    sample_rate: int
    frames_per_packet: int
    rows: tuple

    def duration_s(self) -> float:
        """Session length covered by the log (rows are cumulative, so
        this is the last sample instant, not the row count)."""
        return max(r.t_s for r in self.rows) if self.rows else 0.0

    def rtt_values_ms(self) -> list:
        return [r.rtt_ms for r in self.rows if r.rtt_ms is not None]

    def occupancy_values_ms(self) -> list:
        return [r.buffer_occupancy_ms for r in self.rows]

    def final_rows(self) -> dict:
        """Last row seen per (peer_id, stream_id), i.e. the end-of-run
        counter state of every stream in the log."""
        finals = {}
        for row in self.rows:
            finals[(row.peer_id, row.stream_id)] = row
        return finals


def read_log(path) -> TelemetryLog:
    """Parse a session log written by TelemetryWriter.

    Anything that does not match the pinned schema raises ValueError
    with the offending line number: wrong metadata line, unknown schema
    version, header drift, short rows, non-numeric fields.
    """
    with open(path, "r", encoding="ascii", newline="") as fh:
        meta = fh.readline()
        m = _META_RE.match(meta)
        if m is None:
            raise ValueError("%s: missing mevo-telemetry metadata line" % path)
        version, rate, fpp = (int(g) for g in m.groups())
        if version != SCHEMA_VERSION:
            raise ValueError(
                "%s: schema v%d not supported (expected v%d)"
                % (path, version, SCHEMA_VERSION)
            )
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError("%s: missing column header" % path) from None
        if tuple(header) != COLUMNS:
            raise ValueError("%s: column header does not match schema" % path)
        rows = []
        for lineno, rec in enumerate(reader, start=3):
            if len(rec) != len(COLUMNS):
                raise ValueError(
                    "%s:%d: expected %d fields, got %d"
                    % (path, lineno, len(COLUMNS), len(rec))
                )
            try:
                rows.append(TelemetryRow(
                    t_s=float(rec[0]),
                    peer_id=rec[1],
                    stream_id=int(rec[2]),
                    rtt_ms=None if rec[3] == "" else float(rec[3]),
                    buffer_target_ms=float(rec[4]),
                    buffer_occupancy_ms=float(rec[5]),
                    frames_played=int(rec[6]),
                    frames_lost=int(rec[7]),
                    frames_late=int(rec[8]),
                    frames_concealed=int(rec[9]),
                    frames_skipped=int(rec[10]),
                    dgrams_sent=int(rec[11]),
                    dgrams_recv=int(rec[12]),
                    dgrams_malformed=int(rec[13]),
                ))
            except ValueError as exc:
                raise ValueError("%s:%d: %s" % (path, lineno, exc)) from None
    return TelemetryLog(sample_rate=rate, frames_per_packet=fpp,
                        rows=tuple(rows))


@dataclass(frozen=True)
class SessionSummary:
    """End-of-run headline numbers for one peer's log.

    RTT fields are None when the log holds no completed probes (the
    buffer and loss fields never are; every row carries them).
    loss_ratio is lost frames over the frames every stream should have
    carried: duration x sample rate x stream count.
    """

    duration_s: float
    n_rows: int
    n_streams: int
    rtt_samples: int
    rtt_min_ms: float | None
    rtt_max_ms: float | None
    rtt_quantiles_ms: dict
    threshold_ms: float
    rtt_below_threshold: float | None
    loss_ratio: float
    frames_played: int
    frames_lost: int
    frames_late: int
    frames_skipped: int
    buffer_mean_ms: float
    buffer_low_ms: float
    buffer_high_ms: float


def summarize(log: TelemetryLog, threshold_ms: float = 59.0) -> SessionSummary:
    """Pure function of the log: identical logs give identical summaries.

    The buffer interval is the empirical [2.5, 97.5] percentile band of
    the occupancy samples; the threshold fraction counts RTTs strictly
    below threshold_ms.
    """
    if not log.rows:
        raise ValueError("empty log")
    duration = log.duration_s()
    if duration <= 0:
        raise ValueError("log covers no time")

    rtts = np.sort(np.asarray(log.rtt_values_ms(), dtype=np.float64))
    if rtts.size:
        quantiles = {q: float(np.quantile(rtts, q)) for q in RTT_QUANTILES}
        below = float(np.searchsorted(rtts, threshold_ms, side="left"))
        rtt_min, rtt_max = float(rtts[0]), float(rtts[-1])
        rtt_frac = below / rtts.size
    else:
        quantiles = {}
        rtt_min = rtt_max = rtt_frac = None

    occ = np.asarray(log.occupancy_values_ms(), dtype=np.float64)
    lo, hi = np.percentile(occ, [2.5, 97.5])

    finals = log.final_rows()
    lost = sum(r.frames_lost for r in finals.values())
    expected = duration * log.sample_rate * len(finals)

    return SessionSummary(
        duration_s=duration,
        n_rows=len(log.rows),
        n_streams=len(finals),
        rtt_samples=int(rtts.size),
        rtt_min_ms=rtt_min,
        rtt_max_ms=rtt_max,
        rtt_quantiles_ms=quantiles,
        threshold_ms=threshold_ms,
        rtt_below_threshold=rtt_frac,
        loss_ratio=lost / expected,
        frames_played=sum(r.frames_played for r in finals.values()),
        frames_lost=lost,
        frames_late=sum(r.frames_late for r in finals.values()),
        frames_skipped=sum(r.frames_skipped for r in finals.values()),
        buffer_mean_ms=float(occ.mean()),
        buffer_low_ms=float(lo),
        buffer_high_ms=float(hi),
    )


# ---- RTT probes ------------------------------------------------------


def encode_probe(kind: int, echo_us: int = 0) -> bytes:
    """Control payload: kind byte, 48-bit echoed clock, one pad byte."""
    if kind not in (PROBE_PING, PROBE_PONG):
        raise ValueError("unknown probe kind %r" % (kind,))
    return bytes([kind]) + (echo_us & 0xFFFFFFFFFFFF).to_bytes(6, "big") + b"\x00"


def decode_probe(payload: bytes):
    """(kind, echo_us), or None if this is not a well-formed probe."""
    if len(payload) != 8 or payload[0] not in (PROBE_PING, PROBE_PONG):
        return None
    return payload[0], int.from_bytes(payload[1:7], "big")


class RttTracker:
    """Per-peer RTT bookkeeping on the prober side.

    A row's rtt is the latest probe completed inside that row's window;
    a probe with no pong within PROBE_TIMEOUT_US simply never completes,
    which surfaces as an empty field.
    """

    def __init__(self):
        self._completed_at_us = None
        self._rtt_us = None

    def on_pong(self, echo_us: int, now_us: int):
        rtt = now_us - echo_us
        if 0 <= rtt <= PROBE_TIMEOUT_US:
            self._completed_at_us = now_us
            self._rtt_us = rtt

    def rtt_ms_in_window(self, window_start_us: int, window_end_us: int):
        if self._completed_at_us is None:
            return None
        if window_start_us < self._completed_at_us <= window_end_us:
            return self._rtt_us / 1000.0
        return None
