"""The runnable peer: capture fan-out, per-stream playout, bus mixing.

The core is sans-io: `PeerEngine` consumes and returns datagrams as
bytes and is driven by whoever owns time.  Three drivers exist:

  * `run_session` - real threads, one UDP socket, a wall clock; this is
    what the `mevo-peer` command runs.
  * `LocalMesh` - cooperative in-process mesh with a shared virtual
    clock and a constant-delay lossless transport, for deterministic
    whole-engine tests (bit-exactness has no place for thread timing).
  * the network simulator, which reuses the same jitter-buffer policy
    against modeled links (see netsim).

Every peer sends its capture stream to every other peer, one datagram
per audio cycle per destination.  A peer that owns the metronome
synthesizes the click sample-locked to its own frame counter and sends
it as a second stream with the metronome flag set; everyone mixes it
through the routing matrix like any other source, so "musicians hear
the click, the audience does not" is just a gain row.
"""

from __future__ import annotations

import socket
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .audio import (
    BUSES,
    METRONOME_SOURCE,
    ConfigError,
    NullSink,
    RoutingMatrix,
    SilenceSource,
    float_to_pcm,
    metronome_block,
    mix,
    pcm_to_float,
)
from .jitter import JitterBuffer, JitterBufferConfig, estimate_refresh_cycles
from .telemetry import (
    PROBE_PING,
    PROBE_PONG,
    RttTracker,
    TelemetryRow,
    TelemetryWriter,
    decode_probe,
    encode_probe,
)
from .wire import (
    FLAG_CONTROL,
    FLAG_METRONOME,
    AudioPacket,
    MalformedPacketError,
    PacketHeader,
    StreamConfig,
    decode,
    encode,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

LOCAL_MONITOR_SOURCE = "local_monitor"
METRONOME_STREAM_ID = 255


# ---- session configuration -------------------------------------------


@dataclass(frozen=True)
class PeerEntry:
    peer_id: str
    host: str
    port: int

    @property
    def address(self):
        return (self.host, self.port)


@dataclass
class MetronomeConfig:
    enabled: bool = False
    bpm: float = 120.0
    beats_per_bar: int = 4
    owner_peer_id: str | None = None
    audience_muted: bool = True

    def __post_init__(self):
        if not 20 <= self.bpm <= 300:
            raise ConfigError("bpm must be in [20, 300], got %r" % (self.bpm,))
        if self.beats_per_bar < 1:
            raise ConfigError("beats_per_bar must be >= 1")


@dataclass
class SessionConfig:
    """Everything one peer needs to join a session.

    `peers` is the full roster including the local peer; every member
    must agree on the roster (stream ids are its sorted order) and on
    the stream shape.
    """

    local_peer_id: str
    peers: list
    stream: StreamConfig = field(default_factory=StreamConfig)
    buffer: JitterBufferConfig = field(default_factory=JitterBufferConfig)
    routing: RoutingMatrix | None = None
    metronome: MetronomeConfig = field(default_factory=MetronomeConfig)
    control_port: int | None = None

    def __post_init__(self):
        ids = [p.peer_id for p in self.peers]
        if len(set(ids)) != len(ids):
            raise ConfigError("peer ids must be unique: %s" % ids)
        if self.local_peer_id not in ids:
            raise ConfigError(
                "local peer %r is not in the roster" % self.local_peer_id)
        if len(ids) > METRONOME_STREAM_ID:
            raise ConfigError("roster larger than %d" % METRONOME_STREAM_ID)
        if (self.metronome.owner_peer_id is not None
                and self.metronome.owner_peer_id not in ids):
            raise ConfigError(
                "metronome owner %r is not in the roster"
                % self.metronome.owner_peer_id)
        if self.metronome.enabled and self.metronome.owner_peer_id is None:
            raise ConfigError("metronome is enabled but has no owner")
        if self.routing is None:
            self.routing = default_routing(self)
        if self.metronome.audience_muted:
            if self.routing.gain(METRONOME_SOURCE, "audience") != 0.0:
                raise ConfigError(
                    "metronome gain on the audience bus must be 0 while "
                    "audience muting is enabled")

    def stream_ids(self) -> dict:
        """peer id -> stream id; the roster's sorted order, so every
        peer derives the same mapping without negotiation."""
        return {pid: i for i, pid in
                enumerate(sorted(p.peer_id for p in self.peers))}

    def remotes(self) -> list:
        return [p for p in self.peers if p.peer_id != self.local_peer_id]

    def local_entry(self) -> PeerEntry:
        for p in self.peers:
            if p.peer_id == self.local_peer_id:
                return p
        raise KeyError(self.local_peer_id)


def default_routing(config: SessionConfig) -> RoutingMatrix:
    """Every remote stream onto both buses at gain 1; the metronome (if
    enabled) onto the monitor bus only.  The local monitor row defaults
    to silence - performers hear themselves acoustically."""
    m = RoutingMatrix()
    for p in config.peers:
        if p.peer_id == config.local_peer_id:
            continue
        m.set_gain(p.peer_id, "musician_monitor", 1.0)
        m.set_gain(p.peer_id, "audience", 1.0)
    if config.metronome.enabled:
        m.set_gain(METRONOME_SOURCE, "musician_monitor", 1.0)
        if not config.metronome.audience_muted:
            m.set_gain(METRONOME_SOURCE, "audience", 1.0)
    return m


def _split_address(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError("address must be host:port, got %r" % text)
    return host, int(port)


def session_from_dict(doc: dict) -> SessionConfig:
    try:
        peers = [
            PeerEntry(p["id"], *_split_address(p["address"]))
            for p in doc["peer"]
        ]
        stream_tbl = doc.get("stream", {})
        buffer_tbl = doc.get("buffer", {})
        met_tbl = doc.get("metronome", {})
        routing = None
        if "route" in doc:
            routing = RoutingMatrix()
            for r in doc["route"]:
                routing.set_gain(r["source"], r["bus"], r["gain"])
        return SessionConfig(
            local_peer_id=doc["local_peer_id"],
            peers=peers,
            stream=StreamConfig(
                sample_rate=stream_tbl.get("sample_rate", 44100),
                channels=stream_tbl.get("channels", 1),
                frames_per_packet=stream_tbl.get("frames_per_packet", 128),
            ),
            buffer=JitterBufferConfig(
                window_seconds=buffer_tbl.get("window_seconds", 4.0),
                percentile=buffer_tbl.get("percentile", 99.0),
                safety_margin_frames=buffer_tbl.get(
                    "safety_margin_frames", 128),
                min_target_frames=buffer_tbl.get("min_target_frames", 128),
                max_target_frames=buffer_tbl.get("max_target_frames", 1536),
                late_timeout_ms=buffer_tbl.get("late_timeout_ms", 1000),
            ),
            routing=routing,
            metronome=MetronomeConfig(
                enabled=met_tbl.get("enabled", False),
                bpm=met_tbl.get("bpm", 120.0),
                beats_per_bar=met_tbl.get("beats_per_bar", 4),
                owner_peer_id=met_tbl.get("owner"),
                audience_muted=met_tbl.get("audience_muted", True),
            ),
            control_port=doc.get("control_port"),
        )
    except KeyError as exc:
        raise ConfigError("session config is missing key %s" % exc) from exc


def load_session(path) -> SessionConfig:
    with open(path, "rb") as fh:
        return session_from_dict(tomllib.load(fh))


# ---- the engine --------------------------------------------------------


class PeerEngine:
    """Sans-io peer logic; all methods take the local clock in us.

    Not thread safe by itself: `run_session` serializes calls with a
    lock, `LocalMesh` is single-threaded.  Mutations from the control
    surface go through request_* methods, which validate immediately
    (so the API can reject bad input before acknowledging) and apply
    at the next cycle boundary.
    """

    def __init__(self, config: SessionConfig):
        self.config = config
        self.stream = config.stream
        stream_ids = config.stream_ids()
        self.local_stream_id = stream_ids[config.local_peer_id]
        self._addr_of = {p.peer_id: p.address for p in config.remotes()}
        self._peer_of_stream = {
            stream_ids[p.peer_id]: p.peer_id for p in config.remotes()}

        self.buffers = {
            p.peer_id: JitterBuffer(config.buffer, config.stream)
            for p in config.remotes()
        }
        self._metronome_buffer = None   # created on first click packet
        self._met_owner_remote = (
            config.metronome.owner_peer_id is not None
            and config.metronome.owner_peer_id != config.local_peer_id)

        self.rtt = {p.peer_id: RttTracker() for p in config.remotes()}
        self.source = SilenceSource(config.stream.sample_rate,
                                    config.stream.channels)
        self.sinks = {bus: NullSink() for bus in BUSES}

        self.frame_index = 0            # frames captured so far
        self.dgrams_sent = 0
        self.dgrams_recv = 0
        self.dgrams_malformed = 0

        self._est_every = estimate_refresh_cycles(config.stream)
        self._cycles = 0
        self._cached_targets = {}       # stream key -> cached estimate
        self._last_capture = np.zeros(
            config.stream.frames_per_packet * config.stream.channels,
            dtype=np.float32)
        self._mailbox = deque()
        self._desired_buffer = config.buffer
        self._probe_seq = 0
        self._next_probe_us = 0
        self._next_sample_s = 1
        self.stop_requested = False

    # ---- wiring ------------------------------------------------------

    def attach_audio(self, source=None, sinks: dict | None = None):
        if source is not None:
            self.source = source
        if sinks:
            for bus, sink in sinks.items():
                if bus not in BUSES:
                    raise ConfigError("unknown bus %r" % bus)
                self.sinks[bus] = sink

    # ---- control-surface mutations ------------------------------------

    def request_buffer_change(self, *, percentile=None,
                              max_target_frames=None) -> JitterBufferConfig:
        """Validate now, apply at the next cycle; returns the config
        that will take effect."""
        changes = {}
        if percentile is not None:
            changes["percentile"] = float(percentile)
        if max_target_frames is not None:
            changes["max_target_frames"] = int(max_target_frames)
        try:
            cfg = replace(self._desired_buffer, **changes)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self._desired_buffer = cfg

        def apply():
            for buf in self._all_buffers():
                buf.config = cfg
        self._mailbox.append(apply)
        return cfg

    def request_metronome_change(self, *, enabled=None, bpm=None):
        met = self.config.metronome
        new = MetronomeConfig(
            enabled=met.enabled if enabled is None else bool(enabled),
            bpm=met.bpm if bpm is None else float(bpm),
            beats_per_bar=met.beats_per_bar,
            owner_peer_id=met.owner_peer_id,
            audience_muted=met.audience_muted,
        )
        if new.enabled and new.owner_peer_id is None:
            raise ConfigError("session has no metronome owner")

        def apply():
            self.config.metronome = new
        self._mailbox.append(apply)
        return new

    def request_routing_change(self, source: str, bus: str, gain: float):
        known = set(self._addr_of) | {LOCAL_MONITOR_SOURCE, METRONOME_SOURCE}
        if source not in known:
            raise ConfigError("unknown source %r" % source)
        if bus not in BUSES:
            raise ConfigError("unknown bus %r" % bus)
        if (source == METRONOME_SOURCE and bus == "audience"
                and self.config.metronome.audience_muted and gain != 0.0):
            raise ConfigError(
                "metronome is muted on the audience bus for this session")
        RoutingMatrix._check(source, bus, gain)

        def apply():
            self.config.routing.set_gain(source, bus, float(gain))
        self._mailbox.append(apply)

    def request_stop(self):
        self._mailbox.append(self._mark_stopped)

    def _mark_stopped(self):
        self.stop_requested = True

    def apply_mutations(self):
        while self._mailbox:
            self._mailbox.popleft()()

    # ---- datagram plane ------------------------------------------------

    def capture_cycle(self, now_us: int) -> list:
        """Read one block from the device and address it to every other
        peer; returns [(address, datagram bytes)]."""
        fpp = self.stream.frames_per_packet
        block = self.source.read(fpp)
        self._last_capture = block
        payload = float_to_pcm(block)
        seq = self.frame_index // fpp

        out = []
        header = PacketHeader(
            stream_id=self.local_stream_id, flags=0, seq=seq,
            timestamp_frames=self.frame_index, send_time_us=now_us)
        data = encode(AudioPacket(header, payload), self.stream)
        for addr in self._addr_of.values():
            out.append((addr, data))

        met = self.config.metronome
        if met.enabled and met.owner_peer_id == self.config.local_peer_id:
            click = metronome_block(
                self.frame_index, fpp, met.bpm, met.beats_per_bar,
                self.stream.sample_rate)
            click_header = PacketHeader(
                stream_id=METRONOME_STREAM_ID, flags=FLAG_METRONOME, seq=seq,
                timestamp_frames=self.frame_index, send_time_us=now_us)
            click_data = encode(
                AudioPacket(click_header, float_to_pcm(click)), self.stream)
            for addr in self._addr_of.values():
                out.append((addr, click_data))
            self._last_click = click

        self.frame_index += fpp
        self.dgrams_sent += len(out)
        return out

    def ingest(self, data: bytes, now_us: int, src_addr=None) -> list:
        """One datagram off the wire; returns reply datagrams (pongs)."""
        try:
            packet = decode(data, self.stream)
        except MalformedPacketError:
            self.dgrams_malformed += 1
            return []
        h = packet.header

        if h.flags & FLAG_CONTROL:
            probe = decode_probe(packet.payload)
            if probe is None:
                self.dgrams_malformed += 1
                return []
            self.dgrams_recv += 1
            kind, echo_us = probe
            if kind == PROBE_PING:
                if src_addr is None:
                    src_addr = self._addr_of.get(self._peer_of_stream.get(
                        h.stream_id))
                if src_addr is None:
                    return []
                pong = PacketHeader(
                    stream_id=self.local_stream_id, flags=FLAG_CONTROL,
                    seq=h.seq, timestamp_frames=0, send_time_us=now_us)
                reply = encode(
                    AudioPacket(pong, encode_probe(PROBE_PONG, echo_us)),
                    self.stream)
                self.dgrams_sent += 1
                return [(src_addr, reply)]
            peer = self._peer_of_stream.get(h.stream_id)
            if peer is not None:
                self.rtt[peer].on_pong(echo_us, now_us)
            return []

        if h.stream_id == METRONOME_STREAM_ID and h.is_metronome:
            if not self._met_owner_remote:
                self.dgrams_malformed += 1
                return []
            self.dgrams_recv += 1
            if not self.config.metronome.enabled:
                # locally disabled: drop instead of queueing into a
                # buffer nothing drains; re-enabling starts clean
                self._metronome_buffer = None
                return []
            if self._metronome_buffer is None:
                self._metronome_buffer = JitterBuffer(
                    self._desired_buffer, self.stream)
            self._metronome_buffer.push(
                h.seq, h.send_time_us, now_us, packet.payload)
            return []

        peer = self._peer_of_stream.get(h.stream_id)
        if peer is None:
            self.dgrams_malformed += 1
            return []
        self.dgrams_recv += 1
        self.buffers[peer].push(h.seq, h.send_time_us, now_us, packet.payload)
        return []

    def probe_tick(self, now_us: int) -> list:
        """Pings due at now_us, one per remote peer per second."""
        if now_us < self._next_probe_us:
            return []
        self._next_probe_us += 1_000_000
        out = []
        header = PacketHeader(
            stream_id=self.local_stream_id, flags=FLAG_CONTROL,
            seq=self._probe_seq, timestamp_frames=0, send_time_us=now_us)
        self._probe_seq += 1
        data = encode(
            AudioPacket(header, encode_probe(PROBE_PING, now_us)),
            self.stream)
        for addr in self._addr_of.values():
            out.append((addr, data))
        self.dgrams_sent += len(out)
        return out

    # ---- audio plane ----------------------------------------------------

    def _all_buffers(self):
        bufs = list(self.buffers.values())
        if self._metronome_buffer is not None:
            bufs.append(self._metronome_buffer)
        return bufs

    def _pull_block(self, key, buf, now_us: int) -> np.ndarray:
        payload = buf.pull(self.stream.frames_per_packet, now_us)
        if self._refresh_due:
            self._cached_targets[key] = buf.estimate_target_delay(now_us)
        buf.adapt(self._cached_targets.get(key))
        return pcm_to_float(payload)

    def output_cycle(self, now_us: int) -> dict:
        """Pull every stream, mix onto buses, hand blocks to the sinks.

        Runs the buffer bookkeeping unconditionally; skips the mixing
        arithmetic when no sink cares (NullSink), which is what keeps
        head-less peers cheap.
        """
        self.apply_mutations()
        self._cycles += 1
        self._refresh_due = (self._cycles % self._est_every == 0)

        inputs = {}
        for peer_id, buf in self.buffers.items():
            inputs[peer_id] = self._pull_block(peer_id, buf, now_us)

        met = self.config.metronome
        if met.enabled:
            if met.owner_peer_id == self.config.local_peer_id:
                inputs[METRONOME_SOURCE] = getattr(
                    self, "_last_click",
                    np.zeros(self.stream.frames_per_packet, np.float32))
            elif self._metronome_buffer is not None:
                inputs[METRONOME_SOURCE] = self._pull_block(
                    METRONOME_SOURCE, self._metronome_buffer, now_us)
        inputs[LOCAL_MONITOR_SOURCE] = self._last_capture

        if not any(sink.wants_audio for sink in self.sinks.values()):
            return {}
        buses = mix(inputs, self.config.routing)
        for bus, block in buses.items():
            self.sinks[bus].write(block)
        return buses

    # ---- telemetry ------------------------------------------------------

    def telemetry_due(self, now_us: int) -> bool:
        return now_us >= self._next_sample_s * 1_000_000

    def telemetry_sample(self, now_us: int, final: bool = False) -> list:
        """Rows for every remote stream at the current 1 s boundary.

        Mirrors the simulator's holdback rule: frames concealed so
        recently that a late packet could still reclassify them are not
        reported as lost yet.  A final sample (session teardown) reports
        raw counters instead.
        """
        t_s = self._next_sample_s
        self._next_sample_s += 1
        window = ((t_s - 1) * 1_000_000, t_s * 1_000_000)
        rate = self.stream.sample_rate
        scale = 1000.0 / rate
        stream_ids = self.config.stream_ids()

        rows = []
        entries = [(pid, stream_ids[pid], buf)
                   for pid, buf in self.buffers.items()]
        if self._metronome_buffer is not None:
            entries.append((self.config.metronome.owner_peer_id,
                            METRONOME_STREAM_ID, self._metronome_buffer))
        for pid, sid, buf in sorted(entries, key=lambda e: e[1]):
            pend = 0 if final else buf.pending_reclassifiable_frames()
            lost = buf.frames_lost - pend
            tracker = self.rtt.get(pid)
            rows.append(TelemetryRow(
                t_s=float(t_s),
                peer_id=self.config.local_peer_id,
                stream_id=sid,
                rtt_ms=tracker.rtt_ms_in_window(*window) if tracker else None,
                buffer_target_ms=buf.target_delay_frames * scale,
                buffer_occupancy_ms=(
                    buf.occupancy_frames * 1_000_000 // rate) / 1000.0,
                frames_played=buf.frames_played,
                frames_lost=lost,
                frames_late=buf.frames_late,
                frames_concealed=lost + buf.frames_late,
                frames_skipped=buf.frames_skipped,
                dgrams_sent=self.dgrams_sent,
                dgrams_recv=self.dgrams_recv,
                dgrams_malformed=self.dgrams_malformed,
            ))
        return rows

    # ---- one full cycle --------------------------------------------------

    def cycle(self, now_us: int):
        """Capture + playout + probes + telemetry, in the order the
        threaded driver and the cooperative driver both use.

        Returns (outbound datagrams, telemetry rows or None).
        """
        out = self.capture_cycle(now_us)
        self.output_cycle(now_us)
        out.extend(self.probe_tick(now_us))
        rows = None
        if self.telemetry_due(now_us):
            rows = self.telemetry_sample(now_us)
        return out, rows

    # ---- status surface ---------------------------------------------------

    def status(self, now_us: int) -> dict:
        stream_ids = self.config.stream_ids()
        met = self.config.metronome
        peers = []
        for p in self.config.remotes():
            buf = self.buffers[p.peer_id]
            peers.append({
                "id": p.peer_id,
                "address": "%s:%d" % p.address,
                "stream_id": stream_ids[p.peer_id],
                "rtt_ms": self.rtt[p.peer_id].rtt_ms_in_window(
                    now_us - 2_000_000, now_us),
                "buffer": {
                    "target_frames": buf.target_delay_frames,
                    "occupancy_frames": buf.occupancy_frames,
                },
            })
        return {
            "peer_id": self.config.local_peer_id,
            "stream_id": self.local_stream_id,
            "uptime_s": now_us / 1e6,
            "stream": {
                "sample_rate": self.stream.sample_rate,
                "channels": self.stream.channels,
                "frames_per_packet": self.stream.frames_per_packet,
            },
            "buffer_config": {
                "window_seconds": self._desired_buffer.window_seconds,
                "percentile": self._desired_buffer.percentile,
                "safety_margin_frames":
                    self._desired_buffer.safety_margin_frames,
                "min_target_frames": self._desired_buffer.min_target_frames,
                "max_target_frames": self._desired_buffer.max_target_frames,
            },
            "metronome": {
                "enabled": met.enabled,
                "bpm": met.bpm,
                "beats_per_bar": met.beats_per_bar,
                "owner": met.owner_peer_id,
                "audience_muted": met.audience_muted,
            },
            "routing": {
                source: dict(row)
                for source, row in self.config.routing.gains.items()
            },
            "peers": peers,
            "counters": {
                "dgrams_sent": self.dgrams_sent,
                "dgrams_recv": self.dgrams_recv,
                "dgrams_malformed": self.dgrams_malformed,
            },
        }


# ---- cooperative driver ------------------------------------------------


class LocalMesh:
    """Drives several engines on one virtual clock with a lossless
    constant-delay in-memory transport.

    Engines are stepped in roster order and datagrams delivered in
    (arrival time, send order) order, so every run of the same setup is
    bit-identical - which is the point: this is the harness for the
    exactness and topology tests.
    """

    def __init__(self, configs: list, delay_us: int = 5_000):
        self.engines = {c.local_peer_id: PeerEngine(c) for c in configs}
        self._by_addr = {
            c.local_entry().address: c.local_peer_id for c in configs}
        self.delay_us = delay_us
        self._in_flight = deque()   # (deliver_us, order, dest_id, bytes)
        self._order = 0
        self.telemetry = {pid: [] for pid in self.engines}
        self.now_us = 0

    def _post(self, sends, now_us):
        for addr, data in sends:
            dest = self._by_addr.get(addr)
            if dest is None:
                continue
            self._in_flight.append(
                (now_us + self.delay_us, self._order, dest, data))
            self._order += 1

    def _deliver_due(self, now_us):
        while self._in_flight and self._in_flight[0][0] <= now_us:
            deliver_us, _, dest, data = self._in_flight.popleft()
            replies = self.engines[dest].ingest(data, deliver_us)
            self._post(replies, deliver_us)

    def run(self, seconds: float):
        stream = next(iter(self.engines.values())).stream
        period = stream.packet_interval_us
        cycles = int(round(seconds * 1e6 / period))
        start_cycle = int(round(self.now_us / period))
        for k in range(start_cycle, start_cycle + cycles):
            now = round(k * period)
            self._deliver_due(now)
            for pid in sorted(self.engines):
                engine = self.engines[pid]
                sends, rows = engine.cycle(now)
                self._post(sends, now)
                if rows:
                    self.telemetry[pid].extend(rows)
        self.now_us = round((start_cycle + cycles) * period)


# ---- threaded driver ----------------------------------------------------


class SessionHandle:
    """A running session: the engine, its threads, and its teardown."""

    def __init__(self, engine, sock, writer, lock):
        self.engine = engine
        self.sock = sock
        self.writer = writer
        self.lock = lock
        self.latest_rows = None
        self.latest_cond = threading.Condition(lock)
        self.started_monotonic = time.monotonic()
        self._stop = threading.Event()
        self._threads = []
        self.control_server = None
        self.control_port = None
        self._teardown = threading.Lock()
        self._torn_down = False

    @property
    def stream(self):
        return self.engine.stream

    def now_us(self) -> int:
        return int((time.monotonic() - self.started_monotonic) * 1e6)

    def running(self) -> bool:
        return not self._stop.is_set()

    def stop(self):
        """Idempotent, and safe to race: every caller blocks until the
        teardown (threads joined, logs flushed, sockets closed) has
        completed, no matter which caller performed it."""
        self._stop.set()
        with self._teardown:
            if self._torn_down:
                return
            for t in self._threads:
                if t is not threading.current_thread():
                    t.join()
            if self.control_server is not None:
                self.control_server.shutdown()
                self.control_server.server_close()
                self.control_server = None
            with self.lock:
                final = self.engine.telemetry_sample(self.now_us(),
                                                     final=True)
                if self.writer is not None:
                    for row in final:
                        self.writer.write(row)
                    self.writer.close()
                self.latest_rows = final
                self.latest_cond.notify_all()
            try:
                self.sock.close()
            except OSError:
                pass
            self._torn_down = True

    def wait(self, timeout=None) -> bool:
        """True once the session has been asked to stop."""
        return self._stop.wait(timeout)


def run_session(config: SessionConfig, *, source=None, sinks=None,
                telemetry_log=None, sock=None,
                control_port=None) -> SessionHandle:
    """Start a real peer: UDP socket, cycle thread, receive thread, and
    (optionally) the control API server.

    The caller may pass a pre-bound socket, which is how tests get
    ephemeral ports into the roster before building configs.
    """
    engine = PeerEngine(config)
    engine.attach_audio(source, sinks)
    if sock is None:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        try:
            sock.bind(config.local_entry().address)
        except OSError:
            sock.close()
            raise
    sock.settimeout(0.05)

    writer = None
    if telemetry_log is not None:
        writer = TelemetryWriter(telemetry_log, config.stream)

    lock = threading.RLock()
    handle = SessionHandle(engine, sock, writer, lock)

    period_s = config.stream.packet_interval_us / 1e6

    def cycle_loop():
        next_at = time.monotonic()
        while not handle._stop.is_set():
            next_at += period_s
            with lock:
                now = handle.now_us()
                sends, rows = engine.cycle(now)
                if rows:
                    handle.latest_rows = rows
                    if writer is not None:
                        for row in rows:
                            writer.write(row)
                    handle.latest_cond.notify_all()
                if engine.stop_requested:
                    break
            for addr, data in sends:
                try:
                    sock.sendto(data, addr)
                except OSError:
                    pass
            delay = next_at - time.monotonic()
            if delay > 0:
                time.sleep(delay)
        if engine.stop_requested and not handle._stop.is_set():
            threading.Thread(target=handle.stop, daemon=True).start()

    def recv_loop():
        while not handle._stop.is_set():
            try:
                data, addr = sock.recvfrom(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            with lock:
                replies = engine.ingest(data, handle.now_us(), addr)
            for reply_addr, reply in replies:
                try:
                    sock.sendto(reply, reply_addr)
                except OSError:
                    pass

    threads = [
        threading.Thread(target=cycle_loop, name="mevo-cycle", daemon=True),
        threading.Thread(target=recv_loop, name="mevo-recv", daemon=True),
    ]
    handle._threads = threads

    port = control_port if control_port is not None else config.control_port
    if port is not None:
        from .control import start_control_server
        handle.control_server, handle.control_port = start_control_server(
            handle, port)

    for t in threads:
        t.start()
    return handle
