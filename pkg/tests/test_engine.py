"""Whole-engine tests on the deterministic in-process mesh, plus the
threaded loopback session."""

import numpy as np
import pytest

from mevo.audio import CaptureSink, ConfigError, SineSource, float_to_pcm
from mevo.engine import (
    LOCAL_MONITOR_SOURCE,
    METRONOME_STREAM_ID,
    LocalMesh,
    MetronomeConfig,
    PeerEngine,
    PeerEntry,
    SessionConfig,
    load_session,
    run_session,
)
from mevo.audio import METRONOME_SOURCE, RoutingMatrix
from mevo.jitter import JitterBufferConfig
from mevo.wire import StreamConfig

FPP = 128
STREAM = StreamConfig(sample_rate=44100, channels=1, frames_per_packet=FPP)


class RandomSource:
    """Seeded full-scale int16 noise; every sample survives the wire
    conversion exactly, which makes bit-comparisons meaningful."""

    def __init__(self, seed, channels=1):
        self._rng = np.random.default_rng(seed)
        self.channels = channels

    def read(self, n_frames):
        ints = self._rng.integers(-32768, 32768,
                                  size=n_frames * self.channels)
        return (ints / 32768.0).astype(np.float32)


def roster(n=2):
    names = ["alpha", "bravo", "charlie", "delta"][:n]
    return [PeerEntry(pid, "127.0.0.1", 9100 + i)
            for i, pid in enumerate(names)]


def config(local, peers=None, **kw):
    return SessionConfig(
        local_peer_id=local,
        peers=peers if peers is not None else roster(),
        stream=kw.pop("stream", STREAM),
        buffer=kw.pop("buffer", JitterBufferConfig()),
        **kw,
    )


def mesh_for(n=2, delay_us=5_000, **kw):
    peers = roster(n)
    return LocalMesh(
        [config(p.peer_id, peers=peers, **kw) for p in peers],
        delay_us=delay_us,
    )


# ---- configuration ----------------------------------------------------


def test_duplicate_peer_ids_rejected():
    peers = [PeerEntry("a", "h", 1), PeerEntry("a", "h", 2)]
    with pytest.raises(ConfigError):
        SessionConfig(local_peer_id="a", peers=peers)


def test_local_peer_must_be_in_roster():
    with pytest.raises(ConfigError):
        SessionConfig(local_peer_id="nobody", peers=roster())


def test_metronome_owner_must_be_in_roster():
    with pytest.raises(ConfigError):
        config("alpha", metronome=MetronomeConfig(
            enabled=True, owner_peer_id="ghost"))


def test_enabled_metronome_needs_an_owner():
    with pytest.raises(ConfigError):
        config("alpha", metronome=MetronomeConfig(enabled=True))


def test_muted_metronome_cannot_route_to_audience():
    routing = RoutingMatrix()
    routing.set_gain(METRONOME_SOURCE, "audience", 0.5)
    with pytest.raises(ConfigError):
        config("alpha", routing=routing, metronome=MetronomeConfig(
            enabled=True, owner_peer_id="alpha", audience_muted=True))


def test_stream_ids_are_roster_sorted_order():
    cfg = config("bravo", peers=roster(3))
    assert cfg.stream_ids() == {"alpha": 0, "bravo": 1, "charlie": 2}


def test_session_file_roundtrip(tmp_path):
    path = tmp_path / "session.toml"
    path.write_text(
        """
        local_peer_id = "alpha"
        control_port = 9999

        [[peer]]
        id = "alpha"
        address = "127.0.0.1:9100"

        [[peer]]
        id = "bravo"
        address = "10.0.0.2:9100"

        [stream]
        frames_per_packet = 64

        [buffer]
        percentile = 95.0

        [metronome]
        enabled = true
        bpm = 96
        owner = "alpha"

        [[route]]
        source = "bravo"
        bus = "musician_monitor"
        gain = 0.75
        """
    )
    cfg = load_session(path)
    assert cfg.local_peer_id == "alpha"
    assert cfg.control_port == 9999
    assert cfg.peers[1].address == ("10.0.0.2", 9100)
    assert cfg.stream.frames_per_packet == 64
    assert cfg.buffer.percentile == 95.0
    assert cfg.metronome.bpm == 96
    assert cfg.routing.gain("bravo", "musician_monitor") == 0.75


def test_bad_address_rejected(tmp_path):
    path = tmp_path / "session.toml"
    path.write_text(
        'local_peer_id = "a"\n[[peer]]\nid = "a"\naddress = "nocolon"\n')
    with pytest.raises(ConfigError):
        load_session(path)


# ---- datagram plane ----------------------------------------------------


def test_fanout_is_exactly_peers_minus_one_per_cycle():
    cfg = config("alpha", peers=roster(4))
    engine = PeerEngine(cfg)
    for k in range(50):
        sends = engine.capture_cycle(k * 2902)
        assert len(sends) == 3
    assert engine.dgrams_sent == 150


def test_metronome_owner_sends_a_second_stream():
    cfg = config("alpha", peers=roster(3), metronome=MetronomeConfig(
        enabled=True, owner_peer_id="alpha"))
    engine = PeerEngine(cfg)
    sends = engine.capture_cycle(0)
    assert len(sends) == 4  # live audio x2 peers + click x2 peers


def test_malformed_datagrams_are_counted_never_fatal():
    engine = PeerEngine(config("alpha"))
    engine.ingest(b"", 0)
    engine.ingest(b"JUNK" + bytes(40), 0)
    engine.ingest(b"MEVO" + bytes(10), 0)          # truncated header
    good = PeerEngine(config("bravo")).capture_cycle(0)[0][1]
    engine.ingest(good[:-1], 0)                    # payload length off
    engine.ingest(good[:5] + b"\x07" + good[6:], 0)  # unknown stream id
    assert engine.dgrams_malformed == 5
    assert engine.dgrams_recv == 0


def test_mutations_apply_at_cycle_boundary_not_immediately():
    cfg = config("alpha", metronome=MetronomeConfig(
        enabled=False, owner_peer_id="alpha"))
    engine = PeerEngine(cfg)
    engine.request_metronome_change(enabled=True, bpm=200)
    assert engine.config.metronome.enabled is False
    engine.output_cycle(0)
    assert engine.config.metronome.enabled is True
    assert engine.config.metronome.bpm == 200


def test_invalid_mutations_raise_and_change_nothing():
    engine = PeerEngine(config("alpha"))
    with pytest.raises(ConfigError):
        engine.request_buffer_change(percentile=200)
    with pytest.raises(ConfigError):
        engine.request_routing_change("ghost", "audience", 0.5)
    with pytest.raises(ConfigError):
        engine.request_routing_change("bravo", "no_such_bus", 0.5)
    engine.output_cycle(0)
    assert engine.config.buffer.percentile == 99.0


# ---- mesh: telemetry and probes -----------------------------------------


def test_mesh_rtt_is_twice_the_link_delay():
    mesh = mesh_for(delay_us=5_000)
    mesh.run(3.0)
    rtts = [r.rtt_ms for r in mesh.telemetry["alpha"]]
    assert rtts and all(r == 10.0 for r in rtts)


def test_mesh_one_row_per_remote_stream_per_second():
    mesh = mesh_for(3)
    mesh.run(3.5)
    rows = mesh.telemetry["bravo"]
    seen = {(r.t_s, r.stream_id) for r in rows}
    assert seen == {(float(t), sid) for t in (1, 2, 3) for sid in (0, 2)}


def test_mesh_lossless_run_has_clean_counters():
    mesh = mesh_for()
    mesh.run(4.0)
    for engine in mesh.engines.values():
        for buf in engine.buffers.values():
            c = buf.counters()
            assert c.frames_lost == 0
            assert c.frames_late == 0
            assert c.frames_skipped == 0


# ---- mesh: exactness -----------------------------------------------------


def run_capture(sources, seconds=2.0, routing_overrides=(), n=2,
                metronome=None, capture_bus="musician_monitor",
                capture_at=None):
    """Run a mesh where each peer may get a source, capture one bus at
    one peer, and return (captured int16 bytes, mesh)."""
    peers = roster(n)
    configs = []
    for p in peers:
        kw = {}
        if metronome is not None:
            kw["metronome"] = MetronomeConfig(**metronome)
        configs.append(config(p.peer_id, peers=peers, **kw))
    for cfg in configs:
        for source, bus, gain in routing_overrides:
            cfg.routing.set_gain(source, bus, gain)
    mesh = LocalMesh(configs, delay_us=5_000)
    for pid, source in sources.items():
        mesh.engines[pid].attach_audio(source, None)
    sink = CaptureSink()
    mesh.engines[capture_at or peers[-1].peer_id].attach_audio(
        None, {capture_bus: sink})
    mesh.run(seconds)
    return float_to_pcm(sink.samples()), mesh


def test_lossless_mesh_output_is_bit_identical_to_sender_pcm():
    source = RandomSource(7)
    reference = RandomSource(7)
    captured, _ = run_capture({"alpha": source})
    sent = float_to_pcm(reference.read(96_000))

    # playout starts on the pull grid, so the offset is whole packets
    frame_bytes = 2
    for offset in range(0, 40 * FPP, FPP):
        start = offset * frame_bytes
        if captured[start:start + FPP * frame_bytes] == sent[:FPP * frame_bytes]:
            break
    else:
        pytest.fail("sender packet 0 never appears on the output bus")
    assert captured[start:] == sent[:len(captured) - start]
    assert not any(captured[:start])


def test_zero_routing_row_removes_stream_bit_exactly():
    noisy, _ = run_capture(
        {"alpha": SineSource(440.0, 0.5), "bravo": RandomSource(3)},
        n=3, routing_overrides=[("bravo", "musician_monitor", 0.0),
                                ("bravo", "audience", 0.0)],
        capture_at="charlie")
    silent, _ = run_capture(
        {"alpha": SineSource(440.0, 0.5)},
        n=3, routing_overrides=[("bravo", "musician_monitor", 0.0),
                                ("bravo", "audience", 0.0)],
        capture_at="charlie")
    assert noisy == silent


def test_muted_metronome_is_bit_exactly_absent_from_audience_bus():
    met = dict(enabled=True, bpm=120, owner_peer_id="alpha",
               audience_muted=True)
    with_click, _ = run_capture(
        {"alpha": RandomSource(11)}, metronome=met, capture_bus="audience")
    without, _ = run_capture(
        {"alpha": RandomSource(11)}, capture_bus="audience")
    assert with_click == without

    monitor_click, _ = run_capture(
        {"alpha": RandomSource(11)}, metronome=met)
    monitor_plain, _ = run_capture({"alpha": RandomSource(11)})
    assert monitor_click != monitor_plain   # the musicians do hear it


def test_concert_topology_monitor_invariant_under_remote_content():
    # alpha plays the Turin role: its monitor drops the bravo stream
    overrides = [("bravo", "musician_monitor", 0.0)]
    first, _ = run_capture(
        {"alpha": SineSource(330.0, 0.4), "bravo": RandomSource(5)},
        routing_overrides=overrides, capture_at="alpha")
    second, _ = run_capture(
        {"alpha": SineSource(330.0, 0.4), "bravo": SineSource(999.0, 0.9)},
        routing_overrides=overrides, capture_at="alpha")
    assert first == second


def test_local_monitor_row_feeds_own_capture_back():
    captured, _ = run_capture(
        {"alpha": RandomSource(13)},
        routing_overrides=[(LOCAL_MONITOR_SOURCE, "musician_monitor", 1.0)],
        capture_at="alpha", seconds=0.5)
    reference = float_to_pcm(RandomSource(13).read(len(captured) // 2))
    assert captured == reference[:len(captured)]


def test_metronome_stream_reaches_remote_telemetry():
    met = dict(enabled=True, bpm=120, owner_peer_id="alpha")
    _, mesh = run_capture({"alpha": SineSource()}, metronome=met,
                          seconds=2.5)
    rows = mesh.telemetry["bravo"]
    met_rows = [r for r in rows if r.stream_id == METRONOME_STREAM_ID]
    assert met_rows
    assert met_rows[-1].frames_played > 0
    assert all(r.peer_id == "bravo" for r in rows)


def test_determinism_same_mesh_same_bytes():
    a, _ = run_capture({"alpha": RandomSource(21), "bravo": RandomSource(9)},
                       seconds=1.5)
    b, _ = run_capture({"alpha": RandomSource(21), "bravo": RandomSource(9)},
                       seconds=1.5)
    assert a == b


# ---- threaded loopback ----------------------------------------------------


def loopback_pair(tmp_path, **buffer_kw):
    import socket as socket_mod

    socks = []
    ports = []
    for _ in range(2):
        s = socket_mod.socket(socket_mod.AF_INET, socket_mod.SOCK_DGRAM)
        s.bind(("127.0.0.1", 0))
        socks.append(s)
        ports.append(s.getsockname()[1])
    peers = [PeerEntry("send", "127.0.0.1", ports[0]),
             PeerEntry("recv", "127.0.0.1", ports[1])]
    buffer = JitterBufferConfig(min_target_frames=256, **buffer_kw)
    cfg_send = SessionConfig("send", peers, stream=STREAM, buffer=buffer)
    cfg_recv = SessionConfig("recv", peers, stream=STREAM, buffer=buffer)
    return socks, cfg_send, cfg_recv


def test_loopback_session_carries_a_sine(tmp_path):
    import time

    socks, cfg_send, cfg_recv = loopback_pair(tmp_path)
    sink = CaptureSink()
    sender = run_session(cfg_send, source=SineSource(440.0, 0.5),
                         sock=socks[0],
                         telemetry_log=tmp_path / "send.csv")
    receiver = run_session(cfg_recv, sinks={"musician_monitor": sink},
                           sock=socks[1],
                           telemetry_log=tmp_path / "recv.csv")
    try:
        time.sleep(2.5)
    finally:
        sender.stop()
        receiver.stop()

    samples = sink.samples().astype(np.float64)
    assert samples.size > 44_100
    x = samples[-66_150:]                      # the steady last 1.5 s
    t = np.arange(x.size)
    w = 2 * np.pi * 440.0 / 44_100
    a = 2 / x.size * np.sum(x * np.sin(w * t))
    b = 2 / x.size * np.sum(x * np.cos(w * t))
    fit_energy = (a * a + b * b) / 2 * x.size
    total = np.sum(x * x)
    correlation = np.sqrt(fit_energy / total) if total else 0.0
    assert correlation > 0.999

    log = (tmp_path / "recv.csv").read_text().splitlines()
    assert log[0].startswith("# mevo-telemetry v1")
    assert len(log) > 3                        # header + rows + final
