import pytest

from mevo.telemetry import (
    COLUMNS,
    PROBE_PING,
    PROBE_PONG,
    RttTracker,
    TelemetryRow,
    TelemetryWriter,
    decode_probe,
    encode_probe,
    format_row,
    metadata_line,
)
from mevo.wire import StreamConfig


def row(**overrides):
    base = dict(
        t_s=12.0, peer_id="turin", stream_id=3, rtt_ms=52.013,
        buffer_target_ms=1.28, buffer_occupancy_ms=2.561,
        frames_played=100, frames_lost=1, frames_late=2,
        frames_concealed=3, frames_skipped=4,
        dgrams_sent=10, dgrams_recv=11, dgrams_malformed=0,
    )
    base.update(overrides)
    return TelemetryRow(**base)


def test_schema_columns_are_pinned():
    assert ",".join(COLUMNS) == (
        "t_s,peer_id,stream_id,rtt_ms,buffer_target_ms,buffer_occupancy_ms,"
        "frames_played,frames_lost,frames_late,frames_concealed,"
        "frames_skipped,dgrams_sent,dgrams_recv,dgrams_malformed"
    )


def test_row_formatting_is_fixed_width():
    assert format_row(row()) == (
        "12.000,turin,3,52.013,1.280,2.561,100,1,2,3,4,10,11,0"
    )


def test_null_rtt_is_an_empty_field():
    line = format_row(row(rtt_ms=None))
    fields = line.split(",")
    assert len(fields) == len(COLUMNS)
    assert fields[3] == ""


def test_metadata_line_carries_rate_and_packet_size():
    stream = StreamConfig(sample_rate=44100, frames_per_packet=128)
    assert metadata_line(stream) == "# mevo-telemetry v1 rate=44100 fpp=128"


def test_writer_produces_parseable_log(tmp_path):
    path = tmp_path / "session.csv"
    w = TelemetryWriter(path, StreamConfig())
    w.write(row(t_s=1.0))
    w.write(row(t_s=2.0, rtt_ms=None))
    w.close()
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# mevo-telemetry v1")
    assert lines[1] == ",".join(COLUMNS)
    assert len(lines) == 4
    assert w.error is None


def test_writer_falls_back_to_ring_on_failure(tmp_path):
    w = TelemetryWriter(tmp_path / "missing_dir" / "log.csv", StreamConfig())
    assert w.error is not None
    for i in range(3700):
        w.write(row(t_s=float(i)))
    assert len(w.ring) == 3600
    assert w.ring[0].startswith("100.000,")  # oldest 100 rows were dropped
    w.close()


def test_probe_payload_roundtrip():
    for kind in (PROBE_PING, PROBE_PONG):
        for echo in (0, 123_456_789, 2**48 - 1, 2**48 + 5):
            payload = encode_probe(kind, echo)
            assert len(payload) == 8
            got = decode_probe(payload)
            assert got == (kind, echo % 2**48)


def test_probe_decode_rejects_junk():
    assert decode_probe(b"") is None
    assert decode_probe(b"\x01\x00\x00") is None
    assert decode_probe(b"\x07" + bytes(7)) is None
    with pytest.raises(ValueError):
        encode_probe(0x09, 0)


def test_rtt_tracker_window_association():
    tr = RttTracker()
    assert tr.rtt_ms_in_window(0, 1_000_000) is None
    # ping sent at 500_000 (probe clock echoed), pong back at 552_000
    tr.on_pong(echo_us=500_000, now_us=552_000)
    assert tr.rtt_ms_in_window(0, 1_000_000) == 52.0
    # the next window has no completion of its own
    assert tr.rtt_ms_in_window(1_000_000, 2_000_000) is None


def test_rtt_tracker_ignores_expired_and_negative():
    tr = RttTracker()
    tr.on_pong(echo_us=1_000_000, now_us=4_500_000)  # 3.5 s: past timeout
    assert tr.rtt_ms_in_window(4_000_000, 5_000_000) is None
    tr.on_pong(echo_us=6_000_000, now_us=5_900_000)  # negative: bogus echo
    assert tr.rtt_ms_in_window(5_000_000, 6_000_000) is None
