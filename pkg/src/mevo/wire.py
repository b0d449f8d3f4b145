"""Datagram format for peer-to-peer PCM streaming.

Every datagram is one fixed header followed by the raw payload:

    offset  size  field
    0       4     magic, ASCII "MEVO"
    4       1     version, currently 1
    5       1     stream_id
    6       1     flags (bit0 metronome stream, bit1 control/probe)
    7       2     seq, big-endian, wraps mod 2**16
    9       4     timestamp_frames, big-endian, wraps mod 2**32
    13      6     send_time_us, big-endian, sender clock, wraps mod 2**48
    19      -     payload

All integers are big-endian.  Audio payloads are interleaved signed 16-bit
big-endian PCM, exactly frames_per_packet * channels samples.  Control
payloads (flags bit1) are free-form and validated by the layer that owns
them.  The full layout, including the probe payload convention, is written
down in docs/wire-format.md and frozen by the golden-bytes fixture.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

MAGIC = b"MEVO"
VERSION = 1
HEADER_SIZE = 19
MAX_DATAGRAM = 1472  # stay under a 1500-byte MTU minus IP/UDP headers

FLAG_METRONOME = 0x01
FLAG_CONTROL = 0x02

SEQ_MOD = 1 << 16
TIMESTAMP_MOD = 1 << 32
SEND_TIME_MOD = 1 << 48

# 48-bit send_time has no struct code; split into high 16 + low 32 bits.
_HEADER = struct.Struct(">4sBBBHIHI")
assert _HEADER.size == HEADER_SIZE


class WireError(ValueError):
    """Anything wrong with datagram construction."""


class MalformedPacketError(WireError):
    """Incoming datagram that cannot be a valid packet.

    Receivers drop these and count them; they must never take the
    session down.
    """


@dataclass(frozen=True)
class StreamConfig:
    """Shape of one PCM stream; both ends must agree on it."""

    sample_rate: int = 44100
    channels: int = 1
    frames_per_packet: int = 128

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise WireError("sample_rate must be positive")
        if self.channels < 1:
            raise WireError("channels must be >= 1")
        if not 1 <= self.frames_per_packet <= 1024:
            raise WireError("frames_per_packet out of range 1..1024")
        if HEADER_SIZE + self.payload_bytes > MAX_DATAGRAM:
            raise WireError(
                "datagram would exceed %d bytes; lower frames_per_packet"
                % MAX_DATAGRAM
            )

    @property
    def payload_bytes(self) -> int:
        return self.frames_per_packet * self.channels * 2

    @property
    def packet_interval_us(self) -> float:
        return self.frames_per_packet * 1e6 / self.sample_rate


@dataclass(frozen=True)
class PacketHeader:
    stream_id: int
    flags: int
    seq: int
    timestamp_frames: int
    send_time_us: int

    @property
    def is_control(self) -> bool:
        return bool(self.flags & FLAG_CONTROL)

    @property
    def is_metronome(self) -> bool:
        return bool(self.flags & FLAG_METRONOME)


@dataclass(frozen=True)
class AudioPacket:
    header: PacketHeader
    payload: bytes


def encode(packet: AudioPacket, config: StreamConfig) -> bytes:
    """Serialize a packet; raises WireError on a bad payload length.

    seq / timestamp_frames / send_time_us are reduced modulo their field
    widths so callers can carry unwrapped counters.
    """
    h = packet.header
    if not 0 <= h.stream_id <= 0xFF:
        raise WireError("stream_id out of range")
    if not 0 <= h.flags <= 0xFF:
        raise WireError("flags out of range")
    if h.is_control:
        if HEADER_SIZE + len(packet.payload) > MAX_DATAGRAM:
            raise WireError("control payload too large")
    elif len(packet.payload) != config.payload_bytes:
        raise WireError(
            "payload is %d bytes, stream config requires %d"
            % (len(packet.payload), config.payload_bytes)
        )
    send = h.send_time_us % SEND_TIME_MOD
    head = _HEADER.pack(
        MAGIC,
        VERSION,
        h.stream_id,
        h.flags,
        h.seq % SEQ_MOD,
        h.timestamp_frames % TIMESTAMP_MOD,
        send >> 32,
        send & 0xFFFFFFFF,
    )
    return head + packet.payload


def decode(data: bytes, config: StreamConfig) -> AudioPacket:
    """Parse an incoming datagram.

    Raises MalformedPacketError for anything that is not a well-formed
    packet: short data, wrong magic, unsupported version, or an audio
    payload whose length disagrees with the stream config.  Control
    packets carry free-form payloads and are length-checked by their
    own layer.
    """
    if len(data) < HEADER_SIZE:
        raise MalformedPacketError("truncated header (%d bytes)" % len(data))
    magic, version, stream_id, flags, seq, ts, send_hi, send_lo = (
        _HEADER.unpack_from(data)
    )
    if magic != MAGIC:
        raise MalformedPacketError("bad magic %r" % magic)
    if version != VERSION:
        raise MalformedPacketError("unsupported version %d" % version)
    payload = data[HEADER_SIZE:]
    if not flags & FLAG_CONTROL and len(payload) != config.payload_bytes:
        raise MalformedPacketError(
            "audio payload is %d bytes, expected %d"
            % (len(payload), config.payload_bytes)
        )
    header = PacketHeader(
        stream_id=stream_id,
        flags=flags,
        seq=seq,
        timestamp_frames=ts,
        send_time_us=(send_hi << 32) | send_lo,
    )
    return AudioPacket(header=header, payload=payload)


def seq_distance(a: int, b: int) -> int:
    """Signed smallest distance from seq a to seq b on the 16-bit ring.

    Result is in [-32768, 32767]; exactly half the ring away counts as
    older (negative).  seq_distance(5, 8) == 3, seq_distance(65535, 0)
    == 1, seq_distance(0, 32768) == -32768.
    """
    return ((b - a + 0x8000) % SEQ_MOD) - 0x8000


def unwrap_seq(reference_ext: int, seq: int) -> int:
    """Extend a wrapped seq to the unwrapped counter nearest reference_ext."""
    return reference_ext + seq_distance(reference_ext % SEQ_MOD, seq)
