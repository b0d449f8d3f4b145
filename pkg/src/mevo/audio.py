"""PCM sources and sinks, bus mixing, and the metronome generator.

Audio blocks are interleaved float32 in [-1, 1] internally; the wire
carries big-endian int16.  Conversion is exact both ways for 16-bit
material, so a single stream routed at gain 1.0 survives the trip
bit-for-bit.
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field

import numpy as np


class ConfigError(ValueError):
    """A session or routing parameter is outside its contract."""


BUSES = ("musician_monitor", "audience")
METRONOME_SOURCE = "metronome"

CLICK_FREQ_HZ = 1000.0
CLICK_LEN_MS = 20
CLICK_FADE_MS = 5
CLICK_ACCENT_AMP = 0.8
CLICK_BEAT_AMP = 0.5

_SCALE = 32768.0


def pcm_to_float(data: bytes) -> np.ndarray:
    """Big-endian int16 bytes to float32 samples in [-1, 1)."""
    return np.frombuffer(data, dtype=">i2").astype(np.float32) / np.float32(_SCALE)


def float_to_pcm(block: np.ndarray) -> bytes:
    """Float samples to big-endian int16 bytes, saturating at full scale."""
    scaled = np.rint(np.asarray(block, dtype=np.float64) * _SCALE)
    return np.clip(scaled, -32768, 32767).astype(">i2").tobytes()


@dataclass
class RoutingMatrix:
    """Linear gains from named sources onto named buses.

    Mutable on purpose: the control API adjusts entries while a session
    runs.  A missing entry means gain zero, and zero-gain sources are
    excluded from the mix sum entirely, so silence there is bit-exact.
    """

    gains: dict = field(default_factory=dict)  # source -> {bus -> gain}

    def __post_init__(self):
        for source, row in self.gains.items():
            for bus, gain in row.items():
                self._check(source, bus, gain)

    @staticmethod
    def _check(source, bus, gain):
        if not isinstance(gain, (int, float)) or not 0.0 <= gain <= 1.0:
            raise ConfigError(
                "gain for %r -> %r must be in [0, 1], got %r" % (source, bus, gain)
            )

    def gain(self, source: str, bus: str) -> float:
        return self.gains.get(source, {}).get(bus, 0.0)

    def set_gain(self, source: str, bus: str, gain: float):
        self._check(source, bus, gain)
        self.gains.setdefault(source, {})[bus] = float(gain)


def mix(inputs: dict, matrix: RoutingMatrix, buses=BUSES) -> dict:
    """Sum named source blocks onto each bus and clamp to [-1, 1].

    All blocks must be the same length.  Sources with zero gain on a bus
    do not participate in that bus at all.
    """
    lengths = {len(block) for block in inputs.values()}
    if len(lengths) > 1:
        raise ConfigError("mix inputs differ in length: %s" % sorted(lengths))
    n = lengths.pop() if lengths else 0

    out = {}
    for bus in buses:
        acc = None
        for name, block in inputs.items():
            g = matrix.gain(name, bus)
            if g == 0.0:
                continue
            contrib = block if g == 1.0 else block * np.float32(g)
            acc = contrib.astype(np.float32, copy=True) if acc is None else acc + contrib
        if acc is None:
            out[bus] = np.zeros(n, dtype=np.float32)
        else:
            np.clip(acc, -1.0, 1.0, out=acc)
            out[bus] = acc
    return out


def metronome_block(
    start_frame: int,
    n_frames: int,
    bpm: float,
    beats_per_bar: int,
    sample_rate: int,
) -> np.ndarray:
    """Metronome samples for frames [start_frame, start_frame + n_frames).

    Stateless: any partition of the timeline into blocks concatenates to
    the same signal.  Each beat k is a 1 kHz sine burst of 20 ms with a
    5 ms linear fade-out, starting at frame round(k * 60 * rate / bpm),
    amplitude 0.8 on the first beat of each bar and 0.5 otherwise.
    """
    if not 20 <= bpm <= 300:
        raise ConfigError("bpm must be in [20, 300], got %r" % (bpm,))
    if beats_per_bar < 1:
        raise ConfigError("beats_per_bar must be >= 1")

    out = np.zeros(n_frames, dtype=np.float32)
    step = 60.0 * sample_rate / bpm
    burst = round(sample_rate * CLICK_LEN_MS / 1000)
    fade = round(sample_rate * CLICK_FADE_MS / 1000)

    k = max(0, math.floor((start_frame - burst) / step))
    while True:
        onset = round(k * step)
        if onset >= start_frame + n_frames:
            break
        if onset + burst > start_frame:
            lo = max(onset, start_frame)
            hi = min(onset + burst, start_frame + n_frames)
            i = np.arange(lo - onset, hi - onset, dtype=np.float64)
            env = np.where(i < burst - fade, 1.0, (burst - i) / fade)
            amp = CLICK_ACCENT_AMP if k % beats_per_bar == 0 else CLICK_BEAT_AMP
            tone = amp * np.sin(2.0 * np.pi * CLICK_FREQ_HZ * i / sample_rate) * env
            out[lo - start_frame:hi - start_frame] = tone.astype(np.float32)
        k += 1
    return out


# ---- capture sources -------------------------------------------------


class SilenceSource:
    def __init__(self, sample_rate=44100, channels=1):
        self.channels = channels

    def read(self, n_frames: int) -> np.ndarray:
        return np.zeros(n_frames * self.channels, dtype=np.float32)


class SineSource:
    """Continuous sine tone; phase carries across reads."""

    def __init__(self, frequency=440.0, amplitude=0.5, sample_rate=44100,
                 channels=1):
        self.frequency = frequency
        self.amplitude = amplitude
        self.sample_rate = sample_rate
        self.channels = channels
        self._pos = 0

    def read(self, n_frames: int) -> np.ndarray:
        i = np.arange(self._pos, self._pos + n_frames, dtype=np.float64)
        self._pos += n_frames
        x = self.amplitude * np.sin(
            2.0 * np.pi * self.frequency * i / self.sample_rate
        )
        x = x.astype(np.float32)
        if self.channels > 1:
            x = np.repeat(x, self.channels)
        return x


class FileSource:
    """Loops a 16-bit PCM WAV file as the capture signal.

    No resampling or channel mapping: the file must match the session's
    sample rate and channel count.
    """

    def __init__(self, path, sample_rate=44100, channels=1):
        with wave.open(str(path), "rb") as wav:
            if wav.getsampwidth() != 2:
                raise ConfigError("%s: only 16-bit PCM WAV is supported" % path)
            if wav.getframerate() != sample_rate:
                raise ConfigError(
                    "%s: file rate %d does not match session rate %d"
                    % (path, wav.getframerate(), sample_rate)
                )
            if wav.getnchannels() != channels:
                raise ConfigError(
                    "%s: file has %d channels, session wants %d"
                    % (path, wav.getnchannels(), channels)
                )
            raw = wav.readframes(wav.getnframes())
        samples = np.frombuffer(raw, dtype="<i2").astype(np.float32)
        self._data = samples / np.float32(_SCALE)
        if self._data.size == 0:
            raise ConfigError("%s: file contains no audio" % path)
        self.channels = channels
        self._pos = 0

    def read(self, n_frames: int) -> np.ndarray:
        want = n_frames * self.channels
        out = np.empty(want, dtype=np.float32)
        filled = 0
        while filled < want:
            chunk = self._data[self._pos:self._pos + want - filled]
            out[filled:filled + chunk.size] = chunk
            filled += chunk.size
            self._pos = (self._pos + chunk.size) % self._data.size
        return out


# ---- playback sinks --------------------------------------------------


class NullSink:
    """Discards output; lets the engine skip rendering the bus at all."""

    wants_audio = False

    def write(self, block: np.ndarray):
        pass


class CaptureSink:
    """Accumulates everything written, for offline inspection."""

    wants_audio = True

    def __init__(self):
        self.blocks = []

    def write(self, block: np.ndarray):
        self.blocks.append(np.array(block, copy=True))

    def samples(self) -> np.ndarray:
        if not self.blocks:
            return np.zeros(0, dtype=np.float32)
        return np.concatenate(self.blocks)
