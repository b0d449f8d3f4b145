"""Link, clock, and randomness models for the network simulator.

Everything here is deterministic given the scenario seed.  Random draws
come from named substreams (one per link and purpose), so adjusting the
loss model never perturbs the jitter draws, and vice versa.  All times
are integer microseconds of true (simulation) time unless a name says
otherwise.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..audio import ConfigError

JITTER_KINDS = ("none", "uniform", "shifted_exponential")


def subseed(seed: int, *key_parts) -> np.random.SeedSequence:
    """SeedSequence for a named substream of the scenario seed.

    The key is hashed, not positional: adding a new consumer anywhere
    does not shift anyone else's draws.
    """
    tag = hashlib.sha256("/".join(map(str, key_parts)).encode()).digest()
    return np.random.SeedSequence(
        entropy=seed, spawn_key=(int.from_bytes(tag[:8], "big"),)
    )


def substream(seed: int, *key_parts) -> np.random.Generator:
    """Generator over the named substream; see subseed."""
    return np.random.Generator(np.random.PCG64(subseed(seed, *key_parts)))


@dataclass(frozen=True)
class Jitter:
    """Per-datagram extra delay distribution, in milliseconds.

    kind "none": always zero.
    kind "uniform": U(low_ms, high_ms).
    kind "shifted_exponential": low_ms + Exp(mean_excess_ms) — a hard
    minimum with a thin exponential tail.
    """

    kind: str = "none"
    low_ms: float = 0.0
    high_ms: float = 0.0
    mean_excess_ms: float = 0.0

    def __post_init__(self):
        if self.kind not in JITTER_KINDS:
            raise ConfigError("unknown jitter kind %r" % (self.kind,))
        if self.low_ms < 0:
            raise ConfigError("jitter low_ms must be >= 0")
        if self.kind == "uniform" and self.high_ms < self.low_ms:
            raise ConfigError("uniform jitter needs high_ms >= low_ms")
        if self.kind == "shifted_exponential" and self.mean_excess_ms < 0:
            raise ConfigError("mean_excess_ms must be >= 0")

    def draw_ms(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(self.low_ms, self.high_ms, n)
        if self.kind == "shifted_exponential":
            return self.low_ms + rng.exponential(self.mean_excess_ms, n)
        return np.zeros(n)


@dataclass(frozen=True)
class BurstModel:
    """Transient congestion episodes overlaid on a link.

    Episodes start as a Poisson process at rate_hz; each lasts
    duration_ms and adds a flat extra delay drawn uniformly from
    [height_min_ms, height_max_ms] to every datagram sent while it is
    active.  One episode timeline is drawn per link and shared by all
    traffic on it, audio and probes alike.
    """

    rate_hz: float
    duration_ms: float
    height_min_ms: float
    height_max_ms: float

    def __post_init__(self):
        if self.rate_hz < 0 or self.duration_ms < 0:
            raise ConfigError("burst rate and duration must be >= 0")
        if not 0 <= self.height_min_ms <= self.height_max_ms:
            raise ConfigError("need 0 <= height_min_ms <= height_max_ms")

    def draw_episodes(self, rng: np.random.Generator, duration_s: float):
        """(start_us sorted, height_ms) arrays for one session."""
        n = rng.poisson(self.rate_hz * duration_s)
        starts = np.sort(rng.uniform(0.0, duration_s * 1e6, n))
        heights = rng.uniform(self.height_min_ms, self.height_max_ms, n)
        return starts, heights


def burst_delay_ms(episodes, duration_ms: float, t_us) -> np.ndarray:
    """Extra delay each send time picks up from the episode timeline."""
    starts, heights = episodes
    t = np.asarray(t_us, dtype=np.float64)
    if starts.size == 0:
        return np.zeros(t.shape)
    idx = np.searchsorted(starts, t, side="right") - 1
    safe = np.maximum(idx, 0)
    inside = (idx >= 0) & (t < starts[safe] + duration_ms * 1000.0)
    return np.where(inside, heights[safe], 0.0)


@dataclass(frozen=True)
class LinkModel:
    """One direction of one peer pair."""

    base_owd_ms: float
    jitter: Jitter = field(default_factory=Jitter)
    loss_prob: float = 0.0
    reorder: bool = False
    burst: BurstModel | None = None

    def __post_init__(self):
        if self.base_owd_ms < 0:
            raise ConfigError("base_owd_ms must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ConfigError("loss_prob must be in [0, 1]")


@dataclass
class DeliverySchedule:
    """Fate of every datagram offered to a link, in send order."""

    send_us: np.ndarray       # int64
    delivered: np.ndarray     # bool
    delivery_us: np.ndarray   # int64, meaningful where delivered

    @property
    def delivered_send_us(self) -> np.ndarray:
        return self.send_us[self.delivered]

    @property
    def delivered_at_us(self) -> np.ndarray:
        return self.delivery_us[self.delivered]


def deliveries(
    link: LinkModel,
    send_times_us,
    seed,
    episodes=None,
) -> DeliverySchedule:
    """Run one flow's datagrams through a link.

    send_times_us must be sorted.  seed may be an int or a SeedSequence;
    loss and jitter use independent substreams of it, and a draw is
    consumed per datagram whether or not it is dropped, so the two
    models never perturb each other.  episodes, when given, is a
    pre-drawn burst timeline shared with other flows on the same link.
    """
    sends = np.asarray(send_times_us, dtype=np.int64)
    if sends.size and (np.diff(sends) < 0).any():
        raise ConfigError("send times must be sorted")

    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    loss_ss, jit_ss, burst_ss = seed.spawn(3)
    loss_rng = np.random.Generator(np.random.PCG64(loss_ss))
    jit_rng = np.random.Generator(np.random.PCG64(jit_ss))

    n = sends.size
    kept = loss_rng.random(n) >= link.loss_prob
    delay_ms = link.base_owd_ms + link.jitter.draw_ms(jit_rng, n)
    if link.burst is not None:
        if episodes is None:
            burst_rng = np.random.Generator(np.random.PCG64(burst_ss))
            horizon_s = (float(sends[-1]) / 1e6 + 1.0) if n else 0.0
            episodes = link.burst.draw_episodes(burst_rng, horizon_s)
        delay_ms = delay_ms + burst_delay_ms(episodes, link.burst.duration_ms, sends)

    delivery = sends + np.rint(delay_ms * 1000.0).astype(np.int64)
    if not link.reorder and n:
        held = delivery[kept]
        if held.size:
            delivery[kept] = np.maximum.accumulate(held)
    return DeliverySchedule(send_us=sends, delivered=kept, delivery_us=delivery)


@dataclass(frozen=True)
class ClockModel:
    """A peer's local microsecond clock relative to true time.

    local = true * (1 + drift_ppm * 1e-6) + offset_us.  Positive drift
    is a fast clock: the peer's audio cycles come slightly closer
    together in true time, so it produces extra frames over a session.
    """

    drift_ppm: float = 0.0
    offset_us: int = 0

    def __post_init__(self):
        if abs(self.drift_ppm) > 1000:
            raise ConfigError("|drift_ppm| must be <= 1000")

    @property
    def scale(self) -> float:
        return 1.0 + self.drift_ppm * 1e-6

    def local_from_true(self, true_us):
        if isinstance(true_us, np.ndarray):
            return np.rint(true_us * self.scale).astype(np.int64) + self.offset_us
        return int(round(true_us * self.scale)) + self.offset_us

    def true_from_local(self, local_us):
        if isinstance(local_us, np.ndarray):
            return np.rint((local_us - self.offset_us) / self.scale).astype(np.int64)
        return int(round((local_us - self.offset_us) / self.scale))

    def cycle_times_true_us(self, n_cycles: int, period_us: float) -> np.ndarray:
        """True times at which this peer's elapsed local clock crosses
        k * period_us, for k in 0..n-1.

        The offset shifts clock readings, not activity: a peer starts
        cycling when the session starts.  Each tick is rounded
        independently from the exact product, so rounding error never
        accumulates across a long session.
        """
        k = np.arange(n_cycles, dtype=np.float64)
        return np.rint(k * period_us / self.scale).astype(np.int64)
