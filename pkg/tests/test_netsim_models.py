import math

import numpy as np
import pytest

from mevo.audio import ConfigError
from mevo.netsim import (
    BurstModel,
    ClockModel,
    Jitter,
    LinkModel,
    deliveries,
    substream,
)
from mevo.netsim.models import burst_delay_ms


def sends(n, spacing_us=2902):
    return np.arange(n, dtype=np.int64) * spacing_us


# ---- delivery schedules ----------------------------------------------


def test_same_seed_same_schedule():
    link = LinkModel(base_owd_ms=20.0,
                     jitter=Jitter("uniform", 0.0, 8.0), loss_prob=0.02)
    a = deliveries(link, sends(5000), seed=42)
    b = deliveries(link, sends(5000), seed=42)
    assert np.array_equal(a.delivered, b.delivered)
    assert np.array_equal(a.delivery_us, b.delivery_us)
    c = deliveries(link, sends(5000), seed=43)
    assert not np.array_equal(a.delivery_us, c.delivery_us)


def test_total_loss_delivers_nothing():
    link = LinkModel(base_owd_ms=5.0, loss_prob=1.0)
    sched = deliveries(link, sends(100), seed=1)
    assert not sched.delivered.any()


def test_no_jitter_preserves_spacing_exactly():
    link = LinkModel(base_owd_ms=25.0)
    sched = deliveries(link, sends(1000), seed=7)
    assert sched.delivered.all()
    assert np.array_equal(sched.delivered_at_us, sends(1000) + 25_000)


def test_loss_rate_within_binomial_bound():
    p = 0.00177
    n = 200_000
    link = LinkModel(base_owd_ms=25.0, loss_prob=p)
    sched = deliveries(link, sends(n), seed=11)
    dropped = n - int(sched.delivered.sum())
    sigma = math.sqrt(n * p * (1 - p))
    assert abs(dropped - n * p) <= 3 * sigma


def test_uniform_jitter_matches_distribution():
    n = 100_000
    link = LinkModel(base_owd_ms=10.0, jitter=Jitter("uniform", 0.0, 10.0),
                     reorder=True)
    sched = deliveries(link, sends(n), seed=3)
    delay_ms = (sched.delivered_at_us - sched.delivered_send_us) / 1000.0
    assert delay_ms.min() >= 10.0
    assert delay_ms.max() <= 20.0
    counts, _ = np.histogram(delay_ms, bins=10, range=(10.0, 20.0))
    expected = n / 10
    assert (np.abs(counts - expected) < 5 * math.sqrt(expected)).all()


def test_shifted_exponential_min_and_mean():
    n = 100_000
    link = LinkModel(
        base_owd_ms=25.0,
        jitter=Jitter("shifted_exponential", low_ms=0.765, mean_excess_ms=0.08),
        reorder=True,
    )
    sched = deliveries(link, sends(n), seed=5)
    delay_ms = (sched.delivery_us - sched.send_us) / 1000.0
    assert delay_ms.min() >= 25.765 - 1e-3  # integer-µs rounding slack
    excess = delay_ms - 25.765
    assert abs(excess.mean() - 0.08) < 3 * 0.08 / math.sqrt(n)


def test_fifo_forcing_vs_reordering():
    jit = Jitter("uniform", 0.0, 30.0)  # spans many send intervals
    fifo = deliveries(LinkModel(5.0, jitter=jit), sends(5000), seed=9)
    free = deliveries(LinkModel(5.0, jitter=jit, reorder=True), sends(5000), seed=9)
    assert (np.diff(fifo.delivered_at_us) >= 0).all()
    assert (np.diff(free.delivered_at_us) < 0).any()
    # forcing only ever delays: it is a running maximum of the free times
    assert (fifo.delivered_at_us >= free.delivered_at_us).all()


def test_causality():
    link = LinkModel(base_owd_ms=0.0, jitter=Jitter("uniform", 0.0, 5.0))
    sched = deliveries(link, sends(2000), seed=13)
    assert (sched.delivered_at_us >= sched.delivered_send_us).all()


def test_loss_and_jitter_substreams_independent():
    # same seed, different loss probability: surviving datagrams keep
    # exactly the same delivery times (reorder=True shows raw draws;
    # FIFO forcing would legitimately couple the two through queueing)
    jit = Jitter("uniform", 0.0, 10.0)
    lossless = deliveries(
        LinkModel(10.0, jitter=jit, reorder=True), sends(10_000), seed=21
    )
    lossy = deliveries(
        LinkModel(10.0, jitter=jit, loss_prob=0.5, reorder=True),
        sends(10_000), seed=21,
    )
    assert np.array_equal(
        lossy.delivery_us[lossy.delivered],
        lossless.delivery_us[lossy.delivered],
    )


def test_unsorted_sends_rejected():
    link = LinkModel(base_owd_ms=1.0)
    with pytest.raises(ConfigError):
        deliveries(link, np.array([10, 5], dtype=np.int64), seed=1)


def test_substreams_are_stable_and_distinct():
    a = substream(99, "link", "x", "y", "loss").random(4)
    b = substream(99, "link", "x", "y", "loss").random(4)
    c = substream(99, "link", "x", "y", "jitter").random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


# ---- bursts ----------------------------------------------------------


def test_burst_delay_lookup_is_exact():
    episodes = (np.array([1_000_000.0, 5_000_000.0]), np.array([12.0, 30.0]))
    t = np.array([0, 1_000_000, 1_044_999, 1_045_000, 4_999_999, 5_000_001])
    got = burst_delay_ms(episodes, 45.0, t)
    assert got.tolist() == [0.0, 12.0, 12.0, 0.0, 0.0, 30.0]


def test_burst_overlay_raises_delay_only_inside_episodes():
    burst = BurstModel(rate_hz=0.02, duration_ms=50.0,
                       height_min_ms=10.0, height_max_ms=10.0)
    link = LinkModel(base_owd_ms=20.0, burst=burst, reorder=True)
    n = 200_000  # ~580 s of sends at 2.9 ms spacing
    sched = deliveries(link, sends(n), seed=31)
    delay_ms = (sched.delivery_us - sched.send_us) / 1000.0
    base = delay_ms == 20.0
    raised = delay_ms == 30.0
    assert (base | raised).all()
    # roughly rate * duration_share of datagrams are affected
    share = raised.mean()
    assert 0.0 < share < 0.01


def test_burst_episode_count_is_poisson_like():
    burst = BurstModel(rate_hz=1 / 85.0, duration_ms=45.0,
                       height_min_ms=6.0, height_max_ms=32.0)
    rng = substream(77, "episodes")
    counts = [len(burst.draw_episodes(rng, 9900.0)[0]) for _ in range(30)]
    mean = np.mean(counts)
    expect = 9900 / 85.0  # ~116
    assert abs(mean - expect) < 4 * math.sqrt(expect / 30)


# ---- clocks ----------------------------------------------------------


def test_clock_conversion_and_inverse():
    clk = ClockModel(drift_ppm=200.0, offset_us=5_000_000)
    assert clk.local_from_true(1_000_000) == 1_000_200 + 5_000_000
    for t in (0, 123_456, 9_900_000_000):
        assert abs(clk.true_from_local(clk.local_from_true(t)) - t) <= 1


def test_clock_drift_cycle_count_discrepancy():
    # +200 ppm over 600 s at 44100 Hz: the fast peer fits in
    # 200e-6 * 600 * 44100 = 5292 extra frames' worth of cycles
    rate, fpp, dur = 44100, 128, 600
    period = fpp * 1e6 / rate
    fast = ClockModel(drift_ppm=200.0)
    ideal = ClockModel()
    n = int(dur * rate / fpp * 1.01)
    fast_times = fast.cycle_times_true_us(n, period)
    ideal_times = ideal.cycle_times_true_us(n, period)
    horizon = dur * 1_000_000
    extra_cycles = int((fast_times <= horizon).sum() - (ideal_times <= horizon).sum())
    expected = 200e-6 * dur * rate  # in frames
    assert abs(extra_cycles * fpp - expected) <= fpp  # within one packet


def test_clock_rejects_extreme_drift():
    with pytest.raises(ConfigError):
        ClockModel(drift_ppm=1500.0)


def test_cycle_times_do_not_accumulate_rounding_error():
    clk = ClockModel(drift_ppm=-50.0)
    period = 128 * 1e6 / 44100
    times = clk.cycle_times_true_us(3_500_000, period)  # ~2h45m of cycles
    k = 3_499_999
    exact = k * period / clk.scale
    assert abs(times[-1] - exact) <= 1
