"""Offline analysis of session telemetry logs.

Turns a log into the numbers worth reporting about a run: the RTT
distribution, cumulative loss over time, end-of-run loss ratios, and
the mouth-to-ear latency budget.  Every operation is a pure function of
the log file, so re-running a command over the same log produces
byte-identical artifacts.

Artifacts are CSV tables plus gnuplot-ready .dat files, not rendered
images.  The control panel does the live plotting; this tool exists to
hand numbers to whatever the user plots with offline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .telemetry import RTT_QUANTILES, SessionSummary, TelemetryLog


class RttHistogram:
    """RTT counts over half-open bins [edge_k, edge_k + width).

    Edges sit on multiples of the bin width, so binning is a function of
    the data alone: the same samples always land in the same bins, in
    any order, on any platform.  The top sample falls in the last bin
    (its edge index is what sizes the histogram).
    """

    def __init__(self, samples_ms, bin_width_ms: float):
        if bin_width_ms <= 0:
            raise ValueError("bin width must be positive")
        samples = np.asarray(samples_ms, dtype=np.float64)
        if samples.size == 0:
            raise ValueError("no RTT samples")
        self.bin_width_ms = float(bin_width_ms)
        self._sorted = np.sort(samples)
        self.min_ms = float(self._sorted[0])
        self.max_ms = float(self._sorted[-1])
        first = math.floor(self.min_ms / bin_width_ms)
        last = math.floor(self.max_ms / bin_width_ms)
        n_bins = last - first + 1
        self.edges_ms = np.arange(first, first + n_bins + 1,
                                  dtype=np.float64) * bin_width_ms
        idx = np.searchsorted(self.edges_ms, samples, side="right") - 1
        idx = np.clip(idx, 0, n_bins - 1)
        self.counts = np.bincount(idx, minlength=n_bins)

    @property
    def n_samples(self) -> int:
        return int(self._sorted.size)

    def quantiles_ms(self) -> dict:
        return {q: float(np.quantile(self._sorted, q)) for q in RTT_QUANTILES}

    def fraction_below(self, threshold_ms: float) -> float:
        """Fraction of samples strictly below the threshold."""
        below = np.searchsorted(self._sorted, threshold_ms, side="left")
        return float(below) / self._sorted.size


def rtt_histogram(log: TelemetryLog, bin_width_ms: float = 0.5) -> RttHistogram:
    values = log.rtt_values_ms()
    if not values:
        raise ValueError("log has no RTT samples")
    return RttHistogram(values, bin_width_ms)


def cumulative_loss(log: TelemetryLog):
    """Cumulative lost frames over time, summed across the log's streams.

    Counters in the log are already cumulative, so the series carries
    the latest frames_lost per stream forward and sums at each sample
    instant.  Non-decreasing because every counter is.
    """
    if not log.rows:
        raise ValueError("empty log")
    latest = {}
    series = []
    cur_t = None
    for row in log.rows:
        if cur_t is not None and row.t_s != cur_t:
            series.append((cur_t, sum(latest.values())))
        cur_t = row.t_s
        latest[(row.peer_id, row.stream_id)] = row.frames_lost
    series.append((cur_t, sum(latest.values())))
    return tuple(series)


def loss_ratio(log: TelemetryLog) -> float:
    """Final lost fraction: frames_lost over the frames every stream
    should have carried (duration x sample rate, per stream)."""
    if not log.rows:
        raise ValueError("empty log")
    duration = log.duration_s()
    if duration <= 0:
        raise ValueError("log covers no time")
    finals = log.final_rows()
    lost = sum(r.frames_lost for r in finals.values())
    return lost / (duration * log.sample_rate * len(finals))


@dataclass(frozen=True)
class M2EBudget:
    """One mouth-to-ear latency figure, split into its three parts."""

    driver_ms: float
    network_ms: float
    buffer_ms: float

    def __post_init__(self):
        for part in ("driver_ms", "network_ms", "buffer_ms"):
            if getattr(self, part) < 0:
                raise ValueError("%s must be >= 0" % part)

    @property
    def total_ms(self) -> float:
        return self.driver_ms + self.network_ms + self.buffer_ms


@dataclass(frozen=True)
class M2EEnvelope:
    """Low/point/high mouth-to-ear budgets sharing driver and network
    terms; only the buffer contribution varies across the three."""

    low: M2EBudget
    point: M2EBudget
    high: M2EBudget


def m2e_budget(log: TelemetryLog, driver_ms: float = 5.0) -> M2EEnvelope:
    """Mouth-to-ear latency envelope for one side of a session.

    Driver constant, plus one-way network (half the minimum observed
    RTT), plus the buffer's empirical [2.5, 97.5] percentile interval;
    the point estimate uses the buffer mean.  driver_ms is an input,
    not a measurement: the log cannot see soundcard latency.
    """
    rtts = log.rtt_values_ms()
    if not rtts:
        raise ValueError("log has no RTT samples")
    occ = np.asarray(log.occupancy_values_ms(), dtype=np.float64)
    network_ms = min(rtts) / 2.0
    lo, hi = np.percentile(occ, [2.5, 97.5])
    return M2EEnvelope(
        low=M2EBudget(driver_ms, network_ms, float(lo)),
        point=M2EBudget(driver_ms, network_ms, float(occ.mean())),
        high=M2EBudget(driver_ms, network_ms, float(hi)),
    )


# ---- artifact writers -------------------------------------------------
#
# Fixed float formatting (six decimals) keeps reruns byte-identical.


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (int, np.integer)):
        return "%d" % value
    return "%.6f" % value


def _open_out(out_dir, name):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / name
    return path, open(path, "w", encoding="ascii", newline="")


def _write_kv(out_dir, name, pairs):
    path, fh = _open_out(out_dir, name)
    with fh:
        fh.write("key,value\n")
        for key, value in pairs:
            fh.write("%s,%s\n" % (key, _fmt(value)))
    return path


def _quantile_pairs(quantiles: dict):
    return [("p%g_ms" % (q * 100), quantiles.get(q)) for q in RTT_QUANTILES]


def write_rtt_artifacts(hist: RttHistogram, out_dir,
                        threshold_ms: float = 59.0) -> list:
    """rtt_histogram.csv, rtt_histogram.dat (gnuplot), rtt_summary.csv."""
    table, fh = _open_out(out_dir, "rtt_histogram.csv")
    with fh:
        fh.write("bin_low_ms,bin_high_ms,count\n")
        for k in range(len(hist.counts)):
            fh.write("%s,%s,%d\n" % (_fmt(hist.edges_ms[k]),
                                     _fmt(hist.edges_ms[k + 1]),
                                     hist.counts[k]))
    dat, fh = _open_out(out_dir, "rtt_histogram.dat")
    with fh:
        fh.write("# rtt histogram: bin midpoint (ms), count\n")
        for k in range(len(hist.counts)):
            mid = (hist.edges_ms[k] + hist.edges_ms[k + 1]) / 2.0
            fh.write("%s %d\n" % (_fmt(mid), hist.counts[k]))
    summary = _write_kv(out_dir, "rtt_summary.csv", [
        ("samples", hist.n_samples),
        ("bin_width_ms", hist.bin_width_ms),
        ("min_ms", hist.min_ms),
        ("max_ms", hist.max_ms),
        *_quantile_pairs(hist.quantiles_ms()),
        ("threshold_ms", threshold_ms),
        ("fraction_below_threshold", hist.fraction_below(threshold_ms)),
    ])
    return [table, dat, summary]


def write_loss_artifacts(log: TelemetryLog, out_dir) -> list:
    """cumulative_loss.csv/.dat plus the end-of-run loss_summary.csv."""
    series = cumulative_loss(log)
    rate = log.sample_rate
    table, fh = _open_out(out_dir, "cumulative_loss.csv")
    with fh:
        fh.write("t_s,frames_lost,audio_lost_s\n")
        for t, frames in series:
            fh.write("%s,%d,%s\n" % (_fmt(t), frames, _fmt(frames / rate)))
    dat, fh = _open_out(out_dir, "cumulative_loss.dat")
    with fh:
        fh.write("# cumulative loss: t (s), frames, seconds of audio\n")
        for t, frames in series:
            fh.write("%s %d %s\n" % (_fmt(t), frames, _fmt(frames / rate)))
    final = series[-1][1]
    summary = _write_kv(out_dir, "loss_summary.csv", [
        ("duration_s", log.duration_s()),
        ("streams", len(log.final_rows())),
        ("final_frames_lost", final),
        ("audio_lost_s", final / rate),
        ("loss_ratio", loss_ratio(log)),
    ])
    return [table, dat, summary]


def write_m2e_artifacts(envelope: M2EEnvelope, out_dir) -> list:
    path, fh = _open_out(out_dir, "m2e_budget.csv")
    with fh:
        fh.write("bound,driver_ms,network_ms,buffer_ms,total_ms\n")
        for bound in ("low", "point", "high"):
            budget = getattr(envelope, bound)
            fh.write("%s,%s,%s,%s,%s\n" % (
                bound, _fmt(budget.driver_ms), _fmt(budget.network_ms),
                _fmt(budget.buffer_ms), _fmt(budget.total_ms),
            ))
    return [path]


def write_summary_artifacts(summary: SessionSummary, out_dir) -> list:
    path = _write_kv(out_dir, "summary.csv", [
        ("duration_s", summary.duration_s),
        ("rows", summary.n_rows),
        ("streams", summary.n_streams),
        ("rtt_samples", summary.rtt_samples),
        ("rtt_min_ms", summary.rtt_min_ms),
        ("rtt_max_ms", summary.rtt_max_ms),
        *_quantile_pairs(summary.rtt_quantiles_ms),
        ("threshold_ms", summary.threshold_ms),
        ("rtt_below_threshold", summary.rtt_below_threshold),
        ("loss_ratio", summary.loss_ratio),
        ("frames_played", summary.frames_played),
        ("frames_lost", summary.frames_lost),
        ("frames_late", summary.frames_late),
        ("frames_skipped", summary.frames_skipped),
        ("buffer_mean_ms", summary.buffer_mean_ms),
        ("buffer_low_ms", summary.buffer_low_ms),
        ("buffer_high_ms", summary.buffer_high_ms),
    ])
    return [path]
