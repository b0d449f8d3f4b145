"""Offline session runner: real receive buffers, modeled everything else.

A session is replayed one directed stream at a time.  Send instants,
link fates, and probe round trips are precomputed as vectorized
schedules; the receive side then walks each stream's arrivals and its
own pull grid in time order, driving an actual JitterBuffer (estimator,
regulator, conceal/reclassify bookkeeping and all).  That split keeps
multi-hour sessions affordable in pure Python while the component under
study runs unmodified.

Local clocks follow each peer's ClockModel, so nothing here ever
compares timestamps across peers: packet stamps are sender-local, the
buffer sees receiver-local arrival times, and RTT probes subtract a
prober-local echo from a prober-local reading, exactly as on the wire.

run() leaves two kinds of artifact in the output directory: one
telemetry CSV per peer (the format the analysis tools consume) and
ground_truth.csv recording the network-level fate of every datagram,
with per-stream frame accounting appended as comment lines.  The same
accounting comes back as StreamAccount objects, whose conservation
identity is exact by construction: every sent frame ends up in exactly
one bucket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..jitter import BufferCounters, JitterBuffer, estimate_refresh_cycles
from ..telemetry import PROBE_TIMEOUT_US, TelemetryRow, TelemetryWriter
from .models import deliveries, subseed, substream
from .scenario import Scenario

# the engine re-estimates the target four times a second; the runner
# mirrors that cadence in pull cycles
_GT_HEADER = "kind,src,dst,seq,sent_true_us,delivered_true_us,dropped"
_GT_CHUNK = 200_000


@dataclass(frozen=True)
class StreamAccount:
    """Where every frame of one directed stream ended up.

    frames_lost counts definitively lost frames of *sent* packets;
    conceals the receiver ran past the end of the sender's sequence
    (its clock finished the session slightly ahead) are split out as
    frames_concealed_unsent.  frames_pre_start covers packets the
    receiver never scheduled because they predate its lock-on.
    counters is the raw end-of-run buffer snapshot.
    """

    src: str
    dst: str
    packets_sent: int
    packets_dropped: int
    frames_sent: int
    frames_played: int
    frames_lost: int
    frames_late: int
    frames_skipped: int
    frames_buffered: int
    frames_in_flight: int
    frames_pre_start: int
    frames_concealed_unsent: int
    counters: BufferCounters

    @property
    def conserved(self) -> bool:
        return self.frames_sent == (
            self.frames_played + self.frames_lost + self.frames_late
            + self.frames_skipped + self.frames_buffered
            + self.frames_in_flight + self.frames_pre_start
        )


@dataclass
class RunResult:
    scenario: Scenario
    out_dir: Path
    telemetry_paths: dict
    ground_truth_path: Path
    accounts: list

    def account(self, src: str, dst: str) -> StreamAccount:
        for acc in self.accounts:
            if acc.src == src and acc.dst == dst:
                return acc
        raise KeyError((src, dst))


def _cycle_grid(clock, period_us: float, duration_us: int):
    """(true, local) instants of a peer's audio cycles inside the session."""
    n = int(duration_us / period_us) + 2
    rel = np.rint(np.arange(n) * period_us).astype(np.int64)
    n = int(np.searchsorted(rel, duration_us, side="left"))
    true = clock.cycle_times_true_us(n, period_us)
    return true, clock.local_from_true(true)


def _probe_grid(clock, interval_s: float, duration_us: int):
    """Ping instants, offset half an interval so they straddle rows."""
    step = interval_s * 1e6
    n = int((duration_us - 0.5 * step) / step) + 1 if duration_us > 0.5 * step else 0
    local = np.rint((np.arange(n) + 0.5) * step).astype(np.int64) + clock.offset_us
    return clock.true_from_local(local), local


def _write_gt_rows(fh, kind, src, dst, seq, sent_true, delivered, delivery_true):
    prefix = "%s,%s,%s," % (kind, src, dst)
    n = len(seq)
    for lo in range(0, n, _GT_CHUNK):
        hi = min(lo + _GT_CHUNK, n)
        rows = [
            prefix + ("%d,%d,%d,0" % (q, t, d) if ok else "%d,%d,,1" % (q, t))
            for q, t, ok, d in zip(
                seq[lo:hi].tolist(), sent_true[lo:hi].tolist(),
                delivered[lo:hi].tolist(), delivery_true[lo:hi].tolist(),
            )
        ]
        fh.write("\n".join(rows) + "\n")


def run(scenario: Scenario, out_dir) -> RunResult:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stream = scenario.stream
    fpp = stream.frames_per_packet
    rate = stream.sample_rate
    period_us = stream.packet_interval_us
    duration_us = int(round(scenario.duration_s * 1e6))
    n_rows = duration_us // 1_000_000
    seed = scenario.seed

    peers = scenario.peers
    ids = [p.peer_id for p in peers]
    index = {pid: i for i, pid in enumerate(ids)}
    offset = {p.peer_id: p.clock.offset_us for p in peers}
    end_local = {pid: offset[pid] + duration_us for pid in ids}
    pairs = [(a, b) for a in ids for b in ids if a != b]

    # one audio-cycle grid per peer serves both roles: the instants it
    # sends its stream and the instants it pulls every receive buffer
    grids = {p.peer_id: _cycle_grid(p.clock, period_us, duration_us)
             for p in peers}

    # burst timelines are drawn once per link and shared by audio and
    # probes, so both see the same congestion episodes
    episodes = {}
    for (a, b) in pairs:
        burst = scenario.links[(a, b)].burst
        if burst is not None:
            episodes[(a, b)] = burst.draw_episodes(
                substream(seed, "link", a, b, "burst"), scenario.duration_s + 2.0
            )

    gt_path = out_dir / "ground_truth.csv"
    gt = open(gt_path, "w", encoding="ascii", newline="")
    gt.write("# mevo-ground-truth v1\n")
    gt.write(_GT_HEADER + "\n")

    # rel-local send/receive instants per peer, for the dgram columns
    sent_rel = {pid: [] for pid in ids}
    recv_rel = {pid: [] for pid in ids}

    # ---- audio schedules --------------------------------------------

    arrivals = {}
    for (a, b) in pairs:
        send_true, send_local = grids[a]
        sched = deliveries(
            scenario.links[(a, b)], send_true,
            subseed(seed, "link", a, b, "audio"), episodes=episodes.get((a, b)),
        )
        k_all = np.arange(send_true.size, dtype=np.int64)
        _write_gt_rows(gt, "audio", a, b, k_all, send_true,
                       sched.delivered, sched.delivery_us)
        clock_b = scenario.peer(b).clock
        k_del = np.flatnonzero(sched.delivered)
        recv_local = clock_b.local_from_true(sched.delivery_us[k_del])
        live = recv_local < end_local[b]
        k_del = k_del[live]
        recv_local = recv_local[live]
        order = np.lexsort((k_del, recv_local))
        arrivals[(a, b)] = (
            recv_local[order], k_del[order], send_local[k_del[order]],
            send_true.size, int(send_true.size - sched.delivered.sum()),
        )
        sent_rel[a].append(send_local - offset[a])
        recv_rel[b].append(recv_local - offset[b])

    # ---- probe schedules --------------------------------------------

    # prober p sends pings to q over (p, q); q answers each received
    # ping immediately, echoing p's stamp back over (q, p)
    rtt_by_sec = {}
    for (p, q) in pairs:
        ping_true, ping_local = _probe_grid(
            scenario.peer(p).clock, scenario.probe_interval_s, duration_us)
        probe_k = np.arange(ping_true.size, dtype=np.int64)
        ping_sched = deliveries(
            scenario.links[(p, q)], ping_true,
            subseed(seed, "link", p, q, "ping"), episodes=episodes.get((p, q)),
        )
        _write_gt_rows(gt, "ping", p, q, probe_k, ping_true,
                       ping_sched.delivered, ping_sched.delivery_us)
        sent_rel[p].append(ping_local - offset[p])

        got = np.flatnonzero(ping_sched.delivered)
        d1_true = ping_sched.delivery_us[got]
        d1_local = scenario.peer(q).clock.local_from_true(d1_true)
        live = d1_local < end_local[q]
        got, d1_true, d1_local = got[live], d1_true[live], d1_local[live]
        recv_rel[q].append(d1_local - offset[q])

        order = np.argsort(d1_true, kind="stable")
        pong_true = d1_true[order]
        pong_k = got[order]
        pong_echo = ping_local[pong_k]
        pong_sched = deliveries(
            scenario.links[(q, p)], pong_true,
            subseed(seed, "link", q, p, "pong"), episodes=episodes.get((q, p)),
        )
        _write_gt_rows(gt, "pong", q, p, pong_k, pong_true,
                       pong_sched.delivered, pong_sched.delivery_us)
        # a pong's local send reading equals the ping's local arrival;
        # reuse it rather than re-deriving through the clock model
        sent_rel[q].append(d1_local[order] - offset[q])

        fin = np.flatnonzero(pong_sched.delivered)
        d2_local = scenario.peer(p).clock.local_from_true(
            pong_sched.delivery_us[fin])
        live = d2_local < end_local[p]
        d2_local = d2_local[live]
        recv_rel[p].append(d2_local - offset[p])

        rtt_us = d2_local - pong_echo[pong_sched.delivered][live]
        d2_rel = d2_local - offset[p]
        ok = (rtt_us >= 0) & (rtt_us <= PROBE_TIMEOUT_US) & (d2_rel >= 1)
        sec = (d2_rel[ok] - 1) // 1_000_000 + 1
        keep = sec <= n_rows
        by_sec = np.full(n_rows + 1, np.nan)
        last = np.argsort(d2_rel[ok][keep], kind="stable")
        by_sec[sec[keep][last]] = rtt_us[ok][keep][last] / 1000.0
        rtt_by_sec[(p, q)] = by_sec

    # ---- per-peer datagram counters ----------------------------------

    bounds_rel = np.arange(n_rows + 1, dtype=np.int64) * 1_000_000
    cum_sent, cum_recv = {}, {}
    for pid in ids:
        sent = np.zeros(n_rows + 1, dtype=np.int64)
        for arr in sent_rel[pid]:
            sent += np.searchsorted(np.sort(arr), bounds_rel, side="right")
        recv = np.zeros(n_rows + 1, dtype=np.int64)
        for arr in recv_rel[pid]:
            recv += np.searchsorted(np.sort(arr), bounds_rel, side="right")
        cum_sent[pid], cum_recv[pid] = sent, recv

    # ---- replay every directed stream --------------------------------

    est_every = estimate_refresh_cycles(stream)
    accounts = []
    rows_by_peer = {pid: [] for pid in ids}
    pull_lists = {pid: grids[pid][1].tolist() for pid in ids}
    for (a, b) in pairs:
        rows, acc = _run_stream(
            scenario, a, b, arrivals.pop((a, b)), pull_lists[b],
            rtt_by_sec[(b, a)], cum_sent[b], cum_recv[b],
            n_rows, est_every, index[a],
        )
        rows_by_peer[b].extend(rows)
        accounts.append(acc)

    # ---- artifacts ----------------------------------------------------

    telemetry_paths = {}
    for pid in ids:
        path = out_dir / ("telemetry_%s.csv" % pid)
        writer = TelemetryWriter(path, stream)
        for row in sorted(rows_by_peer[pid], key=lambda r: (r.t_s, r.stream_id)):
            writer.write(row)
        writer.close()
        telemetry_paths[pid] = path

    for acc in accounts:
        gt.write(
            "# stream %s->%s sent=%d played=%d lost=%d late=%d skipped=%d"
            " buffered=%d in_flight=%d pre_start=%d unsent_concealed=%d\n"
            % (acc.src, acc.dst, acc.frames_sent, acc.frames_played,
               acc.frames_lost, acc.frames_late, acc.frames_skipped,
               acc.frames_buffered, acc.frames_in_flight,
               acc.frames_pre_start, acc.frames_concealed_unsent)
        )
    gt.close()

    return RunResult(
        scenario=scenario,
        out_dir=out_dir,
        telemetry_paths=telemetry_paths,
        ground_truth_path=gt_path,
        accounts=accounts,
    )


def _run_stream(scenario, src, dst, arrival, pulls, rtt_sec,
                cum_sent, cum_recv, n_rows, est_every, stream_id):
    """Walk one stream's arrivals and pull grid in receiver-local order."""
    stream = scenario.stream
    fpp = stream.frames_per_packet
    rate = stream.sample_rate
    buf = JitterBuffer(scenario.buffer, stream)
    recv_np, k_np, stamp_np, n_sent, n_dropped = arrival
    arr_t = recv_np.tolist()
    arr_stamp = stamp_np.tolist()
    del recv_np, stamp_np

    base = scenario.peer(dst).clock.offset_us
    bounds = [base + k * 1_000_000 for k in range(1, n_rows + 1)]
    target_scale = 1000.0 / rate

    # The engine's estimator thread refreshes a cached target a few
    # times a second; the audio cycle adapts toward the cache one packet
    # at a time.  replay() mirrors that split over the whole schedule
    # and hands back one state snapshot per boundary.
    arr_seq = (k_np & 0xFFFF).tolist()
    snaps = buf.replay(arr_t, arr_seq, arr_stamp, pulls, fpp,
                       est_every, bounds)

    rows = []
    for i, (occ, tgt, played, lost_raw, late, skipped, pend) in enumerate(snaps):
        # sampled at the boundary instant, before any event that lands
        # exactly on it; the final row reports raw counters (nothing can
        # be reclassified after the session ends)
        k = i + 1
        if k == n_rows:
            pend = 0
        lost = lost_raw - pend
        rtt = rtt_sec[k]
        rows.append(TelemetryRow(
            t_s=float(k),
            peer_id=dst,
            stream_id=stream_id,
            rtt_ms=None if math.isnan(rtt) else rtt,
            buffer_target_ms=tgt * target_scale,
            buffer_occupancy_ms=(occ * 1_000_000 // rate) / 1000.0,
            frames_played=played,
            frames_lost=lost,
            frames_late=late,
            frames_concealed=lost + late,
            frames_skipped=skipped,
            dgrams_sent=int(cum_sent[k]),
            dgrams_recv=int(cum_recv[k]),
            dgrams_malformed=0,
        ))

    # ---- frame accounting against the ground truth -------------------

    counters = buf.counters()
    frames_sent = n_sent * fpp
    if not buf.started:
        acc = StreamAccount(
            src=src, dst=dst, packets_sent=n_sent, packets_dropped=n_dropped,
            frames_sent=frames_sent, frames_played=0, frames_lost=0,
            frames_late=0, frames_skipped=0, frames_buffered=0,
            frames_in_flight=0, frames_pre_start=frames_sent,
            frames_concealed_unsent=0, counters=counters,
        )
    else:
        k_start = int(k_np[0])
        # the buffer unwraps sequence numbers from the first arrival;
        # translate its cursor back into the sender's packet index
        k_cursor = buf.next_playout_seq - (k_start & 0xFFFF) + k_start
        head_done = buf.head_consumed_frames
        k_last = n_sent - 1
        if k_cursor > k_last:
            unsent = (k_cursor - k_last - 1) * fpp + head_done
            in_flight = 0
        else:
            unsent = 0
            in_flight = ((k_last - k_cursor + 1) * fpp - head_done
                         - buf.buffered_frames)
        acc = StreamAccount(
            src=src, dst=dst, packets_sent=n_sent, packets_dropped=n_dropped,
            frames_sent=frames_sent,
            frames_played=counters.frames_played,
            frames_lost=counters.frames_lost - unsent,
            frames_late=counters.frames_late,
            frames_skipped=counters.frames_skipped,
            frames_buffered=buf.buffered_frames,
            frames_in_flight=in_flight,
            frames_pre_start=k_start * fpp,
            frames_concealed_unsent=unsent,
            counters=counters,
        )
    return rows, acc
