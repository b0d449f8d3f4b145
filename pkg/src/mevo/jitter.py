"""Adaptive playout buffer.

Incoming packets are held just long enough to absorb network delay
variation, then handed to the audio callback in exact timestamp order.
Missing audio is replaced with silence, never with a stall: the puller
always gets exactly the number of frames it asked for.

The buffer chooses its own depth.  Every arrival contributes a transit
measurement (receiver clock minus sender clock); the target delay is a
high percentile of the window of recent measurements, normalised against
the window minimum so the unknown clock offset cancels out, plus a safety
margin.  Adaptation toward a new target is quantised to whole packets and
rate-limited to one step per pull cycle: growing inserts silent fill,
shrinking drops buffered audio.  The same skip/insert machinery absorbs
sample-clock drift between sender and receiver.

Frame accounting is exact and is checked against simulator ground truth:

    played     frames delivered on time and handed to the puller
    lost       frames concealed whose packet never made it in time
    late       frames concealed whose packet then arrived within
               late_timeout_ms (reclassified out of lost)
    concealed  lost + late, always
    skipped    frames dropped while shrinking or shedding drift backlog
    inserted   silent fill frames added while growing or absorbing drift

Concurrency: one producer may push while one consumer pulls (construct
with thread_safe=True); critical sections are short and allocation free,
so the pull side never waits on network-paced work.
"""

from __future__ import annotations

import math
import threading
from collections import deque
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .wire import StreamConfig, unwrap_seq


class Arrival(Enum):
    """Classification returned by push."""

    ON_TIME = "on_time"
    LATE = "late"
    DUPLICATE = "duplicate"


@dataclass(frozen=True)
class TransitRecord:
    """One transit measurement: raw receiver-minus-sender clock, in µs.

    Raw values are meaningless on their own (they include the clock
    offset between the two hosts); the estimator normalises a window of
    them against the window minimum before taking the percentile.
    """

    recv_time_us: int
    transit_us: int


@dataclass(frozen=True)
class JitterBufferConfig:
    window_seconds: float = 4.0
    percentile: float = 99.0
    safety_margin_frames: int = 128
    min_target_frames: int = 128
    max_target_frames: int = 1536
    late_timeout_ms: int = 1000

    def __post_init__(self):
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if not 50.0 <= self.percentile <= 100.0:
            raise ValueError("percentile must be in [50, 100]")
        if self.safety_margin_frames < 0:
            raise ValueError("safety_margin_frames must be >= 0")
        if not 0 < self.min_target_frames <= self.max_target_frames:
            raise ValueError("need 0 < min_target_frames <= max_target_frames")
        if self.late_timeout_ms < 0:
            raise ValueError("late_timeout_ms must be >= 0")

    def clamp(self, frames: int) -> int:
        return min(max(frames, self.min_target_frames), self.max_target_frames)


@dataclass(frozen=True)
class BufferCounters:
    frames_played: int = 0
    frames_lost: int = 0
    frames_late: int = 0
    frames_concealed: int = 0
    frames_skipped: int = 0
    frames_inserted: int = 0
    skip_events: int = 0
    insert_events: int = 0


ESTIMATE_REFRESH_S = 0.25


def estimate_refresh_cycles(stream: StreamConfig) -> int:
    """Pull cycles between estimator refreshes at the standard cadence.

    Recomputing the windowed percentile on every audio cycle would cost
    more than the cycle itself; a quarter-second cache is far inside the
    4 s window's time constant.
    """
    return max(1, round(
        ESTIMATE_REFRESH_S * stream.sample_rate / stream.frames_per_packet))


def nearest_rank_percentile(values, percentile: float) -> float:
    """Percentile by the nearest-rank rule: sorted(v)[ceil(p*n/100) - 1].

    This is the pinned definition used by the target estimator; tests
    check it against an independent sort-based computation.
    """
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    if n == 0:
        raise ValueError("empty window")
    k = min(max(math.ceil(percentile * n / 100.0), 1), n)
    return float(np.partition(arr, k - 1)[k - 1])


def estimate_target_frames(
    transit_values_us, config: JitterBufferConfig, sample_rate: int
) -> int:
    """Target playout delay, in frames, for a window of transit samples.

    clamp(round(percentile(values - min(values)) * rate) + margin).
    Deterministic, and unaffected by any constant shift of the inputs.
    """
    arr = np.asarray(transit_values_us, dtype=np.float64)
    if arr.size == 0:
        raise ValueError("empty window")
    rel = nearest_rank_percentile(arr, config.percentile) - float(arr.min())
    frames = int(round(rel * sample_rate / 1e6)) + config.safety_margin_frames
    return config.clamp(frames)


class _NullLock:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


# slots may legitimately hold None (bookkeeping-only mode), so dict.get
# needs a distinct miss sentinel
_MISSING = object()


class JitterBuffer:
    """Playout buffer for a single incoming stream."""

    def __init__(
        self,
        config: JitterBufferConfig,
        stream: StreamConfig,
        thread_safe: bool = False,
    ):
        self.config = config
        self.stream = stream
        self._fpp = stream.frames_per_packet
        self._bytes_per_frame = stream.channels * 2
        self._rate = stream.sample_rate
        self._lock = threading.Lock() if thread_safe else _NullLock()

        self._started = False
        self._consuming = False
        self._start_deadline_us = 0
        self._cursor = 0          # unwrapped seq of the packet at the head
        self._offset = 0          # frames of the head packet already consumed
        self._slots = {}          # unwrapped seq -> payload bytes (or None)
        self._buffered_frames = 0
        self._fill_frames = 0     # pending inserted silence, consumed first
        self._target = config.clamp(config.safety_margin_frames)

        # what the last pull handed out, for sub-packet occupancy readings
        self._last_pull_us = 0
        self._last_pull_frames = 0

        # concealed gaps awaiting possible lost -> late reclassification:
        # unwrapped seq -> [first conceal time, concealed frame count]
        self._pending_lost = {}
        self._pending_order = deque()

        self.frames_played = 0
        self.frames_lost = 0
        self.frames_late = 0
        self.frames_concealed = 0
        self.frames_skipped = 0
        self.frames_inserted = 0
        self.skip_events = 0
        self.insert_events = 0

        # transit window kept as parallel arrays; recv times never decrease,
        # so expiry is a searchsorted and compaction a single copy
        cap = 4096
        self._tr_time = np.empty(cap, dtype=np.float64)
        self._tr_val = np.empty(cap, dtype=np.float64)
        self._tr_lo = 0
        self._tr_hi = 0

    # ---- state -----------------------------------------------------

    @property
    def started(self) -> bool:
        return self._started

    @property
    def target_delay_frames(self) -> int:
        return self._target

    @property
    def next_playout_seq(self) -> int:
        return self._cursor

    @property
    def occupancy_frames(self) -> int:
        """Frames awaiting playout, including pending fill."""
        return self._buffered_frames + self._fill_frames

    @property
    def buffered_frames(self) -> int:
        """Real (received) frames queued, excluding fill."""
        return self._buffered_frames

    @property
    def head_consumed_frames(self) -> int:
        """Frames of the head packet already played or concealed."""
        return self._offset

    def counters(self) -> BufferCounters:
        with self._lock:
            return BufferCounters(
                self.frames_played, self.frames_lost, self.frames_late,
                self.frames_concealed, self.frames_skipped,
                self.frames_inserted, self.skip_events, self.insert_events,
            )

    def pending_reclassifiable_frames(self) -> int:
        """Concealed frames that a straggler could still turn into lates.

        Reporting `frames_lost - pending_reclassifiable_frames()` gives a
        definitive loss count that never decreases between samples, even
        though the raw counter can move backwards when a late packet
        reclassifies a conceal.
        """
        with self._lock:
            return sum(pend[1] for pend in self._pending_lost.values())

    def measured_buffer_delay_us(self, now_us: int) -> int:
        """Current buffer delay: occupancy converted to µs at the sample rate.

        The now_us argument is part of the sampling interface (callers
        hold a timestamped snapshot) but the delay itself is purely the
        queued frame count; it moves in whole packets at the cycle
        cadence.
        """
        with self._lock:
            frames = self._buffered_frames + self._fill_frames
        return frames * 1_000_000 // self._rate

    # ---- push ------------------------------------------------------

    def push(self, seq: int, send_time_us: int, recv_time_us: int,
             payload: bytes | None = None) -> Arrival:
        """Accept one packet off the wire.

        seq is the wrapped wire value; it is extended internally against
        the playout cursor.  Late packets still feed the transit window
        (a late arrival is exactly the evidence that the target is too
        small) but their audio is discarded, except for the unplayed
        tail of the packet currently at the head.
        """
        with self._lock:
            return self._push(seq, send_time_us, recv_time_us, payload)

    def _push(self, seq, send_time_us, recv_time_us, payload):
        if not self._started:
            self._started = True
            self._cursor = seq
            self._start_deadline_us = recv_time_us + (
                self._target * 1_000_000 // self._rate
            )
            self._slots[seq] = payload
            self._buffered_frames += self._fpp
            self._transit_append(recv_time_us, recv_time_us - send_time_us)
            return Arrival.ON_TIME

        ext = unwrap_seq(self._cursor, seq)
        if ext in self._slots:
            return Arrival.DUPLICATE

        if ext < self._cursor or (ext == self._cursor and self._offset > 0):
            # Fully discarded: concealment already covered these frames,
            # and storing a partial tail would shift every later packet
            # boundary off the pull grid.
            self._transit_append(recv_time_us, recv_time_us - send_time_us)
            pend = self._pending_lost.pop(ext, None)
            if pend is not None:
                conceal_us, frames = pend
                if recv_time_us - conceal_us <= self.config.late_timeout_ms * 1000:
                    self.frames_late += frames
                    self.frames_lost -= frames
            return Arrival.LATE

        self._slots[ext] = payload
        self._buffered_frames += self._fpp
        self._transit_append(recv_time_us, recv_time_us - send_time_us)
        return Arrival.ON_TIME

    # ---- pull ------------------------------------------------------

    def pull(self, n_frames: int, now_us: int,
             want_payload: bool = True) -> bytes | None:
        """Hand exactly n_frames to the audio callback.

        Until the first packet's start deadline passes this returns
        priming silence and counts nothing.  Afterwards every stream
        frame consumed is either played or concealed (and concealed ==
        lost + late at all times); inserted fill is consumed first and
        accounted separately.  With want_payload=False the identical
        bookkeeping runs but no bytes are assembled, which is the
        simulator fast path; it must not be mixed with payload pulls on
        one buffer.
        """
        with self._lock:
            return self._pull(n_frames, now_us, want_payload)

    def _pull(self, n_frames, now_us, want_payload):
        bpf = self._bytes_per_frame
        if not self._started or now_us < self._start_deadline_us:
            return bytes(n_frames * bpf) if want_payload else None

        self._consuming = True
        self._last_pull_us = now_us
        self._last_pull_frames = n_frames
        if self._pending_order:
            self._prune_pending(now_us)

        parts = [] if want_payload else None
        left = n_frames
        while left > 0:
            if self._fill_frames > 0:
                k = min(left, self._fill_frames)
                self._fill_frames -= k
                if want_payload:
                    parts.append(bytes(k * bpf))
                left -= k
                continue
            k = min(left, self._fpp - self._offset)
            payload = self._slots.get(self._cursor, _MISSING)
            if payload is not _MISSING:
                if want_payload:
                    a = self._offset * bpf
                    parts.append(payload[a:a + k * bpf])
                self.frames_played += k
                self._buffered_frames -= k
            else:
                if want_payload:
                    parts.append(bytes(k * bpf))
                self.frames_concealed += k
                self.frames_lost += k
                pend = self._pending_lost.get(self._cursor)
                if pend is None:
                    self._pending_lost[self._cursor] = [now_us, k]
                    self._pending_order.append(self._cursor)
                else:
                    pend[1] += k
            self._offset += k
            left -= k
            if self._offset == self._fpp:
                self._slots.pop(self._cursor, None)
                self._cursor += 1
                self._offset = 0
        return b"".join(parts) if want_payload else None

    def _prune_pending(self, now_us):
        """Retire conceal records whose reclassification window passed."""
        horizon = self.config.late_timeout_ms * 1000
        order = self._pending_order
        while order:
            seq = order[0]
            pend = self._pending_lost.get(seq)
            if pend is None:
                order.popleft()
            elif now_us - pend[0] > horizon:
                del self._pending_lost[seq]
                order.popleft()
            else:
                break

    # ---- estimation and adaptation -----------------------------------

    def _transit_append(self, recv_time_us, transit_us):
        if self._tr_hi == self._tr_time.size:
            self._compact_window(recv_time_us)
        self._tr_time[self._tr_hi] = recv_time_us
        self._tr_val[self._tr_hi] = transit_us
        self._tr_hi += 1

    def _compact_window(self, now_us):
        lo = int(np.searchsorted(
            self._tr_time[: self._tr_hi],
            now_us - self.config.window_seconds * 1e6,
            side="left",
        ))
        lo = max(lo, self._tr_lo)
        n = self._tr_hi - lo
        if n * 2 > self._tr_time.size:
            new_time = np.empty(self._tr_time.size * 2, dtype=np.float64)
            new_val = np.empty(self._tr_val.size * 2, dtype=np.float64)
            new_time[:n] = self._tr_time[lo:self._tr_hi]
            new_val[:n] = self._tr_val[lo:self._tr_hi]
            self._tr_time = new_time
            self._tr_val = new_val
        else:
            self._tr_time[:n] = self._tr_time[lo:self._tr_hi]
            self._tr_val[:n] = self._tr_val[lo:self._tr_hi]
        self._tr_lo = 0
        self._tr_hi = n

    def transit_window(self, now_us: int) -> list[TransitRecord]:
        """Records currently inside the estimation window, oldest first."""
        with self._lock:
            lo, hi = self._window_bounds(now_us)
            return [
                TransitRecord(int(t), int(v))
                for t, v in zip(self._tr_time[lo:hi], self._tr_val[lo:hi])
            ]

    def _window_bounds(self, now_us):
        lo = int(np.searchsorted(
            self._tr_time[self._tr_lo:self._tr_hi],
            now_us - self.config.window_seconds * 1e6,
            side="left",
        )) + self._tr_lo
        self._tr_lo = lo
        return lo, self._tr_hi

    def estimate_target_delay(self, now_us: int) -> int:
        """Estimator output for the current window; unchanged when empty."""
        with self._lock:
            lo, hi = self._window_bounds(now_us)
            if lo == hi:
                return self._target
            return estimate_target_frames(
                self._tr_val[lo:hi], self.config, self._rate
            )

    def adapt(self, new_target_frames: int | None = None) -> str | None:
        """One adaptation step; call at most once per pull cycle.

        Moves the target at most one packet toward new_target_frames:
        growing inserts silent fill, shrinking cancels pending fill or
        drops buffered audio (counted as skipped).  When the target is
        already right, or None is passed, the same step instead regulates
        occupancy back toward the target, which is what absorbs clock
        drift.  Returns "grow", "shrink", or None.
        """
        with self._lock:
            if new_target_frames is not None:
                new = self.config.clamp(new_target_frames)
                if new > self._target:
                    step = min(self._fpp, new - self._target)
                    self._insert(step)
                    self._target += step
                    return "grow"
                if new < self._target:
                    step = min(self._fpp, self._target - new)
                    if self._shed(step):
                        self._target -= step
                        return "shrink"
                    return None
            if not self._consuming:
                return None
            err = self._buffered_frames + self._fill_frames - self._target
            if err > self._fpp:
                return "shrink" if self._shed(self._fpp) else None
            if err < -self._fpp:
                self._insert(self._fpp)
                return "grow"
            return None

    def _insert(self, frames):
        self._fill_frames += frames
        self.frames_inserted += frames
        self.insert_events += 1

    def _shed(self, frames):
        """Drop up to `frames` queued frames; False if nothing droppable.

        Pending fill goes first (it was never real audio, so it comes
        back out of the inserted count); buffered payload after that is
        a genuine skip.  An absent head packet cannot be shed: those
        frames belong to the loss accounting, not the skip accounting.
        """
        if self._fill_frames >= frames:
            self._fill_frames -= frames
            self.frames_inserted -= frames
            self.skip_events += 1
            return True
        if self._cursor in self._slots:
            k = min(frames, self._fpp - self._offset)
            self._offset += k
            self._buffered_frames -= k
            self.frames_skipped += k
            self.skip_events += 1
            if self._offset == self._fpp:
                del self._slots[self._cursor]
                self._cursor += 1
                self._offset = 0
            return True
        return False

    # ---- simulator fast path -----------------------------------------

    def replay(self, arr_recv, arr_seq, arr_stamp, pulls, n_frames,
               est_every, bounds):
        """Drive a whole receive schedule through the buffer in one pass.

        Equivalent to interleaving the per-call API in receiver-time
        order: every arrival is pushed before the first pull at or after
        it, each pull takes n_frames with no payload assembly, the
        target estimate is refreshed every est_every pulls, and one
        adaptation step runs per cycle against the latest estimate.
        Returns one snapshot per bounds entry, each taken at the
        boundary instant before any event landing exactly on it:

            (occupancy_frames, target_frames, played, lost, late,
             skipped, reclassifiable_frames)

        The body is a transcription of _push/_pull/adapt with the lock
        dropped and state held in locals; a property test in the suite
        holds it to the per-call results exactly.  Bookkeeping only,
        like pull(want_payload=False), and single-threaded by nature:
        never call this on a buffer shared with live threads.
        """
        cfg = self.config
        fpp = self._fpp
        rate = self._rate
        horizon = cfg.late_timeout_ms * 1000
        win_us = cfg.window_seconds * 1e6
        inf = math.inf

        slots = self._slots
        pending = self._pending_lost
        order = self._pending_order
        started = self._started
        consuming = self._consuming
        deadline = self._start_deadline_us
        cursor = self._cursor
        offset = self._offset
        buffered = self._buffered_frames
        fill = self._fill_frames
        target = self._target
        played = self.frames_played
        lost = self.frames_lost
        late = self.frames_late
        concealed = self.frames_concealed
        skipped = self.frames_skipped
        inserted = self.frames_inserted
        skip_ev = self.skip_events
        ins_ev = self.insert_events
        lp_us_entry = self._last_pull_us
        lp_us = lp_us_entry

        tr_time = self._tr_time
        tr_val = self._tr_val
        tr_cap = tr_time.size
        tr_lo = self._tr_lo
        tr_hi = self._tr_hi

        # expiry gate for the pending-reclassification queue: prune only
        # when the head can actually be due, instead of walking the deque
        # on every pull
        if order:
            first = pending.get(order[0])
            head_due = first[0] + horizon if first is not None else -inf
        else:
            head_due = inf

        snaps = []
        snap = snaps.append
        ai = 0
        n_arr = len(arr_recv)
        bi = 0
        n_b = len(bounds)
        cycles = 0
        cached = None

        for t_pull in pulls:
            while ai < n_arr and arr_recv[ai] <= t_pull:
                t_arr = arr_recv[ai]
                while bi < n_b and bounds[bi] <= t_arr:
                    snap((buffered + fill, target, played, lost, late,
                          skipped, sum(p[1] for p in pending.values())))
                    bi += 1
                # push
                if tr_hi == tr_cap:
                    self._tr_lo = tr_lo
                    self._tr_hi = tr_hi
                    self._compact_window(t_arr)
                    tr_time = self._tr_time
                    tr_val = self._tr_val
                    tr_cap = tr_time.size
                    tr_lo = self._tr_lo
                    tr_hi = self._tr_hi
                if not started:
                    started = True
                    cursor = arr_seq[ai]
                    deadline = t_arr + target * 1_000_000 // rate
                    slots[cursor] = None
                    buffered += fpp
                    tr_time[tr_hi] = t_arr
                    tr_val[tr_hi] = t_arr - arr_stamp[ai]
                    tr_hi += 1
                else:
                    seq = arr_seq[ai]
                    ext = cursor + ((seq - cursor + 0x8000) & 0xFFFF) - 0x8000
                    if ext in slots:
                        pass        # duplicate, nothing to record
                    elif ext < cursor or (ext == cursor and offset > 0):
                        tr_time[tr_hi] = t_arr
                        tr_val[tr_hi] = t_arr - arr_stamp[ai]
                        tr_hi += 1
                        pend = pending.pop(ext, None)
                        if pend is not None and t_arr - pend[0] <= horizon:
                            late += pend[1]
                            lost -= pend[1]
                    else:
                        slots[ext] = None
                        buffered += fpp
                        tr_time[tr_hi] = t_arr
                        tr_val[tr_hi] = t_arr - arr_stamp[ai]
                        tr_hi += 1
                ai += 1
            while bi < n_b and bounds[bi] <= t_pull:
                snap((buffered + fill, target, played, lost, late,
                      skipped, sum(p[1] for p in pending.values())))
                bi += 1
            # pull
            if started and t_pull >= deadline:
                consuming = True
                lp_us = t_pull
                if order and t_pull > head_due:
                    while order:
                        s0 = order[0]
                        p0 = pending.get(s0)
                        if p0 is None:
                            order.popleft()
                        elif t_pull - p0[0] > horizon:
                            del pending[s0]
                            order.popleft()
                        else:
                            head_due = p0[0] + horizon
                            break
                    else:
                        head_due = inf
                left = n_frames
                while left > 0:
                    if fill > 0:
                        k = fill if fill < left else left
                        fill -= k
                        left -= k
                        continue
                    k = fpp - offset
                    if left < k:
                        k = left
                    if cursor in slots:
                        played += k
                        buffered -= k
                    else:
                        concealed += k
                        lost += k
                        pend = pending.get(cursor)
                        if pend is None:
                            pending[cursor] = [t_pull, k]
                            order.append(cursor)
                            if len(order) == 1:
                                head_due = t_pull + horizon
                        else:
                            pend[1] += k
                    offset += k
                    left -= k
                    if offset == fpp:
                        slots.pop(cursor, None)
                        cursor += 1
                        offset = 0
            cycles += 1
            if cycles == est_every:
                cycles = 0
                lo = int(np.searchsorted(
                    tr_time[tr_lo:tr_hi], t_pull - win_us, side="left",
                )) + tr_lo
                tr_lo = lo
                if lo == tr_hi:
                    cached = target
                else:
                    cached = estimate_target_frames(
                        tr_val[lo:tr_hi], cfg, rate)
            # adapt: targets from the estimator are already clamped
            if cached is not None and cached > target:
                step = cached - target
                if step > fpp:
                    step = fpp
                fill += step
                inserted += step
                ins_ev += 1
                target += step
            elif cached is not None and cached < target:
                step = target - cached
                if step > fpp:
                    step = fpp
                if fill >= step:
                    fill -= step
                    inserted -= step
                    skip_ev += 1
                    target -= step
                elif cursor in slots:
                    k = fpp - offset
                    if step < k:
                        k = step
                    offset += k
                    buffered -= k
                    skipped += k
                    skip_ev += 1
                    if offset == fpp:
                        del slots[cursor]
                        cursor += 1
                        offset = 0
                    target -= step
            elif consuming:
                err = buffered + fill - target
                if err > fpp:
                    if fill >= fpp:
                        fill -= fpp
                        inserted -= fpp
                        skip_ev += 1
                    elif cursor in slots:
                        k = fpp - offset
                        offset += k
                        buffered -= k
                        skipped += k
                        skip_ev += 1
                        del slots[cursor]
                        cursor += 1
                        offset = 0
                elif err < -fpp:
                    fill += fpp
                    inserted += fpp
                    ins_ev += 1

        self._started = started
        self._consuming = consuming
        self._start_deadline_us = deadline
        self._cursor = cursor
        self._offset = offset
        self._buffered_frames = buffered
        self._fill_frames = fill
        self._target = target
        self.frames_played = played
        self.frames_lost = lost
        self.frames_late = late
        self.frames_concealed = concealed
        self.frames_skipped = skipped
        self.frames_inserted = inserted
        self.skip_events = skip_ev
        self.insert_events = ins_ev
        self._last_pull_us = lp_us
        if lp_us != lp_us_entry:
            self._last_pull_frames = n_frames
        self._tr_lo = tr_lo
        self._tr_hi = tr_hi

        # stragglers after the last pull, and any trailing boundaries,
        # go through the ordinary paths (cold by construction)
        while ai < n_arr:
            t_arr = arr_recv[ai]
            while bi < n_b and bounds[bi] <= t_arr:
                snap((self._buffered_frames + self._fill_frames,
                      self._target, self.frames_played, self.frames_lost,
                      self.frames_late, self.frames_skipped,
                      sum(p[1] for p in self._pending_lost.values())))
                bi += 1
            self._push(arr_seq[ai], arr_stamp[ai], t_arr, None)
            ai += 1
        while bi < n_b:
            snap((self._buffered_frames + self._fill_frames,
                  self._target, self.frames_played, self.frames_lost,
                  self.frames_late, self.frames_skipped,
                  sum(p[1] for p in self._pending_lost.values())))
            bi += 1
        return snaps
