/**
 * Panel state: everything the view renders, fed by the telemetry
 * stream and the control API responses.
 *
 * Invariants kept here rather than in the DOM layer:
 *  - displayed cumulative counters never decrease, even if the feed
 *    delivers a stale or restarted row;
 *  - a pending control action is either confirmed by a later
 *    telemetry/status echo or marked failed within ACK_TIMEOUT_MS;
 *  - history is a rolling window, evicted by stream time;
 *  - at most one action may be pending per control at a time.
 */

import type {
  BufferView,
  MetronomeView,
  RoutingView,
  Status,
  StreamSample,
  TelemetryBatch,
} from "./api.js";
import type { FeedStatus } from "./sse.js";

export const HISTORY_WINDOW_S = 300;
export const STALE_AFTER_MS = 3000;
export const ACK_TIMEOUT_MS = 3000;

export interface HistoryPoint {
  t_s: number;
  rtt_ms: number | null; // null is a gap: probe or pong lost that second
  occupancy_ms: number;
  target_ms: number;
  frames_lost: number;
}

/** What a confirmation predicate gets to look at: the config echo of
 * the most recent telemetry batch or status fetch. */
export interface EchoView {
  metronome: MetronomeView | null;
  buffer: BufferView | null;
  routing: RoutingView;
}

export type ActionState = "pending" | "confirmed" | "failed";

export interface Action {
  id: number;
  /** one pending action per control: "metronome", "buffer",
   * "routing:<source>:<bus>", "stop" */
  control: string;
  label: string;
  sentAt: number;
  state: ActionState;
  error?: string;
  confirmedBy?: (echo: EchoView) => boolean;
}

const COUNTER_FIELDS = [
  "frames_played",
  "frames_lost",
  "frames_late",
  "frames_concealed",
  "frames_skipped",
  "dgrams_sent",
  "dgrams_recv",
  "dgrams_malformed",
] as const;

function clampCounters(prev: StreamSample, next: StreamSample): StreamSample {
  const out = { ...next };
  for (const f of COUNTER_FIELDS) {
    if (out[f] < prev[f]) out[f] = prev[f];
  }
  return out;
}

export class PanelStore {
  link: FeedStatus = "connecting";
  lastBatchAt: number | null = null; // wall clock ms
  stopped = false;

  streams = new Map<number, StreamSample>();
  history = new Map<number, HistoryPoint[]>();
  metronome: MetronomeView | null = null;
  bufferConfig: BufferView | null = null;
  routing: RoutingView = {};
  status: Status | null = null;
  actions: Action[] = [];

  private nextActionId = 1;
  private listeners: Array<() => void> = [];

  subscribe(fn: () => void): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  private emit(): void {
    for (const fn of this.listeners) fn();
  }

  // ---- feed input --------------------------------------------------

  setLink(status: FeedStatus): void {
    this.link = status;
    this.emit();
  }

  /** True when the link claims to be live but no sample has arrived
   * for STALE_AFTER_MS; the view shows a stale-data banner. */
  isStale(now: number): boolean {
    if (this.link !== "live" || this.stopped) return false;
    if (this.lastBatchAt === null) return false;
    return now - this.lastBatchAt > STALE_AFTER_MS;
  }

  applyBatch(batch: TelemetryBatch, now: number): void {
    this.lastBatchAt = now;
    for (const sample of batch.streams) {
      const prev = this.streams.get(sample.stream_id);
      const clamped = prev === undefined ? sample : clampCounters(prev, sample);
      this.streams.set(sample.stream_id, clamped);
      this.pushHistory(clamped);
    }
    this.metronome = batch.metronome;
    this.bufferConfig = batch.buffer_config;
    this.routing = batch.routing;
    this.settleActions(now);
    this.emit();
  }

  applyStatus(status: Status, now: number): void {
    this.status = status;
    this.metronome = status.metronome;
    this.bufferConfig = {
      percentile: status.buffer_config.percentile,
      max_target_frames: status.buffer_config.max_target_frames,
    };
    this.routing = status.routing;
    this.settleActions(now);
    this.emit();
  }

  /** The reload path: rebuild the whole view from the two GET
   * endpoints alone. History restarts; everything else is complete. */
  reconstruct(status: Status, latest: TelemetryBatch, now: number): void {
    this.streams.clear();
    this.history.clear();
    this.applyStatus(status, now);
    if (latest.t_s !== null) this.applyBatch(latest, now);
  }

  private pushHistory(sample: StreamSample): void {
    let points = this.history.get(sample.stream_id);
    if (points === undefined) {
      points = [];
      this.history.set(sample.stream_id, points);
    }
    points.push({
      t_s: sample.t_s,
      rtt_ms: sample.rtt_ms,
      occupancy_ms: sample.buffer_occupancy_ms,
      target_ms: sample.buffer_target_ms,
      frames_lost: sample.frames_lost,
    });
    const horizon = sample.t_s - HISTORY_WINDOW_S;
    while (points.length > 0 && points[0]!.t_s <= horizon) points.shift();
  }

  // ---- control actions ---------------------------------------------

  controlBusy(control: string): boolean {
    return this.actions.some((a) => a.control === control && a.state === "pending");
  }

  /** Returns null (and changes nothing) when the control already has
   * a pending action; the view disables the widget in that case. */
  beginAction(
    control: string,
    label: string,
    now: number,
    confirmedBy?: (echo: EchoView) => boolean,
  ): Action | null {
    if (this.controlBusy(control)) return null;
    const action: Action = {
      id: this.nextActionId++,
      control,
      label,
      sentAt: now,
      state: "pending",
      confirmedBy,
    };
    this.actions.push(action);
    this.emit();
    return action;
  }

  confirmAction(id: number): void {
    const a = this.actions.find((x) => x.id === id);
    if (a !== undefined && a.state === "pending") {
      a.state = "confirmed";
      this.emit();
    }
  }

  failAction(id: number, error: string): void {
    const a = this.actions.find((x) => x.id === id);
    if (a !== undefined && a.state === "pending") {
      a.state = "failed";
      a.error = error;
      this.emit();
    }
  }

  markStopped(): void {
    this.stopped = true;
    this.emit();
  }

  /** Confirm pending actions whose echo arrived; fail the ones that
   * outlived the acknowledgment window. Called with every batch and
   * from the view's clock tick so a dead feed still times out. */
  settleActions(now: number): void {
    const echo: EchoView = {
      metronome: this.metronome,
      buffer: this.bufferConfig,
      routing: this.routing,
    };
    for (const a of this.actions) {
      if (a.state !== "pending") continue;
      if (a.confirmedBy !== undefined && a.confirmedBy(echo)) {
        a.state = "confirmed";
      } else if (now - a.sentAt > ACK_TIMEOUT_MS) {
        a.state = "failed";
        a.error = "no acknowledgment within 3 s";
      }
    }
  }

  /** Drop settled actions older than a few seconds so badges fade
   * instead of accumulating. */
  pruneActions(now: number, keepMs = 5000): void {
    const before = this.actions.length;
    this.actions = this.actions.filter(
      (a) => a.state === "pending" || now - a.sentAt < keepMs,
    );
    if (this.actions.length !== before) this.emit();
  }
}
