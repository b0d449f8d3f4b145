/**
 * Typed client for the peer control API (docs/control-api.md is the
 * single source of truth for these shapes). The panel holds no
 * authoritative state: everything rendered comes from these responses
 * or from the telemetry stream.
 */

export interface StreamSample {
  t_s: number;
  peer_id: string;
  stream_id: number;
  rtt_ms: number | null;
  buffer_target_ms: number;
  buffer_occupancy_ms: number;
  frames_played: number;
  frames_lost: number;
  frames_late: number;
  frames_concealed: number;
  frames_skipped: number;
  dgrams_sent: number;
  dgrams_recv: number;
  dgrams_malformed: number;
}

export interface MetronomeView {
  enabled: boolean;
  bpm: number;
  beats_per_bar: number;
  owner: string | null;
}

export interface BufferView {
  percentile: number;
  max_target_frames: number;
}

/** source -> bus -> gain */
export type RoutingView = Record<string, Record<string, number>>;

export interface TelemetryBatch {
  t_s: number | null;
  streams: StreamSample[];
  metronome: MetronomeView;
  buffer_config: BufferView;
  routing: RoutingView;
}

export interface PeerInfo {
  id: string;
  address: string;
  stream_id: number;
  rtt_ms: number | null;
  buffer: { target_frames: number; occupancy_frames: number };
}

export interface Status {
  peer_id: string;
  stream_id: number;
  uptime_s: number;
  stream: { sample_rate: number; channels: number; frames_per_packet: number };
  buffer_config: {
    window_seconds: number;
    percentile: number;
    safety_margin_frames: number;
    min_target_frames: number;
    max_target_frames: number;
  };
  metronome: MetronomeView & { audience_muted: boolean };
  routing: RoutingView;
  peers: PeerInfo[];
  counters: { dgrams_sent: number; dgrams_recv: number; dgrams_malformed: number };
}

export class ApiError extends Error {
  constructor(
    message: string,
    readonly code: string,
    readonly status: number,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export class ControlApi {
  constructor(
    readonly base: string,
    private timeoutMs = 3000,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    let res: Response;
    try {
      res = await fetch(this.base + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
        signal: AbortSignal.timeout(this.timeoutMs),
      });
    } catch (err) {
      throw new ApiError(`${method} ${path}: ${String(err)}`, "unreachable", 0);
    }
    const doc = (await res.json().catch(() => ({}))) as Record<string, unknown>;
    if (!res.ok) {
      const e = (doc.error ?? {}) as { code?: string; message?: string };
      throw new ApiError(e.message ?? res.statusText, e.code ?? "http_error", res.status);
    }
    return doc as T;
  }

  status(): Promise<Status> {
    return this.request("GET", "/status");
  }

  latest(): Promise<TelemetryBatch> {
    return this.request("GET", "/telemetry/latest");
  }

  setMetronome(change: { enabled?: boolean; bpm?: number }): Promise<{ enabled: boolean; bpm: number }> {
    return this.request("POST", "/metronome", change);
  }

  setBuffer(change: { percentile?: number; max_target_frames?: number }): Promise<BufferView> {
    return this.request("POST", "/buffer", change);
  }

  setRouting(change: { source: string; bus: string; gain: number }): Promise<typeof change> {
    return this.request("POST", "/routing", change);
  }

  stop(): Promise<{ stopping: boolean }> {
    return this.request("POST", "/session/stop", {});
  }
}

// Client-side validation mirrors the server's ranges so obviously bad
// input never turns into a request. Each returns an error string or
// null when the value is fine.

export const BPM_MIN = 20;
export const BPM_MAX = 300;

export function validateBpm(bpm: number): string | null {
  if (!Number.isFinite(bpm)) return "bpm must be a number";
  if (bpm < BPM_MIN || bpm > BPM_MAX) return `bpm must be in [${BPM_MIN}, ${BPM_MAX}]`;
  return null;
}

export function validatePercentile(p: number): string | null {
  if (!Number.isFinite(p)) return "percentile must be a number";
  if (p < 50 || p > 100) return "percentile must be in [50, 100]";
  return null;
}

export function validateMaxTarget(frames: number): string | null {
  if (!Number.isInteger(frames) || frames < 1) return "max target must be a positive integer";
  return null;
}

export function validateGain(gain: number): string | null {
  if (!Number.isFinite(gain)) return "gain must be a number";
  if (gain < 0 || gain > 1) return "gain must be in [0, 1]";
  return null;
}
