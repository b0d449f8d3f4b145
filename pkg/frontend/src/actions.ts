/**
 * Control actions: validate, mark pending, POST, then wait for the
 * echo. A 4xx (or client-side validation) fails the action without
 * any request reaching the wire / any state change applied locally;
 * confirmation only ever comes from a later telemetry or status
 * fetch echoing the new value, because that is proof the change is
 * live in the engine, not merely accepted.
 */

import {
  ApiError,
  ControlApi,
  validateBpm,
  validateGain,
  validateMaxTarget,
  validatePercentile,
} from "./api.js";
import type { PanelStore } from "./state.js";

export class Actions {
  constructor(
    private api: ControlApi,
    private store: PanelStore,
    private now: () => number = Date.now,
  ) {}

  private async submit(
    control: string,
    label: string,
    confirmedBy: Parameters<PanelStore["beginAction"]>[3],
    post: () => Promise<unknown>,
  ): Promise<void> {
    const action = this.store.beginAction(control, label, this.now(), confirmedBy);
    if (action === null) return; // one in-flight mutation per control
    try {
      await post();
      // stays pending until the echo confirms it (settleActions)
    } catch (err) {
      const msg = err instanceof ApiError ? err.message : String(err);
      this.store.failAction(action.id, msg);
    }
  }

  /** Returns a validation error without sending anything, or null
   * when the request was submitted. */
  setBpm(bpm: number): string | null {
    const invalid = validateBpm(bpm);
    if (invalid !== null) return invalid;
    void this.submit(
      "metronome",
      `bpm ${bpm}`,
      (echo) => echo.metronome !== null && echo.metronome.bpm === bpm,
      () => this.api.setMetronome({ bpm }),
    );
    return null;
  }

  setMetronomeEnabled(enabled: boolean): string | null {
    void this.submit(
      "metronome",
      enabled ? "metronome on" : "metronome off",
      (echo) => echo.metronome !== null && echo.metronome.enabled === enabled,
      () => this.api.setMetronome({ enabled }),
    );
    return null;
  }

  setPercentile(percentile: number): string | null {
    const invalid = validatePercentile(percentile);
    if (invalid !== null) return invalid;
    void this.submit(
      "buffer",
      `percentile ${percentile}`,
      (echo) => echo.buffer !== null && echo.buffer.percentile === percentile,
      () => this.api.setBuffer({ percentile }),
    );
    return null;
  }

  setMaxTarget(frames: number): string | null {
    const invalid = validateMaxTarget(frames);
    if (invalid !== null) return invalid;
    void this.submit(
      "buffer",
      `max target ${frames}`,
      (echo) => echo.buffer !== null && echo.buffer.max_target_frames === frames,
      () => this.api.setBuffer({ max_target_frames: frames }),
    );
    return null;
  }

  setGain(source: string, bus: string, gain: number): string | null {
    const invalid = validateGain(gain);
    if (invalid !== null) return invalid;
    void this.submit(
      `routing:${source}:${bus}`,
      `${source} -> ${bus} = ${gain}`,
      (echo) => echo.routing[source]?.[bus] === gain,
      () => this.api.setRouting({ source, bus, gain }),
    );
    return null;
  }

  /** Stop is the one action confirmed by its own response: after it
   * the session ends and no echo will ever arrive. */
  stop(): void {
    const action = this.store.beginAction("stop", "stop session", this.now());
    if (action === null) return;
    this.api.stop().then(
      () => {
        this.store.confirmAction(action.id);
        this.store.markStopped();
      },
      (err) => {
        const msg = err instanceof ApiError ? err.message : String(err);
        this.store.failAction(action.id, msg);
      },
    );
  }
}
