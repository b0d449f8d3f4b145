/**
 * Server-sent events over fetch streaming, so the same code runs in
 * the browser and under node for tests. EventSource is deliberately
 * not used: its automatic reconnect hides the connection state the
 * panel needs to show, and node does not have it.
 */

/** Incremental SSE frame parser. Feed it raw text chunks in any
 * split; it returns the complete `data` payloads, one string per
 * event. Comment lines (keepalives) and fields other than `data`
 * are ignored, which is all the telemetry stream emits. */
export class SseParser {
  private buf = "";
  private dataLines: string[] = [];

  feed(chunk: string): string[] {
    const out: string[] = [];
    this.buf += chunk;
    let nl: number;
    while ((nl = this.buf.indexOf("\n")) >= 0) {
      let line = this.buf.slice(0, nl);
      this.buf = this.buf.slice(nl + 1);
      if (line.endsWith("\r")) line = line.slice(0, -1);
      if (line === "") {
        // blank line ends the event
        if (this.dataLines.length > 0) {
          out.push(this.dataLines.join("\n"));
          this.dataLines = [];
        }
      } else if (line.startsWith(":")) {
        // comment; the peer uses these as keepalives
      } else {
        const colon = line.indexOf(":");
        const field = colon < 0 ? line : line.slice(0, colon);
        let value = colon < 0 ? "" : line.slice(colon + 1);
        if (value.startsWith(" ")) value = value.slice(1);
        if (field === "data") this.dataLines.push(value);
      }
    }
    return out;
  }
}

export type FeedStatus = "connecting" | "live" | "reconnecting" | "closed";

export interface FeedHandlers {
  onEvent(payload: string): void;
  onStatus(status: FeedStatus): void;
}

/** Delay before reconnect attempt n (0-based): 0.5 s doubling to a
 * 5 s ceiling. */
export function backoffDelayMs(attempt: number): number {
  return Math.min(500 * 2 ** attempt, 5000);
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

/**
 * One long-lived subscription with reconnect. Status transitions:
 * connecting -> live on HTTP 200, live -> reconnecting when the
 * stream drops, closed only via close(). The consumer decides what
 * staleness means; this class only reports transport state.
 */
export class EventFeed {
  private ctrl: AbortController | null = null;
  private closed = false;
  private attempt = 0;

  constructor(
    private url: string,
    private handlers: FeedHandlers,
  ) {}

  start(): void {
    void this.loop();
  }

  close(): void {
    this.closed = true;
    this.ctrl?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.closed) {
      this.handlers.onStatus(this.attempt === 0 ? "connecting" : "reconnecting");
      this.ctrl = new AbortController();
      try {
        const res = await fetch(this.url, {
          headers: { Accept: "text/event-stream" },
          signal: this.ctrl.signal,
        });
        if (!res.ok || res.body === null) throw new Error(`http ${res.status}`);
        this.handlers.onStatus("live");
        this.attempt = 0;
        const reader = res.body.getReader();
        const decoder = new TextDecoder();
        const parser = new SseParser();
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const payload of parser.feed(decoder.decode(value, { stream: true }))) {
            this.handlers.onEvent(payload);
          }
        }
      } catch {
        // connection refused, reset, aborted: all retried below
      }
      if (this.closed) break;
      await sleep(backoffDelayMs(this.attempt));
      this.attempt += 1;
    }
    this.handlers.onStatus("closed");
  }
}
