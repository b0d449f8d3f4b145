/**
 * DOM layer. Renders the store on every change and forwards widget
 * events to the actions layer. No state lives here beyond the DOM
 * itself; a full page reload rebuilds everything from the GET
 * endpoints (see boot()).
 */

import type { Status, StreamSample } from "./api.js";
import { ControlApi } from "./api.js";
import { Actions } from "./actions.js";
import { segmentCount, sparkRange, sparklinePath } from "./charts.js";
import { fmtAudioSeconds, fmtCount, fmtMs, fmtUptime } from "./format.js";
import { EventFeed } from "./sse.js";
import { PanelStore } from "./state.js";

const SPARK_W = 260;
const SPARK_H = 48;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className !== undefined) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function spark(values: Array<number | null>, cls: string, fixedLo?: number): SVGSVGElement {
  const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
  svg.setAttribute("viewBox", `0 0 ${SPARK_W} ${SPARK_H}`);
  svg.setAttribute("class", `spark ${cls}`);
  const range = sparkRange(values, fixedLo === undefined ? undefined : { lo: fixedLo });
  const path = document.createElementNS("http://www.w3.org/2000/svg", "path");
  path.setAttribute("d", sparklinePath(values, SPARK_W, SPARK_H, range));
  path.setAttribute("fill", "none");
  svg.appendChild(path);
  if (segmentCount(values) > 1) svg.classList.add("gappy");
  return svg;
}

/** Numeric input + apply button; apply disabled while the control has
 * a pending action, validation errors shown inline without a request. */
function numberControl(
  label: string,
  initial: string,
  apply: (value: number) => string | null,
): { root: HTMLElement; input: HTMLInputElement; setBusy: (b: boolean) => void; showError: (e: string | null) => void } {
  const root = el("div", "control");
  const lab = el("label", undefined, label);
  const input = el("input");
  input.type = "number";
  input.value = initial;
  const btn = el("button", undefined, "set");
  const err = el("span", "control-error");
  btn.addEventListener("click", () => {
    const invalid = apply(Number(input.value));
    err.textContent = invalid ?? "";
  });
  input.addEventListener("keydown", (ev) => {
    if (ev.key === "Enter") btn.click();
  });
  lab.appendChild(input);
  root.append(lab, btn, err);
  return {
    root,
    input,
    setBusy: (b) => {
      btn.disabled = b;
    },
    showError: (e) => {
      err.textContent = e ?? "";
    },
  };
}

export function mount(root: HTMLElement, apiBase: string): () => void {
  const api = new ControlApi(apiBase);
  const store = new PanelStore();
  const actions = new Actions(api, store);

  root.innerHTML = "";
  const header = el("header");
  const title = el("h1", undefined, "mevo");
  const ident = el("span", "ident", apiBase);
  const badge = el("span", "badge", "connecting");
  const uptime = el("span", "uptime");
  header.append(title, ident, badge, uptime);

  const banner = el("div", "banner hidden");
  const streamsBox = el("main", "streams");
  const aside = el("aside", "controls");
  root.append(header, banner, streamsBox, aside);

  // ---- controls (built once; values refreshed unless focused) ------

  const bpm = numberControl("tempo (bpm)", "120", (v) => actions.setBpm(v));
  const metToggle = el("button", undefined, "metronome on");
  metToggle.addEventListener("click", () => {
    const on = store.metronome?.enabled ?? false;
    actions.setMetronomeEnabled(!on);
  });
  const pct = numberControl("estimator percentile", "99", (v) => actions.setPercentile(v));
  const maxT = numberControl("max target (frames)", "1536", (v) => actions.setMaxTarget(Math.round(v)));
  const routingBox = el("div", "routing");
  const stopBtn = el("button", "stop", "stop session");
  stopBtn.addEventListener("click", () => actions.stop());
  const actionLog = el("ul", "actions");
  aside.append(
    el("h2", undefined, "metronome"), metToggle, bpm.root,
    el("h2", undefined, "buffer"), pct.root, maxT.root,
    el("h2", undefined, "routing"), routingBox,
    el("h2", undefined, "session"), stopBtn, actionLog,
  );

  const gainInputs = new Map<string, HTMLInputElement>();

  function renderRouting(): void {
    const sources = Object.keys(store.routing).sort();
    for (const source of sources) {
      const row = store.routing[source];
      if (row === undefined) continue;
      for (const bus of Object.keys(row).sort()) {
        const key = `${source}:${bus}`;
        if (!gainInputs.has(key)) {
          const wrap = el("div", "control");
          const lab = el("label", undefined, `${source} -> ${bus}`);
          const input = el("input");
          input.type = "number";
          input.step = "0.05";
          input.min = "0";
          input.max = "1";
          input.value = String(row[bus]);
          input.addEventListener("change", () => {
            actions.setGain(source, bus, Number(input.value));
          });
          lab.appendChild(input);
          wrap.appendChild(lab);
          routingBox.appendChild(wrap);
          gainInputs.set(key, input);
        }
        const input = gainInputs.get(key)!;
        if (document.activeElement !== input) input.value = String(row[bus]);
      }
    }
  }

  // ---- stream cards -------------------------------------------------

  function streamCard(sample: StreamSample, status: Status | null): HTMLElement {
    const points = store.history.get(sample.stream_id) ?? [];
    const rtts = points.map((p) => p.rtt_ms);
    const occ = points.map((p) => p.occupancy_ms as number | null);
    const lost = points.map((p) => p.frames_lost as number | null);
    const peer = status?.peers.find((p) => p.stream_id === sample.stream_id);
    const rate = status?.stream.sample_rate ?? 44100;

    const card = el("section", "card");
    card.appendChild(el("h2", undefined, peer !== undefined ? `stream ${sample.stream_id} · ${peer.id}` : `stream ${sample.stream_id}`));

    const grid = el("div", "grid");
    const cell = (name: string, value: string, chart?: SVGSVGElement) => {
      const c = el("div", "cell");
      c.appendChild(el("div", "name", name));
      c.appendChild(el("div", "value", value));
      if (chart !== undefined) c.appendChild(chart);
      grid.appendChild(c);
    };
    cell("round trip", fmtMs(sample.rtt_ms), spark(rtts, "rtt"));
    cell(
      "buffer",
      `${fmtMs(sample.buffer_occupancy_ms)} / target ${fmtMs(sample.buffer_target_ms)}`,
      spark(occ, "occ", 0),
    );
    cell(
      "lost audio",
      `${fmtCount(sample.frames_lost)} frames (${fmtAudioSeconds(sample.frames_lost, rate)})`,
      spark(lost, "loss", 0),
    );
    cell("late / skipped", `${fmtCount(sample.frames_late)} / ${fmtCount(sample.frames_skipped)}`);
    cell("datagrams", `${fmtCount(sample.dgrams_recv)} rx, ${fmtCount(sample.dgrams_malformed)} bad`);
    card.appendChild(grid);
    return card;
  }

  // ---- render -------------------------------------------------------

  function render(): void {
    const now = Date.now();
    if (store.stopped) {
      badge.textContent = "stopped";
      badge.className = "badge stopped";
      banner.textContent = "session stopped";
      banner.className = "banner terminal";
      return;
    }
    const stale = store.isStale(now);
    badge.textContent = stale ? "stale" : store.link;
    badge.className = `badge ${stale ? "stale" : store.link}`;
    banner.className = stale || store.link === "reconnecting" ? "banner" : "banner hidden";
    banner.textContent = stale
      ? "no telemetry for 3 s; data below is stale"
      : "connection lost; reconnecting";

    if (store.status !== null) {
      ident.textContent = `peer ${store.status.peer_id} @ ${apiBase}`;
      uptime.textContent = fmtUptime(store.status.uptime_s);
    }

    streamsBox.innerHTML = "";
    const ordered = [...store.streams.values()].sort((a, b) => a.stream_id - b.stream_id);
    if (ordered.length === 0) {
      streamsBox.appendChild(el("p", "empty", "no remote streams yet"));
    }
    for (const sample of ordered) streamsBox.appendChild(streamCard(sample, store.status));

    if (store.metronome !== null) {
      metToggle.textContent = store.metronome.enabled ? "metronome off" : "metronome on";
      metToggle.disabled = store.controlBusy("metronome") || store.metronome.owner === null;
      if (document.activeElement !== bpm.input) bpm.input.value = String(store.metronome.bpm);
    }
    bpm.setBusy(store.controlBusy("metronome"));
    if (store.bufferConfig !== null) {
      if (document.activeElement !== pct.input) pct.input.value = String(store.bufferConfig.percentile);
      if (document.activeElement !== maxT.input) maxT.input.value = String(store.bufferConfig.max_target_frames);
    }
    pct.setBusy(store.controlBusy("buffer"));
    maxT.setBusy(store.controlBusy("buffer"));
    renderRouting();

    actionLog.innerHTML = "";
    for (const a of store.actions.slice(-6)) {
      const li = el("li", `action ${a.state}`, `${a.label}: ${a.state}${a.error !== undefined ? ` (${a.error})` : ""}`);
      actionLog.appendChild(li);
    }
  }

  store.subscribe(render);

  // ---- boot: reconstruct the full view from GETs, then stream ------

  async function boot(): Promise<void> {
    try {
      const [status, latest] = await Promise.all([api.status(), api.latest()]);
      store.reconstruct(status, latest, Date.now());
    } catch {
      // peer not up yet; the feed's reconnect loop keeps trying
    }
  }
  void boot();

  const feed = new EventFeed(`${apiBase}/telemetry/stream`, {
    onEvent: (payload) => {
      let batch;
      try {
        batch = JSON.parse(payload);
      } catch {
        return;
      }
      store.applyBatch(batch, Date.now());
    },
    onStatus: (s) => store.setLink(s),
  });
  feed.start();

  // periodic status refresh for uptime / peer table, and the clock
  // tick that times out unacknowledged actions even when the feed is
  // silent
  const statusTimer = setInterval(() => {
    if (store.stopped) return;
    api.status().then(
      (s) => store.applyStatus(s, Date.now()),
      () => {},
    );
  }, 5000);
  const tick = setInterval(() => {
    store.settleActions(Date.now());
    store.pruneActions(Date.now());
    render();
  }, 1000);

  return () => {
    clearInterval(statusTimer);
    clearInterval(tick);
    feed.close();
  };
}
