import { afterEach, beforeEach, describe, expect, test, vi } from "vitest";
import { Actions } from "../src/actions.js";
import { ApiError, ControlApi } from "../src/api.js";
import { PanelStore } from "../src/state.js";
import type { TelemetryBatch } from "../src/api.js";

function response(doc: unknown, status = 200): Response {
  return {
    ok: status >= 200 && status < 300,
    status,
    statusText: `http ${status}`,
    json: () => Promise.resolve(doc),
  } as unknown as Response;
}

function batch(over: Partial<TelemetryBatch> = {}): TelemetryBatch {
  return {
    t_s: 1.0,
    streams: [],
    metronome: { enabled: true, bpm: 120, beats_per_bar: 4, owner: "alpha" },
    buffer_config: { percentile: 99.5, max_target_frames: 4096 },
    routing: {},
    ...over,
  };
}

/** Let the submit() promise chain run to completion. */
const settle = () => new Promise((r) => setTimeout(r, 0));

describe("control actions against a mocked API", () => {
  const fetchMock = vi.fn();
  let store: PanelStore;
  let actions: Actions;
  let now: number;

  beforeEach(() => {
    fetchMock.mockReset();
    fetchMock.mockResolvedValue(response({}));
    vi.stubGlobal("fetch", fetchMock);
    store = new PanelStore();
    now = 50_000;
    actions = new Actions(new ControlApi("http://peer.test"), store, () => now);
  });

  afterEach(() => {
    vi.unstubAllGlobals();
  });

  test("bpm change posts one request and confirms only on echo", async () => {
    fetchMock.mockResolvedValueOnce(response({ enabled: true, bpm: 90 }));

    expect(actions.setBpm(90)).toBeNull();
    await settle();

    expect(fetchMock).toHaveBeenCalledTimes(1);
    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe("http://peer.test/metronome");
    expect(init.method).toBe("POST");
    expect(JSON.parse(init.body as string)).toEqual({ bpm: 90 });

    // a 200 on the POST is not confirmation; the engine echo is
    expect(store.actions[0]!.state).toBe("pending");

    store.applyBatch(batch({ metronome: { enabled: true, bpm: 90, beats_per_bar: 4, owner: "alpha" } }), now + 800);
    expect(store.actions[0]!.state).toBe("confirmed");
  });

  test("bpm outside [20, 300] is rejected client-side, nothing sent", () => {
    const err = actions.setBpm(1000);
    expect(err).toMatch(/\[20, 300\]/);
    expect(fetchMock).not.toHaveBeenCalled();
    expect(store.actions).toHaveLength(0);
  });

  test("gain, percentile and max target validate before sending", () => {
    expect(actions.setGain("alice", "audience", 1.5)).toMatch(/\[0, 1\]/);
    expect(actions.setPercentile(30)).toMatch(/\[50, 100\]/);
    expect(actions.setMaxTarget(0)).toMatch(/positive integer/);
    expect(fetchMock).not.toHaveBeenCalled();
    expect(store.actions).toHaveLength(0);
  });

  test("a 4xx fails the action with the server's message", async () => {
    fetchMock.mockResolvedValueOnce(
      response({ error: { code: "invalid_value", message: "metronome has no owner" } }, 400),
    );

    expect(actions.setMetronomeEnabled(true)).toBeNull();
    await settle();

    expect(store.actions[0]!.state).toBe("failed");
    expect(store.actions[0]!.error).toBe("metronome has no owner");
  });

  test("an unreachable server fails the action", async () => {
    fetchMock.mockRejectedValueOnce(new TypeError("fetch failed"));

    actions.setPercentile(95);
    await settle();

    expect(store.actions[0]!.state).toBe("failed");
    expect(store.actions[0]!.error).toMatch(/unreachable|fetch failed/);
  });

  test("stop posts /session/stop and the view goes terminal", async () => {
    fetchMock.mockResolvedValueOnce(response({ stopping: true }));

    actions.stop();
    await settle();

    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe("http://peer.test/session/stop");
    expect(init.method).toBe("POST");
    expect(store.actions[0]!.state).toBe("confirmed");
    expect(store.stopped).toBe(true);
  });

  test("a second change on a busy control is not sent", async () => {
    fetchMock.mockResolvedValue(response({ enabled: true, bpm: 90 }));

    actions.setBpm(90);
    expect(actions.setBpm(140)).toBeNull(); // valid input, but the control is busy
    await settle();
    expect(fetchMock).toHaveBeenCalledTimes(1);

    // once the first confirms, the control frees up
    store.applyBatch(batch({ metronome: { enabled: true, bpm: 90, beats_per_bar: 4, owner: "alpha" } }), now + 800);
    actions.setBpm(140);
    await settle();
    expect(fetchMock).toHaveBeenCalledTimes(2);
  });

  test("routing change posts source, bus and gain together", async () => {
    fetchMock.mockResolvedValueOnce(response({ source: "alice", bus: "audience", gain: 0.5 }));

    expect(actions.setGain("alice", "audience", 0.5)).toBeNull();
    await settle();

    const [url, init] = fetchMock.mock.calls[0]!;
    expect(url).toBe("http://peer.test/routing");
    expect(JSON.parse(init.body as string)).toEqual({ source: "alice", bus: "audience", gain: 0.5 });

    store.applyBatch(batch({ routing: { alice: { audience: 0.5, musician_monitor: 1.0 } } }), now + 700);
    expect(store.actions[0]!.state).toBe("confirmed");
  });
});

describe("ControlApi error mapping", () => {
  afterEach(() => {
    vi.unstubAllGlobals();
  });

  test("structured errors become ApiError with code and status", async () => {
    const fetchMock = vi.fn().mockResolvedValue(
      response({ error: { code: "not_found", message: "no such path" } }, 404),
    );
    vi.stubGlobal("fetch", fetchMock);

    const err = await new ControlApi("http://peer.test").status().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("not_found");
    expect((err as ApiError).status).toBe(404);
    expect((err as ApiError).message).toBe("no such path");
  });

  test("network failure becomes code unreachable with status 0", async () => {
    vi.stubGlobal("fetch", vi.fn().mockRejectedValue(new TypeError("fetch failed")));

    const err = await new ControlApi("http://peer.test").latest().catch((e: unknown) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect((err as ApiError).code).toBe("unreachable");
    expect((err as ApiError).status).toBe(0);
  });
});
