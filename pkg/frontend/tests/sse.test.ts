import { describe, expect, test } from "vitest";
import { SseParser, backoffDelayMs } from "../src/sse.js";

describe("SseParser", () => {
  test("one event in one chunk", () => {
    const p = new SseParser();
    expect(p.feed('data: {"a":1}\n\n')).toEqual(['{"a":1}']);
  });

  test("event split across arbitrary chunk boundaries", () => {
    const p = new SseParser();
    const wire = 'data: {"t_s": 4.0}\n\ndata: {"t_s": 5.0}\n\n';
    const got: string[] = [];
    // feed one character at a time: worst-case packetization
    for (const ch of wire) got.push(...p.feed(ch));
    expect(got).toEqual(['{"t_s": 4.0}', '{"t_s": 5.0}']);
  });

  test("keepalive comments produce nothing", () => {
    const p = new SseParser();
    expect(p.feed(": keepalive\n\n")).toEqual([]);
    expect(p.feed(": keepalive\n\ndata: x\n\n")).toEqual(["x"]);
  });

  test("multi-line data joins with newline", () => {
    const p = new SseParser();
    expect(p.feed("data: line one\ndata: line two\n\n")).toEqual(["line one\nline two"]);
  });

  test("crlf line endings are tolerated", () => {
    const p = new SseParser();
    expect(p.feed("data: x\r\n\r\n")).toEqual(["x"]);
  });

  test("data without the conventional space", () => {
    const p = new SseParser();
    expect(p.feed("data:tight\n\n")).toEqual(["tight"]);
  });

  test("unknown fields are ignored", () => {
    const p = new SseParser();
    expect(p.feed("event: tick\nid: 7\ndata: payload\nretry: 100\n\n")).toEqual(["payload"]);
  });

  test("incomplete event stays buffered", () => {
    const p = new SseParser();
    expect(p.feed("data: partial")).toEqual([]);
    expect(p.feed("\n")).toEqual([]);
    expect(p.feed("\n")).toEqual(["partial"]);
  });
});

describe("backoffDelayMs", () => {
  test("doubles from 500 ms and caps at 5 s", () => {
    expect([0, 1, 2, 3, 4, 10].map(backoffDelayMs)).toEqual([500, 1000, 2000, 4000, 5000, 5000]);
  });
});
