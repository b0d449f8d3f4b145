import { describe, expect, test } from "vitest";
import { segmentCount, sparkRange, sparklinePath } from "../src/charts.js";

describe("sparklinePath", () => {
  test("continuous series is a single M...L path", () => {
    const d = sparklinePath([1, 2, 3, 4], 100, 40);
    expect(d.match(/M /g)).toHaveLength(1);
    expect(d.match(/L /g)).toHaveLength(3);
  });

  test("a null breaks the line instead of interpolating", () => {
    const d = sparklinePath([1, 2, null, 4, 5], 100, 40);
    expect(d.match(/M /g)).toHaveLength(2);
    // the gap column contributes no point at all
    expect(d.match(/L /g)).toHaveLength(2);
  });

  test("flat-at-zero loss series stays on one horizontal line", () => {
    const d = sparklinePath([0, 0, 0, 0, 0], 100, 40, { lo: 0, hi: 1 });
    const ys = [...d.matchAll(/[ML] [\d.]+ ([\d.]+)/g)].map((m) => Number(m[1]));
    expect(ys).toHaveLength(5);
    expect(new Set(ys).size).toBe(1);
    expect(ys[0]).toBeCloseTo(38, 5); // bottom of the frame minus padding
  });

  test("an isolated point still draws (zero-length stroke)", () => {
    expect(sparklinePath([null, 3, null], 100, 40)).toContain("l 0 0");
    expect(sparklinePath([3], 100, 40)).toContain("l 0 0");
  });

  test("empty and all-null series render nothing", () => {
    expect(sparklinePath([], 100, 40)).toBe("");
    expect(sparklinePath([null, null], 100, 40)).toBe("");
  });

  test("y axis is inverted: larger values sit higher", () => {
    const d = sparklinePath([0, 10], 100, 40, { lo: 0, hi: 10 });
    const ys = [...d.matchAll(/[ML] [\d.]+ ([\d.]+)/g)].map((m) => Number(m[1]));
    expect(ys[0]!).toBeGreaterThan(ys[1]!);
  });
});

describe("sparkRange", () => {
  test("spans the non-null values", () => {
    expect(sparkRange([3, null, 7])).toEqual({ lo: 3, hi: 7 });
  });

  test("flat series gets a unit band", () => {
    expect(sparkRange([5, 5, 5])).toEqual({ lo: 5, hi: 6 });
  });

  test("fixed lower bound pins zero for occupancy charts", () => {
    expect(sparkRange([5, 9], { lo: 0 })).toEqual({ lo: 0, hi: 9 });
  });
});

describe("segmentCount", () => {
  test("counts runs separated by gaps", () => {
    expect(segmentCount([1, 2, 3])).toBe(1);
    expect(segmentCount([1, null, 3])).toBe(2);
    expect(segmentCount([null, 1, null, null, 2, 3, null])).toBe(2);
    expect(segmentCount([])).toBe(0);
  });
});
