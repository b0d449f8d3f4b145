/**
 * Sparkline geometry as pure functions: series in, SVG path string
 * out. A null value is a gap; the line breaks instead of
 * interpolating across it, because a missing RTT sample means "the
 * probe was lost", not "the RTT was somewhere in between".
 */

export interface SparkRange {
  lo: number;
  hi: number;
}

/** Range over the non-null values, padded a little so a flat series
 * does not sit on the frame edge. Fixed bounds win when given. */
export function sparkRange(
  values: Array<number | null>,
  fixed?: Partial<SparkRange>,
): SparkRange {
  let lo = Infinity;
  let hi = -Infinity;
  for (const v of values) {
    if (v === null) continue;
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (lo > hi) {
    lo = 0;
    hi = 1;
  }
  if (fixed?.lo !== undefined) lo = fixed.lo;
  if (fixed?.hi !== undefined) hi = fixed.hi;
  if (hi - lo < 1e-9) hi = lo + 1; // flat series: give it a band to sit in
  return { lo, hi };
}

/**
 * Build the path. Points are spaced evenly across the width in input
 * order (the telemetry cadence is fixed, so index is time). Each
 * contiguous run of numbers becomes one M...L... segment; an isolated
 * point gets a zero-length line so it still draws a dot with round
 * line caps.
 */
export function sparklinePath(
  values: Array<number | null>,
  width: number,
  height: number,
  range?: SparkRange,
  pad = 2,
): string {
  if (values.length === 0) return "";
  const { lo, hi } = range ?? sparkRange(values);
  const innerH = height - 2 * pad;
  const step = values.length > 1 ? (width - 2 * pad) / (values.length - 1) : 0;
  const y = (v: number) => pad + innerH * (1 - (v - lo) / (hi - lo));
  const parts: string[] = [];
  let inSegment = false;
  let segmentLen = 0;
  values.forEach((v, i) => {
    if (v === null) {
      if (inSegment && segmentLen === 1) parts.push("l 0 0");
      inSegment = false;
      return;
    }
    const px = (pad + i * step).toFixed(2);
    const py = y(v).toFixed(2);
    if (inSegment) {
      parts.push(`L ${px} ${py}`);
      segmentLen += 1;
    } else {
      parts.push(`M ${px} ${py}`);
      inSegment = true;
      segmentLen = 1;
    }
  });
  if (inSegment && segmentLen === 1) parts.push("l 0 0");
  return parts.join(" ");
}

/** Number of disjoint line segments a series draws; a gap splits. */
export function segmentCount(values: Array<number | null>): number {
  let count = 0;
  let inSegment = false;
  for (const v of values) {
    if (v === null) {
      inSegment = false;
    } else if (!inSegment) {
      count += 1;
      inSegment = true;
    }
  }
  return count;
}
