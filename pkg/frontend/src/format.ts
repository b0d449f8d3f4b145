// Readout formatting. All of these render "the current value" text,
// so they favour stable width over precision.

export function fmtMs(v: number | null): string {
  return v === null ? "--" : `${v.toFixed(2)} ms`;
}

export function fmtCount(v: number): string {
  if (v >= 1e6) return `${(v / 1e6).toFixed(2)} M`;
  if (v >= 1e4) return `${(v / 1e3).toFixed(1)} k`;
  return String(v);
}

/** Cumulative frames as seconds of audio at the session rate. */
export function fmtAudioSeconds(frames: number, sampleRate: number): string {
  return `${(frames / sampleRate).toFixed(2)} s`;
}

export function fmtUptime(seconds: number): string {
  const s = Math.floor(seconds);
  const h = Math.floor(s / 3600);
  const m = Math.floor((s % 3600) / 60);
  const rest = s % 60;
  return h > 0 ? `${h}h ${m}m ${rest}s` : m > 0 ? `${m}m ${rest}s` : `${rest}s`;
}
