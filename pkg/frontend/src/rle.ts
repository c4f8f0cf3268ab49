// Client mirror of the service's run-length mask encoding: row-major,
// alternating zero/one run lengths, first run counts zeros.

export function decodeRle(runs: number[], h: number, w: number): Uint8Array {
  const total = runs.reduce((a, b) => a + b, 0);
  if (runs.some((r) => r < 0 || !Number.isInteger(r))) {
    throw new RangeError("run lengths must be non-negative integers");
  }
  if (total !== h * w) {
    throw new RangeError(`runs sum to ${total}, expected ${h * w}`);
  }
  const mask = new Uint8Array(h * w);
  let pos = 0;
  let value = 0;
  for (const run of runs) {
    if (value) mask.fill(1, pos, pos + run);
    pos += run;
    value ^= 1;
  }
  return mask;
}

/** Decode for rendering: a malformed payload degrades to "no contour"
 * with a console warning instead of breaking the result view. */
export function tryDecodeRle(
  runs: number[],
  h: number,
  w: number,
): Uint8Array | null {
  try {
    return decodeRle(runs, h, w);
  } catch (err) {
    console.warn("mask RLE rejected:", err);
    return null;
  }
}
