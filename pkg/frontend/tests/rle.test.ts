import { describe, expect, it, vi } from "vitest";

import { decodeRle, tryDecodeRle } from "../src/rle.js";
import fixtures from "./fixtures/rle_cases.json";

describe("decodeRle", () => {
  it("decodes a single zero run", () => {
    expect(Array.from(decodeRle([4], 2, 2))).toEqual([0, 0, 0, 0]);
  });

  it("handles a leading empty zero run", () => {
    expect(Array.from(decodeRle([0, 4], 2, 2))).toEqual([1, 1, 1, 1]);
  });

  it("decodes the alternating hand case", () => {
    expect(Array.from(decodeRle([1, 2, 1], 2, 2))).toEqual([0, 1, 1, 0]);
  });

  it("rejects a sum mismatch", () => {
    expect(() => decodeRle([3], 2, 2)).toThrow(/sum/);
  });

  it("rejects negative runs", () => {
    expect(() => decodeRle([-1, 5], 2, 2)).toThrow(RangeError);
  });

  it("matches the service encoder on 100 random masks", () => {
    const cases = (fixtures as {
      cases: { h: number; w: number; rle: number[]; mask: number[] }[];
    }).cases;
    expect(cases).toHaveLength(100);
    for (const c of cases) {
      const decoded = decodeRle(c.rle, c.h, c.w);
      expect(decoded.length).toBe(c.h * c.w);
      expect(Array.from(decoded)).toEqual(c.mask);
    }
  });
});

describe("tryDecodeRle", () => {
  it("returns null and warns on malformed payloads", () => {
    const warn = vi.spyOn(console, "warn").mockImplementation(() => {});
    expect(tryDecodeRle([1], 2, 2)).toBeNull();
    expect(warn).toHaveBeenCalled();
    warn.mockRestore();
  });

  it("passes well-formed payloads through", () => {
    expect(tryDecodeRle([0, 4], 2, 2)).not.toBeNull();
  });
});
