import { describe, expect, it } from "vitest";

import { fold, mix64, sym, symMatrix, symVector } from "../src/mix64.js";

// frozen vectors shared with the toolkit's test suite: any drift here
// breaks cross-language reproducibility of synthetic attention inputs
describe("mix64", () => {
  it("matches the canonical splitmix64 sequence", () => {
    expect(mix64(0n)).toBe(0xe220a8397b1dcdafn);
    expect(mix64(1n)).toBe(0x910a2dec89025cc1n);
    expect(mix64(0xdeadbeefn)).toBe(0x4adfb90f68c9eb9bn);
  });

  it("folds coordinates left to right", () => {
    expect(fold(42, 1, 2, 3)).toBe(0x64a0c8a842e4f6b4n);
  });

  it("maps hashes into [-1, 1) with the pinned doubles", () => {
    expect(sym(mix64(0n))).toBe(0.7666216164272852);
    expect(sym(fold(7, 0x51, 0, 1, 2))).toBe(0.5761595453051984);
  });

  it("vector and matrix entries agree with per-entry folding", () => {
    const vec = symVector(9, [3, 4], 5);
    for (let i = 0; i < 5; i++) {
      expect(vec[i]).toBe(sym(fold(9, 3, 4, i)));
    }
    const mat = symMatrix(9, [3], 3, 4);
    for (let r = 0; r < 3; r++) {
      for (let c = 0; c < 4; c++) {
        expect(mat[r * 4 + c]).toBe(sym(fold(9, 3, r, c)));
      }
    }
  });

  it("stays in range over many draws", () => {
    const vec = symVector(123, [0], 10_000);
    for (const v of vec) {
      expect(v).toBeGreaterThanOrEqual(-1);
      expect(v).toBeLessThan(1);
    }
  });
});
