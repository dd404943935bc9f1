/**
 * Deterministic value generation shared with the pruning toolkit.
 *
 * Same contract as the toolkit's hashrand module: fold coordinates through
 * the splitmix64 finalizer, then map the 64-bit state to a double in
 * [-1, 1) from its top 53 bits. A (seed, coordinates) key produces
 * bit-identical doubles in both implementations.
 */

const MASK = (1n << 64n) - 1n;
const GOLDEN = 0x9e3779b97f4a7c15n;
const MIX1 = 0xbf58476d1ce4e5b9n;
const MIX2 = 0x94d049bb133111ebn;

export function mix64(x: bigint): bigint {
  x = (x + GOLDEN) & MASK;
  let z = x;
  z = ((z ^ (z >> 30n)) * MIX1) & MASK;
  z = ((z ^ (z >> 27n)) * MIX2) & MASK;
  return z ^ (z >> 31n);
}

export function fold(seed: bigint | number, ...coords: Array<bigint | number>): bigint {
  let h = BigInt(seed) & MASK;
  for (const c of coords) {
    h = mix64(h ^ (BigInt(c) & MASK));
  }
  return h;
}

/** Map a 64-bit hash to a double in [-1, 1). */
export function sym(h: bigint): number {
  return Number(h >> 11n) * 2 ** -53 * 2 - 1;
}

/** Length-n vector; entry i keyed by fold(seed, ...prefix, i). */
export function symVector(seed: number, prefix: number[], n: number): Float64Array {
  const base = fold(seed, ...prefix);
  const out = new Float64Array(n);
  for (let i = 0; i < n; i++) {
    out[i] = sym(mix64(base ^ BigInt(i)));
  }
  return out;
}

/** rows x cols matrix (row-major); entry (r, c) keyed by fold(seed, ...prefix, r, c). */
export function symMatrix(seed: number, prefix: number[], rows: number, cols: number): Float64Array {
  const base = fold(seed, ...prefix);
  const out = new Float64Array(rows * cols);
  for (let r = 0; r < rows; r++) {
    const rowKey = mix64(base ^ BigInt(r));
    for (let c = 0; c < cols; c++) {
      out[r * cols + c] = sym(mix64(rowKey ^ BigInt(c)));
    }
  }
  return out;
}

/** Fold a string into a 64-bit seed (UTF-8 bytes, left to right). */
export function stringSeed(text: string): bigint {
  const bytes = Buffer.from(text, "utf8");
  let h = 0n;
  for (const b of bytes) {
    h = mix64(h ^ BigInt(b));
  }
  return h;
}
