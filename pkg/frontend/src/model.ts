/**
 * Deterministic scaled-down decoder used to produce genuine Q/K captures.
 *
 * Model weights (patch projection, byte embeddings, per-layer residual
 * blocks, per-layer query/key projections) derive from the shared 64-bit
 * mixing function keyed by (model id, seed), so an export is a pure
 * function of its inputs: identical runs write identical bytes. Vision
 * tokens embed pixel-derived patch features (16-bin histogram, mean,
 * spread, grid position); text tokens embed prompt bytes. Rotary position
 * encoding is applied to the captured blocks, vision positions first.
 *
 * Geometry presets mirror the layer counts of the served models, with toy
 * head dimensions; swapping in capture hooks on a real checkpoint is the
 * integration point and keeps the wire format unchanged.
 */

import { fold, stringSeed, symMatrix, symVector } from "./mix64.js";
import { GrayImage } from "./ppm.js";

export interface ModelPreset {
  numLayers: number;
  numHeads: number;
  headDim: number;
  patch: number;
}

export const PRESETS: Record<string, ModelPreset> = {
  "qwen2.5-vl-7b": { numLayers: 28, numHeads: 4, headDim: 16, patch: 28 },
  "qwen2.5-vl-3b": { numLayers: 36, numHeads: 4, headDim: 16, patch: 28 },
  "qwen3-vl-8b": { numLayers: 36, numHeads: 4, headDim: 16, patch: 32 },
  "qwen3-vl-4b": { numLayers: 36, numHeads: 4, headDim: 16, patch: 32 },
  "internvl3-8b": { numLayers: 28, numHeads: 4, headDim: 16, patch: 28 },
  "toy-small": { numLayers: 6, numHeads: 2, headDim: 8, patch: 8 },
};

const TAG_PATCH_PROJ = 1;
const TAG_BYTE_EMBED = 2;
const TAG_BLOCK_IN = 3;
const TAG_BLOCK_OUT = 4;
const TAG_QUERY = 5;
const TAG_KEY = 6;

const FEATURE_DIM = 20; // 16 histogram bins + mean + spread + row + col
const MAX_TEXT_TOKENS = 64;

export interface LayerCapture {
  /** [head][row][dim], text rows */
  q: Float64Array;
  /** [head][row][dim], vision rows */
  k: Float64Array;
}

export interface CaptureResult {
  modelId: string;
  seed: number;
  numLayers: number;
  hiddenDim: number;
  numHeads: number;
  headDim: number;
  numTextTokens: number;
  numVisionTokens: number;
  patchRows: number;
  patchCols: number;
  visionTokenPatchIndices: number[];
  layers: Map<number, LayerCapture>;
}

function l2NormalizeRows(m: Float64Array, rows: number, cols: number): void {
  for (let r = 0; r < rows; r++) {
    let sq = 0;
    for (let c = 0; c < cols; c++) sq += m[r * cols + c] ** 2;
    const inv = sq > 0 ? 1 / Math.sqrt(sq) : 0;
    for (let c = 0; c < cols; c++) m[r * cols + c] *= inv;
  }
}

function matmul(a: Float64Array, rows: number, inner: number, b: Float64Array, cols: number): Float64Array {
  const out = new Float64Array(rows * cols);
  for (let r = 0; r < rows; r++) {
    for (let i = 0; i < inner; i++) {
      const av = a[r * inner + i];
      if (av === 0) continue;
      for (let c = 0; c < cols; c++) {
        out[r * cols + c] += av * b[i * cols + c];
      }
    }
  }
  return out;
}

/** Patch features: normalized 16-bin histogram, mean, spread, grid position. */
function patchFeatures(img: GrayImage, patch: number, rows: number, cols: number): Float64Array {
  const out = new Float64Array(rows * cols * FEATURE_DIM);
  for (let pr = 0; pr < rows; pr++) {
    for (let pc = 0; pc < cols; pc++) {
      const hist = new Float64Array(16);
      let sum = 0;
      let sumSq = 0;
      const n = patch * patch;
      for (let y = 0; y < patch; y++) {
        for (let x = 0; x < patch; x++) {
          // edge-replicate padding, same as the toolkit's entropy grid
          const iy = Math.min(pr * patch + y, img.height - 1);
          const ix = Math.min(pc * patch + x, img.width - 1);
          const v = img.pixels[iy * img.width + ix];
          hist[v >> 4] += 1;
          sum += v;
          sumSq += v * v;
        }
      }
      const mean = sum / n;
      const variance = Math.max(0, sumSq / n - mean * mean);
      const base = (pr * cols + pc) * FEATURE_DIM;
      for (let b = 0; b < 16; b++) out[base + b] = (2 * hist[b]) / n;
      out[base + 16] = mean / 255;
      out[base + 17] = Math.sqrt(variance) / 255;
      out[base + 18] = rows > 1 ? pr / (rows - 1) : 0;
      out[base + 19] = cols > 1 ? pc / (cols - 1) : 0;
    }
  }
  return out;
}

/** Rotary position encoding over even/odd dim pairs, in place. */
function applyRope(vec: Float64Array, offset: number, dim: number, position: number): void {
  for (let i = 0; i < dim; i += 2) {
    const theta = Math.pow(10000, -i / dim);
    const angle = position * theta;
    const cos = Math.cos(angle);
    const sin = Math.sin(angle);
    const x = vec[offset + i];
    const y = vec[offset + i + 1];
    vec[offset + i] = x * cos - y * sin;
    vec[offset + i + 1] = x * sin + y * cos;
  }
}

function scaledWeights(seed: number, prefix: number[], rows: number, cols: number): Float64Array {
  const w = symMatrix(seed, prefix, rows, cols);
  const scale = 1 / Math.sqrt(rows);
  for (let i = 0; i < w.length; i++) w[i] *= scale;
  return w;
}

export function modelSeed(modelId: string, seed: number): number {
  // collapse to a 32-bit int so downstream fold() coordinates stay simple
  return Number(fold(stringSeed(modelId), seed) & 0x7fffffffn);
}

export function forwardCapture(
  modelId: string,
  image: GrayImage,
  prompt: string,
  captureLayers: number[],
  seed = 0,
): CaptureResult {
  const preset = PRESETS[modelId.toLowerCase()];
  if (!preset) {
    throw new Error(
      `unknown model id ${JSON.stringify(modelId)}; known: ${Object.keys(PRESETS).sort().join(", ")}`,
    );
  }
  const { numLayers, numHeads, headDim, patch } = preset;
  const hidden = numHeads * headDim;
  for (const layer of captureLayers) {
    if (!Number.isInteger(layer) || layer < 1 || layer > numLayers) {
      throw new Error(`layer ${layer} out of range [1, ${numLayers}] for ${modelId}`);
    }
  }
  if (captureLayers.length === 0) {
    throw new Error("need at least one capture layer");
  }

  const promptBytes = Buffer.from(prompt, "utf8");
  if (promptBytes.length === 0) {
    throw new Error("prompt must not be empty");
  }
  const textLen = Math.min(promptBytes.length, MAX_TEXT_TOKENS);

  const rows = Math.ceil(image.height / patch);
  const cols = Math.ceil(image.width / patch);
  const m = rows * cols;
  const ws = modelSeed(modelId, seed);

  // vision embeddings: patch features through a fixed projection
  const features = patchFeatures(image, patch, rows, cols);
  const wPatch = scaledWeights(ws, [TAG_PATCH_PROJ], FEATURE_DIM, hidden);
  const hVis = matmul(features, m, FEATURE_DIM, wPatch, hidden);
  l2NormalizeRows(hVis, m, hidden);

  // text embeddings: one table row per prompt byte
  const hTxt = new Float64Array(textLen * hidden);
  for (let i = 0; i < textLen; i++) {
    hTxt.set(symVector(ws, [TAG_BYTE_EMBED, promptBytes[i]], hidden), i * hidden);
  }
  l2NormalizeRows(hTxt, textLen, hidden);

  const wanted = new Set(captureLayers);
  const maxLayer = Math.max(...captureLayers);
  const captures = new Map<number, LayerCapture>();

  for (let layer = 1; layer <= maxLayer; layer++) {
    if (wanted.has(layer)) {
      const wq = scaledWeights(ws, [TAG_QUERY, layer], hidden, hidden);
      const wk = scaledWeights(ws, [TAG_KEY, layer], hidden, hidden);
      const qFlat = matmul(hTxt, textLen, hidden, wq, hidden);
      const kFlat = matmul(hVis, m, hidden, wk, hidden);
      // repack [row][head*dim] -> [head][row][dim], rope by absolute position
      const q = new Float64Array(numHeads * textLen * headDim);
      const k = new Float64Array(numHeads * m * headDim);
      for (let h = 0; h < numHeads; h++) {
        for (let r = 0; r < textLen; r++) {
          for (let d = 0; d < headDim; d++) {
            q[(h * textLen + r) * headDim + d] = qFlat[r * hidden + h * headDim + d];
          }
          applyRope(q, (h * textLen + r) * headDim, headDim, m + r);
        }
        for (let j = 0; j < m; j++) {
          for (let d = 0; d < headDim; d++) {
            k[(h * m + j) * headDim + d] = kFlat[j * hidden + h * headDim + d];
          }
          applyRope(k, (h * m + j) * headDim, headDim, j);
        }
      }
      captures.set(layer, { q, k });
      if (layer === maxLayer) break;
    }
    // residual block: h <- normalize(h + tanh(h W_in) W_out)
    const wIn = scaledWeights(ws, [TAG_BLOCK_IN, layer], hidden, hidden);
    const wOut = scaledWeights(ws, [TAG_BLOCK_OUT, layer], hidden, hidden);
    for (const [state, count] of [[hVis, m], [hTxt, textLen]] as Array<[Float64Array, number]>) {
      const mid = matmul(state, count, hidden, wIn, hidden);
      for (let i = 0; i < mid.length; i++) mid[i] = Math.tanh(mid[i]);
      const delta = matmul(mid, count, hidden, wOut, hidden);
      for (let i = 0; i < state.length; i++) state[i] += delta[i];
      l2NormalizeRows(state, count, hidden);
    }
  }

  return {
    modelId: modelId.toLowerCase(),
    seed,
    numLayers,
    hiddenDim: hidden,
    numHeads,
    headDim,
    numTextTokens: textLen,
    numVisionTokens: m,
    patchRows: rows,
    patchCols: cols,
    visionTokenPatchIndices: Array.from({ length: m }, (_, i) => i),
    layers: captures,
  };
}
