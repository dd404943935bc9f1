/**
 * Attention dump wire format (shared contract with the pruning toolkit).
 *
 * A dump directory holds manifest.json plus one q/k file pair per
 * captured layer. Matrix files are headerless float32 little-endian,
 * row-major, laid out [head][row][dim]; dimensions come from the
 * manifest, so file size must equal 4 * heads * rows * head_dim exactly.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { CaptureResult } from "./model.js";

export interface ManifestLayer {
  index: number;
  q_file: string;
  k_file: string;
}

export interface Manifest {
  format_version: 1;
  model_id: string;
  num_layers: number;
  hidden_dim: number;
  num_heads: number;
  head_dim: number;
  num_text_tokens: number;
  num_vision_tokens: number;
  vision_token_patch_indices: number[];
  layers: ManifestLayer[];
}

function toF32Bytes(values: Float64Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(i * 4, values[i], true);
  }
  return buf;
}

export function writeDump(capture: CaptureResult, outDir: string): Manifest {
  fs.mkdirSync(outDir, { recursive: true });
  const layers: ManifestLayer[] = [];
  const sorted = [...capture.layers.keys()].sort((a, b) => a - b);
  for (const index of sorted) {
    const block = capture.layers.get(index)!;
    const qFile = `layer${index}_q.bin`;
    const kFile = `layer${index}_k.bin`;
    fs.writeFileSync(path.join(outDir, qFile), toF32Bytes(block.q));
    fs.writeFileSync(path.join(outDir, kFile), toF32Bytes(block.k));
    layers.push({ index, q_file: qFile, k_file: kFile });
  }
  const manifest: Manifest = {
    format_version: 1,
    model_id: capture.modelId,
    num_layers: capture.numLayers,
    hidden_dim: capture.hiddenDim,
    num_heads: capture.numHeads,
    head_dim: capture.headDim,
    num_text_tokens: capture.numTextTokens,
    num_vision_tokens: capture.numVisionTokens,
    vision_token_patch_indices: capture.visionTokenPatchIndices,
    layers,
  };
  fs.writeFileSync(path.join(outDir, "manifest.json"), JSON.stringify(manifest, null, 2) + "\n");
  return manifest;
}

const REQUIRED_FIELDS: Array<keyof Manifest> = [
  "format_version", "model_id", "num_layers", "hidden_dim", "num_heads",
  "head_dim", "num_text_tokens", "num_vision_tokens",
  "vision_token_patch_indices", "layers",
];

/** Check a dump directory; returns a list of violations (empty = ok). */
export function verifyDump(dir: string): string[] {
  const problems: string[] = [];
  const manifestPath = path.join(dir, "manifest.json");
  if (!fs.existsSync(manifestPath)) {
    return [`missing manifest.json under ${dir}`];
  }
  let manifest: Manifest;
  try {
    manifest = JSON.parse(fs.readFileSync(manifestPath, "utf8"));
  } catch (err) {
    return [`unparseable manifest.json: ${err}`];
  }
  for (const field of REQUIRED_FIELDS) {
    if (!(field in manifest)) problems.push(`manifest missing field ${String(field)}`);
  }
  if (problems.length > 0) return problems;

  if (manifest.format_version !== 1) {
    problems.push(`unsupported format_version ${manifest.format_version}`);
  }
  const mapping = manifest.vision_token_patch_indices;
  if (mapping.length !== manifest.num_vision_tokens) {
    problems.push(
      `vision_token_patch_indices has ${mapping.length} entries, expected ${manifest.num_vision_tokens}`,
    );
  }
  if (new Set(mapping).size !== mapping.length) {
    problems.push("vision_token_patch_indices contains duplicates");
  }
  if (mapping.some((v) => !Number.isInteger(v) || v < 0)) {
    problems.push("vision_token_patch_indices must be nonnegative integers");
  }

  const checkFile = (name: string, rows: number): void => {
    const filePath = path.join(dir, name);
    if (!fs.existsSync(filePath)) {
      problems.push(`missing file ${name}`);
      return;
    }
    const expected = 4 * manifest.num_heads * rows * manifest.head_dim;
    const data = fs.readFileSync(filePath);
    if (data.length !== expected) {
      problems.push(`${name}: size ${data.length} bytes, expected ${expected}`);
      return;
    }
    const view = new DataView(data.buffer, data.byteOffset, data.byteLength);
    for (let i = 0; i < data.length / 4; i++) {
      if (!Number.isFinite(view.getFloat32(i * 4, true))) {
        problems.push(`${name}: non-finite value at element ${i}`);
        return;
      }
    }
  };

  for (const layer of manifest.layers) {
    if (!Number.isInteger(layer.index) || layer.index < 1 || layer.index > manifest.num_layers) {
      problems.push(`layer index ${layer.index} outside [1, ${manifest.num_layers}]`);
    }
    checkFile(layer.q_file, manifest.num_text_tokens);
    checkFile(layer.k_file, manifest.num_vision_tokens);
  }
  return problems;
}
