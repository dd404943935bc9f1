/**
 * attn-dump CLI.
 *
 *   export --model <id> --image <file.ppm> --prompt <text> --layers 2,17 --out <dir> [--seed N]
 *   verify --dump <dir>
 *
 * Exit codes: 0 ok, 1 usage error, 2 data/model error (or failed verify).
 */

import * as fs from "node:fs";
import { pathToFileURL } from "node:url";

import { verifyDump, writeDump } from "./dump.js";
import { forwardCapture, PRESETS } from "./model.js";
import { decodePpm } from "./ppm.js";

function parseFlags(argv: string[]): Map<string, string> {
  const flags = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    if (!key.startsWith("--") || i + 1 >= argv.length) {
      throw new UsageError(`bad argument ${key}`);
    }
    flags.set(key.slice(2), argv[i + 1]);
  }
  return flags;
}

class UsageError extends Error {}

function need(flags: Map<string, string>, name: string): string {
  const value = flags.get(name);
  if (value === undefined) {
    throw new UsageError(`missing required flag --${name}`);
  }
  return value;
}

function cmdExport(argv: string[]): number {
  const flags = parseFlags(argv);
  const model = need(flags, "model");
  const imagePath = need(flags, "image");
  const prompt = need(flags, "prompt");
  const layers = need(flags, "layers").split(",").map((s) => Number(s.trim()));
  const out = need(flags, "out");
  const seed = Number(flags.get("seed") ?? "0");

  const image = decodePpm(fs.readFileSync(imagePath));
  const capture = forwardCapture(model, image, prompt, layers, seed);
  const manifest = writeDump(capture, out);
  console.log(
    `wrote ${manifest.layers.length} layer(s) for ${manifest.model_id}: ` +
      `${manifest.num_text_tokens} text x ${manifest.num_vision_tokens} vision tokens -> ${out}`,
  );
  return 0;
}

function cmdVerify(argv: string[]): number {
  const flags = parseFlags(argv);
  const problems = verifyDump(need(flags, "dump"));
  if (problems.length === 0) {
    console.log("ok");
    return 0;
  }
  for (const p of problems) {
    console.error(`violation: ${p}`);
  }
  return 2;
}

export function main(argv: string[]): number {
  const [command, ...rest] = argv;
  try {
    if (command === "export") return cmdExport(rest);
    if (command === "verify") return cmdVerify(rest);
    console.error(
      `usage: attn-dump <export|verify> ...\nknown models: ${Object.keys(PRESETS).sort().join(", ")}`,
    );
    return 1;
  } catch (err) {
    if (err instanceof UsageError) {
      console.error(`error: ${err.message}`);
      return 1;
    }
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 2;
  }
}

if (process.argv[1] && import.meta.url === pathToFileURL(process.argv[1]).href) {
  process.exitCode = main(process.argv.slice(2));
}
