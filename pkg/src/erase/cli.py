"""Command-line front door: analyze, prune, pipeline, optimize, report, bench.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness flows
from --seed flags; identical flags produce identical outputs. Set
ERASE_LOG=debug|info|warning for verbosity.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bayesopt, bench as bench_mod, kv, pngio
from .entropy import PatchGeometry, compute_entropy_map, global_entropy, to_luminance
from .errors import EraseError
from .policy import (FinalBudget, PruningPolicy, builtin_policy, classify,
                     load_policy, policy_to_dict, save_policy)
from .stage1 import select_stage1
from .stage2 import FileAttentionProvider, SyntheticAttentionProvider, run_pipeline

USAGE_EXIT = 1
DATA_EXIT = 2


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the CLI contract reserves 2 for data
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


def _patch_size(text: str) -> tuple[int, int]:
    try:
        if "x" in text.lower():
            h, w = text.lower().split("x", 1)
            ph, pw = int(h), int(w)
        else:
            ph = pw = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad patch size {text!r}, expected N or HxW")
    if ph < 1 or pw < 1:
        raise argparse.ArgumentTypeError("patch size must be >= 1")
    return ph, pw


def _k_final(text: str) -> FinalBudget:
    try:
        if "." in text or "e" in text.lower():
            value = float(text)
            if not 0.0 < value < 1.0:
                raise argparse.ArgumentTypeError(
                    f"fractional budget must be in (0, 1), got {text}")
            return FinalBudget("fraction", value)
        return FinalBudget("count", int(text))
    except (ValueError, EraseError) as exc:
        raise argparse.ArgumentTypeError(f"bad --k-final {text!r}: {exc}")


def _iterations(text: str) -> int:
    value = int(text)
    if value < 10:
        raise argparse.ArgumentTypeError(f"--iterations must be >= 10, got {value}")
    return value


def _alpha(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"--alpha must lie in [0, 1], got {value}")
    return value


def _resolve_policy(spec: str) -> PruningPolicy:
    path = Path(spec)
    if spec.endswith(".json") or path.is_file():
        return load_policy(path)
    return builtin_policy(spec)


def _make_provider(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "synthetic":
        try:
            return SyntheticAttentionProvider(seed=int(arg or "0"))
        except ValueError:
            raise EraseError(f"synthetic attention needs an integer seed, got {arg!r}")
    if kind == "dump":
        if not arg:
            raise EraseError("--attn dump:<dir> needs a directory")
        return FileAttentionProvider(arg)
    raise EraseError(f"unknown attention source {spec!r} (synthetic:<seed>|dump:<dir>)")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# commands

def cmd_analyze(args) -> int:
    out = _out_dir(args)
    img = pngio.decode_image(args.image)
    gray = to_luminance(img)
    ph, pw = args.patch_size
    geom = PatchGeometry.for_image(gray.width, gray.height, ph, pw, args.pad)
    emap = compute_entropy_map(gray, geom, args.bins)
    g = global_entropy(emap)
    split = g if args.split is None else args.split

    _dump_json(out / "entropy_map.json", {
        "width": gray.width, "height": gray.height,
        "patch_h": ph, "patch_w": pw,
        "rows": geom.rows, "cols": geom.cols,
        "bins": args.bins, "pad_policy": args.pad,
        "global_entropy": g,
        "values": [float(v) for v in emap.values],
    })
    pngio.write_entropy_heatmap(out / "heatmap.png", emap)
    pngio.write_threshold_masks(out / "low_mask.png", out / "high_mask.png", emap, split)
    print(f"global_entropy {g!r}")
    return 0


def cmd_prune(args) -> int:
    """Stage-1 only: classify by entropy and keep the per-level budget."""
    out = _out_dir(args)
    policy = _resolve_policy(args.policy)
    img = pngio.decode_image(args.image)
    gray = to_luminance(img)
    ph, pw = args.patch_size or (policy.patch_h, policy.patch_w)
    geom = PatchGeometry.for_image(gray.width, gray.height, ph, pw, args.pad)
    emap = compute_entropy_map(gray, geom, args.bins or policy.bins)
    decision = classify(emap.global_median, policy)
    selection = select_stage1(emap, max(decision.stage1_retention, 1e-12))

    _dump_json(out / "selection.json", {
        "original_count": selection.original_count,
        "kept": list(selection.kept),
        "level": decision.level,
        "stage1_prune_ratio": decision.stage1_prune_ratio,
        "global_entropy": emap.global_median,
    })
    pngio.write_patch_mask(out / "stage1_mask.png", selection.kept, geom)
    print(f"level {decision.level} kept {len(selection.kept)}/{selection.original_count}")
    return 0


def cmd_pipeline(args) -> int:
    out = _out_dir(args)
    policy = _resolve_policy(args.policy)
    overrides = {}
    if args.patch_size:
        overrides["patch_h"], overrides["patch_w"] = args.patch_size
    if args.bins:
        overrides["bins"] = args.bins
    if overrides:
        doc = policy_to_dict(policy)
        doc.update(overrides)
        from .policy import policy_from_dict
        policy = policy_from_dict(doc)

    img = pngio.decode_image(args.image)
    provider = _make_provider(args.attn)
    k_final = None
    if args.k_final is not None:
        geom = PatchGeometry.for_image(img.width, img.height, policy.patch_h,
                                       policy.patch_w, args.pad)
        k_final = args.k_final.resolve(geom.token_count)
    result = run_pipeline(img, policy, provider, k_final=k_final, pad_policy=args.pad)

    geometry = kv.geometry_for(policy.model_id, policy.total_layers)
    report = kv.schedule_cost_report(
        result.original_count, len(result.stage1.kept), len(result.stage2.kept),
        result.decision.stage2_layer, geometry, text_tokens=args.text_tokens)

    doc = result.to_json_dict()
    doc["policy"] = {"model_id": policy.model_id, "provenance": policy.provenance}
    _dump_json(out / "result.json", doc)
    _dump_json(out / "cost_report.json", report.to_dict())
    with open(out / "cost_report.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(kv.CSV_FIELDS))
        writer.writeheader()
        writer.writerow(report.to_csv_row())
    geom = PatchGeometry.for_image(img.width, img.height, policy.patch_h,
                                   policy.patch_w, args.pad)
    pngio.write_patch_mask(out / "stage1_mask.png", result.stage1.kept, geom)
    pngio.write_patch_mask(out / "stage2_mask.png", result.stage2.kept, geom)

    prov = f" (provenance: {policy.provenance})" if policy.provenance else ""
    print(f"policy {policy.model_id}{prov}")
    print(f"level {result.decision.level} layer {result.decision.stage2_layer}"
          f" bypassed {str(result.bypassed).lower()}")
    print(f"tokens {result.original_count} -> {len(result.stage1.kept)}"
          f" -> {len(result.stage2.kept)}")
    print(f"kv_reduction x{report.kv_reduction:.2f} prefill_speedup x{report.prefill_speedup:.2f}")
    return 0


def cmd_optimize(args) -> int:
    out = _out_dir(args)
    spec = bench_mod.BenchSpec(count=args.bench_count)
    benchmark = bench_mod.generate(spec, args.bench_seed)
    space = bayesopt.SearchSpace(num_levels=args.levels)
    config = bayesopt.EvalConfig()
    result = bayesopt.run(space, benchmark, alpha=args.alpha,
                          iterations=args.iterations, seed=args.seed, config=config)

    bayesopt.write_trace_csv(result.trace, out / "trace.csv")
    for name, obs in (("best_by_accuracy", result.best_by_accuracy),
                      ("best_by_objective", result.best_by_objective)):
        policy = bayesopt.observation_policy(obs, benchmark, config, model_id=name)
        save_policy(policy, out / f"{name}.json")

    best = result.best_by_accuracy
    print(f"best_by_accuracy accuracy {best.accuracy!r} objective {best.objective!r}")
    print(f"thresholds {[round(t, 4) for t in best.thresholds]}")
    print(f"prune_ratios {[round(p, 4) for p in best.prune_ratios]}")
    return 0


def cmd_report(args) -> int:
    out = _out_dir(args)
    policy = _resolve_policy(args.policy)
    geometry = kv.geometry_for(policy.model_id, policy.total_layers)
    fraction = args.k_final.value if (args.k_final and args.k_final.mode == "fraction") else None

    base = policy.patch_w * max(1, round(args.min_side / policy.patch_w))
    sides = []
    side = base
    while side <= max(args.max_side, base):
        sides.append(side)
        side *= 2
    rows = kv.resolution_scaling_rows(policy.patch_h, policy.patch_w, sides,
                                      geometry, final_fraction=fraction)
    scaling_path = out / "scaling.csv"
    with open(scaling_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    summary = {"scaling_rows": len(rows)}
    results = []
    for pattern in args.results or []:
        path = Path(pattern)
        if path.is_dir():
            results.extend(sorted(path.glob("**/result.json")))
        else:
            results.append(path)
    if results:
        ratios, layers = [], []
        for rp in results:
            doc = json.loads(Path(rp).read_text())
            ratios.append(1.0 - doc["stage1_count"] / doc["original_count"])
            layers.append(doc["stage2_layer"])
        summary["result_count"] = len(results)
        summary["mean_stage1_prune_ratio"] = float(np.mean(ratios))
        summary["mean_stage2_layer"] = float(np.mean(layers))
    _dump_json(out / "summary.json", summary)

    print(f"wrote {scaling_path} ({len(rows)} rows)")
    big = rows[-1]
    ref = kv.PUBLISHED_16K_REFERENCE
    print(f"model: {big['tokens']} tokens -> {big['kv_bytes_base'] / 2**20:.1f} MiB cache "
          f"(published 16K-token reference: {ref['kv_cache_mib_base']} MB, "
          f"x{ref['kv_reduction_at_85pct']} reduction at 85% pruning)")
    if results:
        print(f"mean_stage1_prune_ratio {summary['mean_stage1_prune_ratio']!r}")
        print(f"mean_stage2_layer {summary['mean_stage2_layer']!r}")
    return 0


def cmd_bench(args) -> int:
    out = _out_dir(args)
    spec = bench_mod.BenchSpec(count=args.count)
    benchmark = bench_mod.generate(spec, args.seed)
    bench_mod.save_benchmark(benchmark, out)
    print(f"wrote {len(benchmark.items)} items to {out}")
    return 0


# ---------------------------------------------------------------------------
# wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="erase", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, policy=False):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--pad", choices=["edge-replicate", "reject"],
                       default="edge-replicate")
        if policy:
            p.add_argument("--policy", required=True,
                           help="built-in model id or policy JSON path")

    p = sub.add_parser("analyze", help="entropy map, heatmap, split masks")
    p.add_argument("--image", required=True)
    p.add_argument("--patch-size", type=_patch_size, default=(28, 28))
    p.add_argument("--bins", type=int, default=256)
    p.add_argument("--split", type=float, default=None,
                   help="low/high mask threshold (default: global median)")
    common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("prune", help="stage-1 pruning only")
    p.add_argument("--image", required=True)
    p.add_argument("--patch-size", type=_patch_size, default=None)
    p.add_argument("--bins", type=int, default=None)
    common(p, policy=True)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("pipeline", help="full two-stage pruning")
    p.add_argument("--image", required=True)
    p.add_argument("--patch-size", type=_patch_size, default=None)
    p.add_argument("--bins", type=int, default=None)
    p.add_argument("--k-final", type=_k_final, default=None,
                   help="final budget: token count or fraction in (0,1)")
    p.add_argument("--attn", required=True, help="synthetic:<seed> | dump:<dir>")
    p.add_argument("--text-tokens", type=int, default=0,
                   help="text tokens included in cost accounting")
    common(p, policy=True)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("optimize", help="Bayesian policy search")
    p.add_argument("--alpha", type=_alpha, default=0.65)
    p.add_argument("--iterations", type=_iterations, default=100)
    p.add_argument("--levels", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bench-count", type=int, default=60)
    p.add_argument("--bench-seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("report", help="scaling tables and corpus statistics")
    p.add_argument("--results", nargs="*", default=None,
                   help="result.json files or directories to aggregate")
    p.add_argument("--k-final", type=_k_final, default=None)
    p.add_argument("--min-side", type=int, default=512)
    p.add_argument("--max-side", type=int, default=4096)
    common(p, policy=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="generate a synthetic benchmark directory")
    p.add_argument("--count", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    common(p)
    p.set_defaults(func=cmd_bench)

    return parser


def _configure_logging() -> None:
    level = os.environ.get("ERASE_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EraseError as exc:
        print(f"erase: error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except OSError as exc:
        print(f"erase: i/o error: {exc}", file=sys.stderr)
        return DATA_EXIT


if __name__ == "__main__":
    sys.exit(main())
