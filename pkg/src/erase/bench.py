"""Synthetic benchmark: deterministic images with known salient regions.

Stands in for a correct-answer evaluation set at desk scale. Three scene
families span the complexity range:

  * low    - flat background with one or two noise-textured objects;
             global entropy near zero, saliency = the textured patches.
  * medium - banded/dithered background (about four intensity levels per
             patch) with planted glyph blocks; mid global entropy.
  * high   - dense noise everywhere with marked glyph patches whose
             histogram matches the background, so entropy alone cannot
             find them; high global entropy.

Accuracy of a pruning run on an item is salient-recall: the fraction of
salient patches that survive. A matching attention source emulates a
model whose text queries point at the salient content (keys of salient
tokens share a per-head direction with the queries, plus noise), which is
what stage 2 consumes on real models.

Generation is a pure function of (spec, seed): item i draws from
numpy's PCG64 seeded with [seed, i].
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .entropy import ImageBuffer, PatchGeometry
from .errors import DataError, InvalidInputError
from .hashrand import sym_grid
from .stage1 import TokenSelection
from .stage2 import AttentionInput, AttentionProvider

FAMILIES = ("low", "medium", "high")


@dataclass(frozen=True)
class BenchSpec:
    count: int = 60
    patch_h: int = 8
    patch_w: int = 8
    grid_rows: int = 8
    grid_cols: int = 8
    families: tuple[str, ...] = FAMILIES

    def __post_init__(self) -> None:
        if self.count < 1:
            raise InvalidInputError("benchmark needs at least one item")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise InvalidInputError(f"unknown scene families: {sorted(unknown)}")

    def to_dict(self) -> dict:
        return {
            "count": self.count, "patch_h": self.patch_h, "patch_w": self.patch_w,
            "grid_rows": self.grid_rows, "grid_cols": self.grid_cols,
            "families": list(self.families),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchSpec":
        return cls(count=int(doc["count"]), patch_h=int(doc["patch_h"]),
                   patch_w=int(doc["patch_w"]), grid_rows=int(doc["grid_rows"]),
                   grid_cols=int(doc["grid_cols"]), families=tuple(doc["families"]))


@dataclass(frozen=True)
class BenchItem:
    index: int
    image: ImageBuffer
    salient_mask: np.ndarray  # bool, raster order over the patch grid
    complexity_class: str


@dataclass(frozen=True)
class SyntheticBenchmark:
    items: tuple[BenchItem, ...]
    seed: int
    spec: BenchSpec
    geometry: PatchGeometry


def _pick_cells(rng: np.random.Generator, rows: int, cols: int, blocks: int,
                max_block: int = 2) -> set[tuple[int, int]]:
    cells: set[tuple[int, int]] = set()
    for _ in range(blocks):
        bh = int(rng.integers(1, max_block + 1))
        bw = int(rng.integers(1, max_block + 1))
        r0 = int(rng.integers(0, max(1, rows - bh + 1)))
        c0 = int(rng.integers(0, max(1, cols - bw + 1)))
        cells.update((r, c) for r in range(r0, r0 + bh) for c in range(c0, c0 + bw))
    return cells


def _glyph_stroke(rng: np.random.Generator, ph: int, pw: int) -> np.ndarray:
    # coarse 4x4 bit pattern upsampled to the patch: blocky, text-like
    bits = rng.integers(0, 2, size=(4, 4)).astype(bool)
    reps_h, reps_w = -(-ph // 4), -(-pw // 4)
    return np.kron(bits, np.ones((reps_h, reps_w), dtype=bool))[:ph, :pw]


def _build_item(index: int, family: str, spec: BenchSpec,
                rng: np.random.Generator) -> BenchItem:
    ph, pw = spec.patch_h, spec.patch_w
    rows, cols = spec.grid_rows, spec.grid_cols
    h, w = rows * ph, cols * pw
    mask = np.zeros(rows * cols, dtype=bool)

    if family == "low":
        bg = int(rng.integers(16, 240))
        img = np.full((h, w), bg, dtype=np.uint8)
        cells = _pick_cells(rng, rows, cols, blocks=int(rng.integers(1, 3)))
        for r, c in cells:
            img[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw] = rng.integers(
                0, 256, size=(ph, pw), dtype=np.uint8)
            mask[r * cols + c] = True

    elif family == "medium":
        x = np.arange(w)
        band = 32 + 48 * (4 * x // w)                      # four wide bands
        dither = 8 * ((x[None, :] + np.arange(h)[:, None]) % 4)
        img = np.clip(band[None, :] + dither, 0, 255).astype(np.uint8)
        cells = _pick_cells(rng, rows, cols, blocks=int(rng.integers(1, 4)), max_block=1)
        for r, c in cells:
            stroke = _glyph_stroke(rng, ph, pw)
            block = img[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw]
            noise = rng.integers(0, 256, size=(ph, pw), dtype=np.uint8)
            block[stroke] = noise[stroke]
            mask[r * cols + c] = True

    elif family == "high":
        img = rng.integers(0, 256, size=(h, w), dtype=np.uint8)
        cells = _pick_cells(rng, rows, cols, blocks=int(rng.integers(2, 5)), max_block=1)
        for r, c in cells:
            # invert the noise under the stroke: histogram (and entropy)
            # stay noise-like, but the glyph is real image structure
            stroke = _glyph_stroke(rng, ph, pw)
            block = img[r * ph:(r + 1) * ph, c * pw:(c + 1) * pw]
            block[stroke] = 255 - block[stroke]
            mask[r * cols + c] = True
    else:
        raise InvalidInputError(f"unknown scene family {family!r}")

    if not mask.any():
        raise InvalidInputError("generated item has no salient patch")
    return BenchItem(index=index, image=ImageBuffer(img), salient_mask=mask,
                     complexity_class=family)


def generate(spec: BenchSpec, seed: int) -> SyntheticBenchmark:
    """Deterministic benchmark: same (spec, seed) -> byte-identical items."""
    items = []
    for i in range(spec.count):
        family = spec.families[i % len(spec.families)]
        rng = np.random.default_rng([seed, i])
        items.append(_build_item(i, family, spec, rng))
    geometry = PatchGeometry(patch_h=spec.patch_h, patch_w=spec.patch_w,
                             rows=spec.grid_rows, cols=spec.grid_cols)
    return SyntheticBenchmark(items=tuple(items), seed=seed, spec=spec, geometry=geometry)


def score(result, item: BenchItem) -> float:
    """Salient-recall of a pruning outcome: |kept and salient| / |salient|.

    ``result`` may be a PipelineResult or a TokenSelection.
    """
    selection: TokenSelection = result.stage2 if hasattr(result, "stage2") else result
    m = item.salient_mask.size
    if selection.original_count != m:
        raise InvalidInputError(
            f"selection covers {selection.original_count} tokens, item grid has {m}")
    salient = np.flatnonzero(item.salient_mask)
    if salient.size == 0:
        raise InvalidInputError("item has no salient patches")
    kept = set(selection.kept)
    return sum(1 for s in salient if int(s) in kept) / salient.size


class SalienceAttentionProvider(AttentionProvider):
    """Synthetic attention that points at an item's salient patches.

    Per head, a direction vector is drawn from the shared mixing function;
    text queries lean along it and keys of salient tokens add it with gain,
    so scaled-dot-product scores concentrate on salient tokens with enough
    noise to stay imperfect.
    """

    ROLE_DIR = 0xD1
    ROLE_Q = 0x51
    ROLE_K = 0x4B

    def __init__(self, salient_mask: np.ndarray, seed: int, num_heads: int = 2,
                 head_dim: int = 16, text_len: int = 4, signal_gain: float = 3.0,
                 query_noise: float = 0.5, key_noise: float = 0.8):
        super().__init__()
        self.mask = np.asarray(salient_mask, dtype=bool)
        self.seed = seed
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.text_len = text_len
        self.signal_gain = signal_gain
        self.query_noise = query_noise
        self.key_noise = key_noise

    def _load(self, layer: int, token_indices: tuple[int, ...]) -> AttentionInput:
        hn, d, length = self.num_heads, self.head_dim, self.text_len
        m_total = self.mask.size
        q = np.empty((hn, length, d))
        k = np.empty((hn, len(token_indices), d))
        sel = list(token_indices)
        for head in range(hn):
            direction = sym_grid(self.seed, (self.ROLE_DIR, head), 1, d)[0]
            direction = direction / np.linalg.norm(direction)
            q_noise = sym_grid(self.seed, (layer, self.ROLE_Q, head), length, d)
            k_noise = sym_grid(self.seed, (layer, self.ROLE_K, head), m_total, d)
            q[head] = self.signal_gain * direction[None, :] + self.query_noise * q_noise
            gains = self.signal_gain * self.mask[sel].astype(np.float64)
            k[head] = gains[:, None] * direction[None, :] + self.key_noise * k_noise[sel, :]
        return AttentionInput(layer=layer, text_queries=q, vision_keys=k)


def attention_provider_for(item: BenchItem, seed: int) -> SalienceAttentionProvider:
    """Per-item provider with a seed derived from (benchmark seed, item)."""
    return SalienceAttentionProvider(item.salient_mask, seed=(seed << 8) ^ item.index)


def save_benchmark(bench: SyntheticBenchmark, out_dir: str | Path) -> None:
    """Persist as PNGs plus masks.json; the manifest records (spec, seed)."""
    from .pngio import write_gray_png  # local import: pngio pulls in Pillow

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for item in bench.items:
        name = f"item_{item.index:04d}.png"
        write_gray_png(out / name, item.image.data[:, :, 0])
        entries.append({
            "file": name,
            "complexity_class": item.complexity_class,
            "salient": [int(i) for i in np.flatnonzero(item.salient_mask)],
        })
    manifest = {"seed": bench.seed, "spec": bench.spec.to_dict(), "items": entries}
    (out / "masks.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_benchmark(in_dir: str | Path) -> SyntheticBenchmark:
    """Load a persisted benchmark (or any user-supplied image+mask set)."""
    from .pngio import decode_image

    root = Path(in_dir)
    manifest_path = root / "masks.json"
    if not manifest_path.is_file():
        raise DataError(f"no masks.json under {root}")
    doc = json.loads(manifest_path.read_text())
    spec = BenchSpec.from_dict(doc["spec"])
    geometry = PatchGeometry(patch_h=spec.patch_h, patch_w=spec.patch_w,
                             rows=spec.grid_rows, cols=spec.grid_cols)
    items = []
    for i, entry in enumerate(doc["items"]):
        img = decode_image(root / entry["file"])
        mask = np.zeros(geometry.token_count, dtype=bool)
        mask[entry["salient"]] = True
        items.append(BenchItem(index=i, image=img, salient_mask=mask,
                               complexity_class=entry["complexity_class"]))
    return SyntheticBenchmark(items=tuple(items), seed=int(doc["seed"]),
                              spec=spec, geometry=geometry)
