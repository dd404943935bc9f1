"""Regenerate the committed test fixtures and the golden entropy values.

Deliberately independent of the package under test: luminance, binning,
entropy, and the median are recomputed here from first principles with
pure-python arithmetic (collections.Counter histograms, math.log sums).

Run from the repository root:  python3 tests/fixtures/gen_fixtures.py
"""

import json
import math
from collections import Counter
from pathlib import Path

import numpy as np
from PIL import Image

HERE = Path(__file__).parent
PATCH = 28
BINS = 256


def make_constant() -> None:
    arr = np.full((56, 56), 128, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(HERE / "constant.png")


def make_textured() -> np.ndarray:
    rng = np.random.default_rng(12345)
    arr = np.zeros((56, 56, 3), dtype=np.uint8)
    # left half: smooth vertical gradient (low entropy), right half: noise
    grad = np.linspace(40, 90, 56).astype(np.uint8)
    arr[:, :28, :] = grad[:, None, None]
    arr[:, 28:, :] = rng.integers(0, 256, size=(56, 28, 3), dtype=np.uint8)
    Image.fromarray(arr, mode="RGB").save(HERE / "textured.png")
    return arr


def luminance(arr: np.ndarray) -> list[list[int]]:
    h, w, _ = arr.shape
    out = [[0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            r, g, b = (int(v) for v in arr[y, x])
            out[y][x] = min(255, max(0, math.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5)))
    return out


def patch_entropy(pixels: list[int]) -> float:
    counts = Counter((v * BINS) // 256 for v in pixels)
    n = len(pixels)
    return -sum((c / n) * math.log(c / n) for c in counts.values())


def main() -> None:
    make_constant()
    arr = make_textured()
    gray = luminance(arr)
    rows = cols = 56 // PATCH
    values = []
    for pr in range(rows):
        for pc in range(cols):
            pixels = [gray[pr * PATCH + y][pc * PATCH + x]
                      for y in range(PATCH) for x in range(PATCH)]
            values.append(patch_entropy(pixels))
    ordered = sorted(values)
    mid = len(ordered) // 2
    median = ordered[mid] if len(ordered) % 2 else (ordered[mid - 1] + ordered[mid]) / 2
    golden = {
        "width": 56, "height": 56,
        "patch_h": PATCH, "patch_w": PATCH,
        "rows": rows, "cols": cols,
        "bins": BINS, "pad_policy": "edge-replicate",
        "global_entropy": median,
        "values": values,
    }
    (HERE / "golden_entropy.json").write_text(json.dumps(golden, indent=2, sort_keys=True) + "\n")
    print("wrote fixtures:", sorted(p.name for p in HERE.iterdir() if p.suffix != ".py"))


if __name__ == "__main__":
    main()
