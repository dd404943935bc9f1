"""Stage 1: image-level pruning by patch entropy.

Keeps the floor(M * r1) highest-entropy tokens (never fewer than one).
Ties break toward the lower raster index so selections are reproducible;
the output is sorted by token index regardless of entropy order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .entropy import EntropyMap
from .errors import InvalidInputError

STAGE1 = "stage1"
STAGE2 = "stage2"


@dataclass(frozen=True)
class TokenSelection:
    """Retained original-token indices, sorted ascending."""

    kept: tuple[int, ...]
    original_count: int
    stage: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "kept", tuple(int(i) for i in self.kept))
        if self.stage not in (STAGE1, STAGE2):
            raise InvalidInputError(f"stage must be stage1|stage2, got {self.stage!r}")
        if len(self.kept) > self.original_count:
            raise InvalidInputError("kept more tokens than the original count")
        prev = -1
        for i in self.kept:
            if not 0 <= i < self.original_count:
                raise InvalidInputError(f"token index {i} outside [0, {self.original_count})")
            if i <= prev:
                raise InvalidInputError("kept indices must be strictly increasing")
            prev = i


def top_k_indices(values: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest values, ties broken by lower index,
    returned sorted ascending."""
    order = np.argsort(-np.asarray(values, dtype=np.float64), kind="stable")
    return np.sort(order[:k])


def select_stage1(emap, retention: float) -> TokenSelection:
    """Top floor(M * retention) tokens by entropy (at least one).

    ``emap`` may be an EntropyMap or a plain value array.
    """
    values = emap.values if isinstance(emap, EntropyMap) else np.asarray(emap, dtype=np.float64)
    if values.ndim != 1 or values.size < 1:
        raise InvalidInputError("entropy values must be a nonempty vector")
    if retention <= 0.0:
        raise InvalidInputError(f"retention must be positive, got {retention}")
    if retention > 1.0:
        raise InvalidInputError(f"retention must be <= 1, got {retention}")
    m = values.size
    budget = max(1, int(math.floor(m * retention)))
    kept = top_k_indices(values, budget)
    return TokenSelection(kept=tuple(kept.tolist()), original_count=m, stage=STAGE1)
