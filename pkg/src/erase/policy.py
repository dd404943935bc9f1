"""Complexity configuration: thresholds, per-level pruning ratios, layers.

A policy holds descending entropy thresholds that split images into N
complexity levels (level 1 = most complex), a stage-1 pruning ratio per
level, the early/late decoder layers used for stage-2 pruning, and the
final token budget. Classification maps a global entropy value to the
level whose interval contains it; values exactly on a threshold land in
the more complex (lower-index) level. An image is "simple" when its
global entropy does not exceed the median threshold, which routes stage-2
to the early layer.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import InvalidInputError, UnknownModelError


@dataclass(frozen=True)
class FinalBudget:
    """Stage-2 token budget: an absolute count or a fraction of M."""

    mode: str  # "count" | "fraction"
    value: float

    def __post_init__(self) -> None:
        if self.mode not in ("count", "fraction"):
            raise InvalidInputError(f"budget mode must be count|fraction, got {self.mode!r}")
        if self.mode == "count" and (self.value < 1 or self.value != int(self.value)):
            raise InvalidInputError(f"count budget must be a positive integer, got {self.value}")
        if self.mode == "fraction" and not 0.0 < self.value <= 1.0:
            raise InvalidInputError(f"fraction budget must be in (0, 1], got {self.value}")

    def resolve(self, original_count: int) -> int:
        """Concrete K for an image with ``original_count`` tokens."""
        if self.mode == "count":
            return int(self.value)
        return max(1, int(math.floor(original_count * self.value + 0.5)))


@dataclass(frozen=True)
class PruningPolicy:
    model_id: str
    patch_h: int
    patch_w: int
    bins: int
    thresholds: tuple[float, ...]     # descending, nats, length N-1
    prune_ratios: tuple[float, ...]   # level 1 (most complex) .. level N
    early_layer: int
    late_layer: int
    total_layers: int
    final_budget: FinalBudget
    provenance: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "prune_ratios", tuple(float(p) for p in self.prune_ratios))
        problems = validate(self)
        if problems:
            raise InvalidInputError("invalid policy: " + "; ".join(problems))

    @property
    def num_levels(self) -> int:
        return len(self.prune_ratios)

    @property
    def median_threshold(self) -> float:
        """Simple/complex boundary: threshold index ceil((N-1)/2), 1-based."""
        if not self.thresholds:
            raise InvalidInputError("single-level policy has no thresholds")
        mid = -(-len(self.thresholds) // 2)
        return self.thresholds[mid - 1]


@dataclass(frozen=True)
class LevelDecision:
    level: int
    stage1_prune_ratio: float
    stage1_retention: float
    stage2_layer: int
    is_simple: bool


def validate(policy: PruningPolicy) -> list[str]:
    """Check every policy invariant; returns one message per violation."""
    problems: list[str] = []
    n_thr, n_rat = len(policy.thresholds), len(policy.prune_ratios)
    if n_rat < 1:
        problems.append("prune_ratios: must define at least one level")
    if n_thr != n_rat - 1:
        problems.append(
            f"thresholds: expected {max(n_rat - 1, 0)} thresholds for "
            f"{n_rat} levels, got {n_thr}")
    if any(t <= 0 for t in policy.thresholds):
        problems.append("thresholds: all must be > 0")
    if any(a <= b for a, b in zip(policy.thresholds, policy.thresholds[1:])):
        problems.append("thresholds: not strictly decreasing")
    if any(not 0.0 <= p <= 1.0 for p in policy.prune_ratios):
        problems.append("prune_ratios: values must lie in [0, 1]")
    if any(a > b for a, b in zip(policy.prune_ratios, policy.prune_ratios[1:])):
        problems.append("prune_ratios: not nondecreasing from level 1 to N")
    if not 1 <= policy.early_layer < policy.late_layer <= policy.total_layers:
        problems.append(
            f"layers: need 1 <= early_layer ({policy.early_layer}) < "
            f"late_layer ({policy.late_layer}) <= total_layers ({policy.total_layers})")
    if policy.patch_h < 1 or policy.patch_w < 1:
        problems.append("patch: dimensions must be >= 1")
    if not 2 <= policy.bins <= 256:
        problems.append(f"bins: must be in [2, 256], got {policy.bins}")
    return problems


def classify(h_bar: float, policy: PruningPolicy) -> LevelDecision:
    """Assign a complexity level and stage-2 layer to a global entropy value.

    Level c is the unique bucket with thresholds[c] <= h_bar <
    thresholds[c-1] (sentinels +/- infinity), i.e. a value exactly equal to
    a threshold belongs to the more complex level. Simple images
    (h_bar <= median threshold) prune at the early layer, complex ones at
    the late layer.
    """
    if not math.isfinite(h_bar) or h_bar < 0:
        raise InvalidInputError(f"global entropy must be finite and >= 0, got {h_bar}")
    level = 1 + sum(1 for t in policy.thresholds if h_bar < t)
    prune = policy.prune_ratios[level - 1]
    simple = bool(policy.thresholds) and h_bar <= policy.median_threshold
    return LevelDecision(
        level=level,
        stage1_prune_ratio=prune,
        stage1_retention=1.0 - prune,
        stage2_layer=policy.early_layer if simple else policy.late_layer,
        is_simple=simple,
    )


def _late_layer(total_layers: int) -> int:
    # 60% of depth, plain half-up rounding (28 -> 17, 36 -> 22)
    return int(math.floor(0.6 * total_layers + 0.5))


_TUNED_DEFAULTS_PROVENANCE = "Table 9"

# Per-model tuned thresholds/ratios plus layer geometry. Early layer is 2
# for the qwen2.5-vl series and internvl3, 4 for the qwen3-vl series; the
# late layer sits at 60% of depth. Ratios are pruning percentages
# converted to fractions; stage-1 retention is 1 - ratio.
_BUILTINS: dict[str, dict] = {
    "qwen2.5-vl-7b": dict(
        thresholds=(1.69, 1.35, 1.17),
        prune_ratios=(0.1732, 0.2486, 0.5053, 0.5966),
        early_layer=2, total_layers=28, patch=28),
    "qwen2.5-vl-3b": dict(
        thresholds=(2.06, 1.41, 0.89),
        prune_ratios=(0.1134, 0.1679, 0.5580, 0.6128),
        early_layer=2, total_layers=36, patch=28),
    "qwen3-vl-8b": dict(
        thresholds=(1.61, 0.22, 0.06),
        prune_ratios=(0.1550, 0.2237, 0.2426, 0.8060),
        early_layer=4, total_layers=36, patch=32),
    "qwen3-vl-4b": dict(
        thresholds=(4.92, 0.64, 0.55),
        prune_ratios=(0.1788, 0.2066, 0.5421, 0.7467),
        early_layer=4, total_layers=36, patch=32),
    "internvl3-8b": dict(
        thresholds=(3.98, 0.70, 0.59),
        prune_ratios=(0.1586, 0.2388, 0.3068, 0.6758),
        early_layer=2, total_layers=28, patch=28),
}


def known_model_ids() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))


def builtin_policy(model_id: str) -> PruningPolicy:
    """Tuned policy for a supported model id.

    Raises UnknownModelError listing the known ids otherwise.
    """
    key = model_id.lower()
    if key not in _BUILTINS:
        raise UnknownModelError(
            f"unknown model id {model_id!r}; known ids: {', '.join(known_model_ids())}")
    row = _BUILTINS[key]
    return PruningPolicy(
        model_id=key,
        patch_h=row["patch"],
        patch_w=row["patch"],
        bins=256,
        thresholds=row["thresholds"],
        prune_ratios=row["prune_ratios"],
        early_layer=row["early_layer"],
        late_layer=_late_layer(row["total_layers"]),
        total_layers=row["total_layers"],
        final_budget=FinalBudget("fraction", 0.15),
        provenance=_TUNED_DEFAULTS_PROVENANCE,
    )


def policy_to_dict(policy: PruningPolicy) -> dict:
    return {
        "model_id": policy.model_id,
        "patch_h": policy.patch_h,
        "patch_w": policy.patch_w,
        "bins": policy.bins,
        "thresholds": list(policy.thresholds),
        "prune_ratios": list(policy.prune_ratios),
        "early_layer": policy.early_layer,
        "late_layer": policy.late_layer,
        "total_layers": policy.total_layers,
        "final_budget": {"mode": policy.final_budget.mode, "value": policy.final_budget.value},
        "provenance": policy.provenance,
    }


def policy_from_dict(doc: dict) -> PruningPolicy:
    try:
        budget = doc["final_budget"]
        return PruningPolicy(
            model_id=doc["model_id"],
            patch_h=int(doc["patch_h"]),
            patch_w=int(doc["patch_w"]),
            bins=int(doc["bins"]),
            thresholds=tuple(doc["thresholds"]),
            prune_ratios=tuple(doc["prune_ratios"]),
            early_layer=int(doc["early_layer"]),
            late_layer=int(doc["late_layer"]),
            total_layers=int(doc["total_layers"]),
            final_budget=FinalBudget(budget["mode"], float(budget["value"])),
            provenance=doc.get("provenance", ""),
        )
    except KeyError as exc:
        raise InvalidInputError(f"policy document missing field {exc.args[0]!r}") from exc


def save_policy(policy: PruningPolicy, path: str | Path) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(policy), indent=2, sort_keys=True) + "\n")


def load_policy(path: str | Path) -> PruningPolicy:
    return policy_from_dict(json.loads(Path(path).read_text()))
