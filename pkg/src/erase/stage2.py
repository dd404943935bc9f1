"""Stage 2: context-aware pruning by aggregated text-to-vision attention.

At the decoder layer picked for the image (early for simple, late for
complex), the remaining vision tokens are scored by softmax attention from
the text queries to the vision keys, normalized over the vision positions
only. Multi-head inputs softmax per head, average over heads, then sum over
text rows. The top K_final tokens survive; everything stage 1 kept but
stage 2 dropped is scheduled for retrospective KV eviction in layers 1..k.

Stage 2 is bypassed outright when stage 1 already pruned to within the
final budget; the attention source is never queried in that case.

Attention sources implement AttentionProvider. The synthetic provider
derives query/key blocks from the shared 64-bit mixing function, so a
(seed, dims) pair reproduces identical matrices in any implementation;
the file-backed provider reads binary dumps captured from a real model.
"""

from __future__ import annotations

import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .entropy import ImageBuffer, PatchGeometry, compute_entropy_map, to_luminance
from .errors import InvalidInputError, ProviderError
from .hashrand import sym_grid
from .kv import EvictionPlan
from .policy import LevelDecision, PruningPolicy, classify
from .stage1 import STAGE2, TokenSelection, select_stage1, top_k_indices


@dataclass(frozen=True)
class AttentionInput:
    """Query/key blocks for one layer, or a precomputed score vector.

    Single-matrix inputs are (L, D) queries against (M_s1, D) keys;
    per-head inputs are (H, L, d) against (H, M_s1, d).
    """

    layer: int
    text_queries: np.ndarray | None = None
    vision_keys: np.ndarray | None = None
    precomputed_scores: np.ndarray | None = None

    @property
    def per_head(self) -> bool:
        return self.text_queries is not None and self.text_queries.ndim == 3


@dataclass(frozen=True)
class RelevanceScores:
    values: np.ndarray  # length M_s1, nonnegative
    layer: int


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Softmax with the row max subtracted before exponentiation."""
    shifted = logits - np.max(logits, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def attention_scores(attn: AttentionInput) -> RelevanceScores:
    """Aggregate text-to-vision attention into one score per vision token.

    Per text row: logits = Q K^T / sqrt(d_scale), softmax over the vision
    positions; per-head inputs average the softmax across heads. Scores
    are the per-token sums over text rows, so a full-matrix input sums to
    the number of text rows.
    """
    if attn.precomputed_scores is not None:
        values = np.asarray(attn.precomputed_scores, dtype=np.float64)
        if values.ndim != 1:
            raise InvalidInputError("precomputed scores must be a vector")
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise InvalidInputError("precomputed scores must be finite and nonnegative")
        return RelevanceScores(values=values, layer=attn.layer)

    q, k = attn.text_queries, attn.vision_keys
    if q is None or k is None:
        raise InvalidInputError("attention input needs queries and keys or precomputed scores")
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.ndim != k.ndim or q.ndim not in (2, 3):
        raise InvalidInputError(
            f"queries and keys must both be 2-D or 3-D, got {q.shape} vs {k.shape}")
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(k))):
        raise InvalidInputError("attention inputs must be finite")

    if q.ndim == 2:
        if q.shape[1] != k.shape[1]:
            raise InvalidInputError(f"feature dims differ: {q.shape[1]} vs {k.shape[1]}")
        logits = q @ k.T / math.sqrt(q.shape[1])
        attn_rows = stable_softmax(logits, axis=1)          # (L, M)
    else:
        if q.shape[0] != k.shape[0] or q.shape[2] != k.shape[2]:
            raise InvalidInputError(
                f"per-head shapes incompatible: {q.shape} vs {k.shape}")
        logits = np.einsum("hld,hmd->hlm", q, k) / math.sqrt(q.shape[2])
        attn_rows = stable_softmax(logits, axis=2).mean(axis=0)  # (L, M)

    return RelevanceScores(values=attn_rows.sum(axis=0), layer=attn.layer)


def choose_layer(h_bar: float, policy: PruningPolicy) -> int:
    """Early layer for simple images, late layer otherwise."""
    return classify(h_bar, policy).stage2_layer


def select_stage2(scores, k_final: int, stage1: TokenSelection) -> TokenSelection:
    """Top k_final tokens by relevance, mapped back to original indices.

    Ties break toward the lower original index. Called directly with
    k_final >= |stage1|, the whole stage-1 set is returned (the pipeline
    handles that case as a bypass before scoring).
    """
    values = scores.values if isinstance(scores, RelevanceScores) else np.asarray(scores, dtype=np.float64)
    if k_final < 1:
        raise InvalidInputError(f"final budget must be >= 1, got {k_final}")
    if values.ndim != 1 or values.size != len(stage1.kept):
        raise InvalidInputError(
            f"need one score per stage-1 token ({len(stage1.kept)}), got {values.shape}")
    if k_final >= len(stage1.kept):
        return TokenSelection(kept=stage1.kept, original_count=stage1.original_count,
                              stage=STAGE2)
    positions = top_k_indices(values, k_final)
    kept = tuple(stage1.kept[p] for p in positions)  # positions sorted -> indices sorted
    return TokenSelection(kept=kept, original_count=stage1.original_count, stage=STAGE2)


class AttentionProvider(ABC):
    """Source of per-layer query/key blocks for a requested token subset.

    ``calls`` counts served requests; the pipeline's bypass path must
    leave it untouched.
    """

    def __init__(self) -> None:
        self.calls = 0

    def attention_input(self, layer: int, token_indices) -> AttentionInput:
        self.calls += 1
        return self._load(layer, tuple(int(i) for i in token_indices))

    @abstractmethod
    def _load(self, layer: int, token_indices: tuple[int, ...]) -> AttentionInput:
        ...


class SyntheticAttentionProvider(AttentionProvider):
    """Seeded pseudorandom Q/K blocks, reproducible across languages.

    Entry (h, i, dd) of the query block at a layer is the symmetric unit
    float keyed by fold(seed, layer, 'Q', h, i, dd); keys use 'K' and the
    original token index, so a token's key does not depend on which subset
    is requested.
    """

    ROLE_Q = 0x51
    ROLE_K = 0x4B

    def __init__(self, seed: int, num_heads: int = 4, head_dim: int = 16,
                 text_len: int = 8):
        super().__init__()
        if min(num_heads, head_dim, text_len) < 1:
            raise InvalidInputError("provider dimensions must be >= 1")
        self.seed = seed
        self.num_heads = num_heads
        self.head_dim = head_dim
        self.text_len = text_len

    def _load(self, layer: int, token_indices: tuple[int, ...]) -> AttentionInput:
        h, d, length = self.num_heads, self.head_dim, self.text_len
        q = np.empty((h, length, d))
        k = np.empty((h, len(token_indices), d))
        for head in range(h):
            q[head] = sym_grid(self.seed, (layer, self.ROLE_Q, head), length, d)
            keys = sym_grid(self.seed, (layer, self.ROLE_K, head),
                            (max(token_indices) + 1) if token_indices else 0, d)
            k[head] = keys[list(token_indices), :]
        return AttentionInput(layer=layer, text_queries=q, vision_keys=k)


class FileAttentionProvider(AttentionProvider):
    """Reads exporter-produced dumps: manifest.json plus headerless
    row-major float32 little-endian Q/K files laid out [head][row][dim]."""

    def __init__(self, dump_dir: str | Path):
        super().__init__()
        self.root = Path(dump_dir)
        manifest_path = self.root / "manifest.json"
        if not manifest_path.is_file():
            raise ProviderError(f"no manifest.json under {self.root}")
        try:
            self.manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise ProviderError(f"unparseable manifest {manifest_path}: {exc}") from exc
        if self.manifest.get("format_version") != 1:
            raise ProviderError(
                f"unsupported dump format_version {self.manifest.get('format_version')!r}")
        for key in ("num_heads", "head_dim", "num_text_tokens", "num_vision_tokens",
                    "vision_token_patch_indices", "layers"):
            if key not in self.manifest:
                raise ProviderError(f"manifest missing field {key!r}")
        self.num_heads = int(self.manifest["num_heads"])
        self.head_dim = int(self.manifest["head_dim"])
        self.text_len = int(self.manifest["num_text_tokens"])
        self.num_vision_tokens = int(self.manifest["num_vision_tokens"])
        mapping = self.manifest["vision_token_patch_indices"]
        if len(mapping) != self.num_vision_tokens:
            raise ProviderError("vision_token_patch_indices length mismatch")
        self._row_of_patch = {int(p): row for row, p in enumerate(mapping)}
        self._layers = {int(entry["index"]): entry for entry in self.manifest["layers"]}

    def available_layers(self) -> tuple[int, ...]:
        return tuple(sorted(self._layers))

    def _read_block(self, filename: str, rows: int) -> np.ndarray:
        path = self.root / filename
        if not path.is_file():
            raise ProviderError(f"dump file missing: {path}")
        raw = np.fromfile(path, dtype="<f4")
        expected = self.num_heads * rows * self.head_dim
        if raw.size != expected:
            raise ProviderError(
                f"{path} holds {raw.size} floats, expected {expected}")
        return raw.astype(np.float64).reshape(self.num_heads, rows, self.head_dim)

    def _load(self, layer: int, token_indices: tuple[int, ...]) -> AttentionInput:
        if layer not in self._layers:
            raise ProviderError(
                f"layer {layer} not in dump (available: {sorted(self._layers)})")
        entry = self._layers[layer]
        q = self._read_block(entry["q_file"], self.text_len)
        k_all = self._read_block(entry["k_file"], self.num_vision_tokens)
        try:
            rows = [self._row_of_patch[i] for i in token_indices]
        except KeyError as exc:
            raise ProviderError(f"dump has no vision token for patch {exc.args[0]}") from exc
        return AttentionInput(layer=layer, text_queries=q, vision_keys=k_all[:, rows, :])


@dataclass(frozen=True)
class PipelineResult:
    decision: LevelDecision
    stage1: TokenSelection
    stage2: TokenSelection
    bypassed: bool
    eviction: EvictionPlan
    global_entropy: float
    scores: np.ndarray | None = None  # aligned with stage1.kept when stage 2 ran

    @property
    def original_count(self) -> int:
        return self.stage1.original_count

    def to_json_dict(self) -> dict:
        doc = {
            "decision": {
                "level": self.decision.level,
                "stage1_prune_ratio": self.decision.stage1_prune_ratio,
                "stage1_retention": self.decision.stage1_retention,
                "stage2_layer": self.decision.stage2_layer,
                "is_simple": self.decision.is_simple,
            },
            "global_entropy": self.global_entropy,
            "bypassed": self.bypassed,
            "original_count": self.original_count,
            "stage1_count": len(self.stage1.kept),
            "stage2_count": len(self.stage2.kept),
            "stage2_layer": self.decision.stage2_layer,
            "stage1_indices": list(self.stage1.kept),
            "kept_indices": list(self.stage2.kept),
            "evicted_indices": list(self.eviction.evict_indices),
        }
        if self.scores is not None:
            doc["score_indices"] = list(self.stage1.kept)
            doc["score_values"] = [float(v) for v in self.scores]
        return doc


def run_pipeline(img: ImageBuffer, policy: PruningPolicy, attn: AttentionProvider,
                 k_final: int | None = None, pad_policy: str = "edge-replicate") -> PipelineResult:
    """Full two-stage pruning of one image.

    Entropy map -> complexity level -> stage-1 top-k by entropy -> layer
    choice -> attention scoring -> stage-2 top-k, plus the eviction plan
    for the cache layers already populated. ``k_final`` overrides the
    policy's final budget.
    """
    gray = to_luminance(img)
    geom = PatchGeometry.for_image(gray.width, gray.height,
                                   policy.patch_h, policy.patch_w, pad_policy)
    emap = compute_entropy_map(gray, geom, policy.bins)
    decision = classify(emap.global_median, policy)
    # retention 0 (prune ratio 1.0) still keeps one token, like any floor below 1
    retention = max(decision.stage1_retention, 1e-12)
    stage1 = select_stage1(emap, retention)
    budget = k_final if k_final is not None else policy.final_budget.resolve(emap.token_count)
    if budget < 1:
        raise InvalidInputError(f"final budget must be >= 1, got {budget}")

    if len(stage1.kept) <= budget:
        stage2 = TokenSelection(kept=stage1.kept, original_count=stage1.original_count,
                                stage=STAGE2)
        return PipelineResult(
            decision=decision, stage1=stage1, stage2=stage2, bypassed=True,
            eviction=EvictionPlan((), decision.stage2_layer),
            global_entropy=emap.global_median)

    scores = attention_scores(attn.attention_input(decision.stage2_layer, stage1.kept))
    stage2 = select_stage2(scores, budget, stage1)
    dropped = sorted(set(stage1.kept) - set(stage2.kept))
    return PipelineResult(
        decision=decision, stage1=stage1, stage2=stage2, bypassed=False,
        eviction=EvictionPlan(tuple(dropped), decision.stage2_layer),
        global_entropy=emap.global_median, scores=scores.values)
