"""Adaptive two-stage vision-token pruning toolkit.

Stage 1 scores image patches by intensity-histogram entropy and keeps a
complexity-dependent share of the highest-entropy tokens before they ever
reach the language model; stage 2 re-scores the survivors by aggregated
text-to-vision attention at an early or late decoder layer (picked by the
same complexity signal) and keeps the final budget, retroactively evicting
the pruned tokens' KV-cache entries. A Gaussian-process search tunes the
thresholds and per-level ratios against a synthetic benchmark, and an
analytical cost model accounts tokens, cache bytes, and prefill FLOPs.
"""

from .bayesopt import (EvalConfig, Observation, OptimizeResult, PolicyCandidate,
                       SearchSpace, evaluate_candidate, objective, propose, run)
from .bench import (BenchItem, BenchSpec, SyntheticBenchmark, attention_provider_for,
                    generate, load_benchmark, save_benchmark, score)
from .entropy import (EntropyMap, ImageBuffer, PatchGeometry, compute_entropy_map,
                      global_entropy, max_entropy, patch_entropy, to_luminance)
from .errors import (DataError, EraseError, InvalidInputError, InvalidStateError,
                     ProviderError, UnknownModelError)
from .kv import (CostReport, EvictionPlan, KVCacheModel, KVGeometry, apply_eviction,
                 builtin_geometry, kv_bytes, prefill_cost, resolution_scaling_rows,
                 schedule_cost_report)
from .policy import (FinalBudget, LevelDecision, PruningPolicy, builtin_policy,
                     classify, known_model_ids, load_policy, policy_from_dict,
                     policy_to_dict, save_policy, validate)
from .stage1 import TokenSelection, select_stage1, top_k_indices
from .stage2 import (AttentionInput, AttentionProvider, FileAttentionProvider,
                     PipelineResult, RelevanceScores, SyntheticAttentionProvider,
                     attention_scores, choose_layer, run_pipeline, select_stage2,
                     stable_softmax)

__version__ = "0.1.0"
