"""Cache byte accounting, eviction, and the prefill cost model."""

import numpy as np
import pytest

from erase import (EvictionPlan, InvalidInputError, InvalidStateError, KVCacheModel,
                   KVGeometry, apply_eviction, builtin_geometry, kv_bytes,
                   prefill_cost, resolution_scaling_rows, schedule_cost_report)

MIB = 2.0**20


def _qwen_cache(tokens: int) -> KVCacheModel:
    return KVCacheModel.uniform(28, 4, 128, 2, tokens)


class TestKvBytes:
    def test_reference_geometry_at_16k_tokens(self):
        # 28 layers * 2 (K+V) * 4 heads * 128 dims * 2 bytes * 16384 tokens
        model = _qwen_cache(16384)
        assert kv_bytes(model) == 939_524_096
        published_mib = 891.27
        assert abs(kv_bytes(model) / MIB - published_mib) / published_mib < 0.02

    def test_empty_cache_is_zero(self):
        assert kv_bytes(_qwen_cache(0)) == 0

    def test_85_percent_pruning_ratio(self):
        kept = round(16384 * 0.15)
        ratio = kv_bytes(_qwen_cache(16384)) / kv_bytes(_qwen_cache(kept))
        assert 6.2 <= ratio <= 6.9  # published x6.57

    def test_monotone_in_any_layer(self):
        base = _qwen_cache(100)
        for layer in (0, 13, 27):
            counts = list(base.per_layer_tokens)
            counts[layer] -= 1
            smaller = KVCacheModel(28, 4, 128, 2, tuple(counts))
            assert kv_bytes(smaller) < kv_bytes(base)

    def test_text_tokens_add_bytes_but_never_evicted(self):
        with_text = KVCacheModel.uniform(4, 2, 8, 2, 10, text_tokens=3)
        without = KVCacheModel.uniform(4, 2, 8, 2, 10)
        assert kv_bytes(with_text) > kv_bytes(without)
        evicted = apply_eviction(with_text, EvictionPlan((0, 1), 2), 10)
        assert evicted.text_tokens == 3


class TestApplyEviction:
    def test_direct_application(self):
        model = KVCacheModel.uniform(4, 2, 8, 2, 10)
        out = apply_eviction(model, EvictionPlan(tuple(range(6)), 2), 10)
        assert out.per_layer_tokens == (4, 4, 4, 4)

    def test_empty_plan_is_identity(self):
        model = KVCacheModel.uniform(4, 2, 8, 2, 10)
        assert apply_eviction(model, EvictionPlan((), 2), 10) is model

    def test_overdraw_rejected(self):
        model = KVCacheModel.uniform(4, 2, 8, 2, 3)
        with pytest.raises(InvalidStateError):
            apply_eviction(model, EvictionPlan(tuple(range(5)), 2), 5)

    def test_layer_out_of_range(self):
        model = KVCacheModel.uniform(4, 2, 8, 2, 10)
        with pytest.raises(InvalidInputError):
            apply_eviction(model, EvictionPlan((0,), 9), 10)

    def test_conservation_after_eviction(self):
        # every layer holds exactly the survivor count afterwards
        rng = np.random.default_rng(51)
        for _ in range(50):
            layers = int(rng.integers(1, 40))
            s1 = int(rng.integers(1, 200))
            s2 = int(rng.integers(1, s1 + 1))
            k = int(rng.integers(1, layers + 1))
            model = KVCacheModel.uniform(layers, 4, 128, 2, s1)
            plan = EvictionPlan(tuple(range(s1 - s2)), k)
            out = apply_eviction(model, plan, s1)
            assert all(t == s2 for t in out.per_layer_tokens)

    def test_two_segment_closed_form_matches_brute_force(self):
        # pipeline shape: layers <= k at stage-1 count then evicted,
        # layers > k only ever hold the final count
        m, s1, s2, k, layers = 16384, 11252, 2458, 17, 28
        model = KVCacheModel.uniform(layers, 4, 128, 2, s1)
        out = apply_eviction(model, EvictionPlan(tuple(range(s1 - s2)), k), s1)
        per_token = 2 * 4 * 128 * 2
        brute = sum(per_token * t for t in out.per_layer_tokens)
        closed = per_token * layers * s2
        assert kv_bytes(out) == brute == closed


class TestPrefillCost:
    def test_quadratic_term_scales_by_four(self):
        hidden = 1024
        n = [100, 200, 50]
        doubled = [2 * v for v in n]
        linear = 12.0 * hidden * hidden
        quad = prefill_cost(n, hidden) - linear * sum(n)
        quad2 = prefill_cost(doubled, hidden) - linear * sum(doubled)
        assert quad2 == pytest.approx(4.0 * quad, rel=1e-12)

    def test_zero_tokens_zero_cost(self):
        assert prefill_cost([0, 0, 0], 512) == 0.0

    def test_empty_schedule_rejected(self):
        with pytest.raises(InvalidInputError):
            prefill_cost([], 512)

    def test_two_stage_schedule_beats_base_and_grows_with_m(self):
        geometry = builtin_geometry("qwen2.5-vl-7b")
        ratios = []
        for m in (1024, 4096, 16384):
            s1 = int(m * 0.66)
            s2 = int(m * 0.15)
            report = schedule_cost_report(m, s1, s2, 17, geometry)
            ratios.append(report.prefill_speedup)
            assert report.prefill_speedup > 1.0
        assert ratios == sorted(ratios)  # gain grows with token count

    def test_report_kv_reduction_matches_token_ratio(self):
        geometry = builtin_geometry("qwen2.5-vl-7b")
        report = schedule_cost_report(16384, 11252, 2458, 17, geometry)
        assert report.kv_reduction == pytest.approx(16384 / 2458, rel=1e-12)
        assert 6.2 <= report.kv_reduction <= 6.9


class TestScalingRows:
    def test_quadratic_in_side_for_fixed_aspect(self):
        geometry = builtin_geometry("qwen2.5-vl-7b")
        sides = [532, 1064, 2128, 4256]
        rows = resolution_scaling_rows(28, 28, sides, geometry)
        tokens = [r["tokens"] for r in rows]
        for a, b in zip(tokens, tokens[1:]):
            assert b == 4 * a
        assert [r["kv_bytes_base"] for r in rows] == sorted(
            r["kv_bytes_base"] for r in rows)

    def test_snaps_to_patch_multiples(self):
        geometry = KVGeometry(2, 1, 1, 1, 8)
        rows = resolution_scaling_rows(28, 28, [512], geometry)
        assert rows[0]["width"] % 28 == 0
        assert rows[0]["tokens"] == (rows[0]["width"] // 28) ** 2

    def test_pruned_column(self):
        geometry = builtin_geometry("qwen2.5-vl-7b")
        rows = resolution_scaling_rows(28, 28, [1064], geometry, final_fraction=0.15)
        assert rows[0]["tokens_pruned"] == max(1, round(rows[0]["tokens"] * 0.15))
        assert rows[0]["kv_bytes_pruned"] < rows[0]["kv_bytes_base"]
