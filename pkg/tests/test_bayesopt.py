"""Objective, candidate evaluation, and the GP-EI search loop."""

import numpy as np
import pytest

from erase import InvalidInputError
from erase.bayesopt import (BayesianMaximizer, EvalConfig, PolicyCandidate,
                            SearchSpace, evaluate_candidate, new_state, objective,
                            propose, run, write_trace_csv)
from erase.bench import BenchSpec, generate


@pytest.fixture(scope="module")
def small_bench():
    return generate(BenchSpec(count=12), seed=5)


class TestObjective:
    def test_direct_evaluation(self):
        f = objective(0.9, [0.25] * 4, [0.2, 0.3, 0.4, 0.5], alpha=0.65)
        assert f == pytest.approx(0.65 * 0.9 + 0.35 * 0.35, abs=1e-12)

    def test_alpha_one_is_accuracy(self):
        assert objective(0.77, [0.5, 0.5], [0.9, 1.0], alpha=1.0) == pytest.approx(0.77)

    def test_alpha_zero_full_pruning_is_one(self):
        assert objective(0.0, [0.25] * 4, [1.0] * 4, alpha=0.0) == pytest.approx(1.0)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(InvalidInputError):
            objective(0.5, [0.3, 0.3], [0.1, 0.2], alpha=0.5)

    def test_ratio_bounds_enforced(self):
        with pytest.raises(InvalidInputError):
            objective(0.5, [0.5, 0.5], [0.1, 1.2], alpha=0.5)

    def test_alpha_bounds_enforced(self):
        with pytest.raises(InvalidInputError):
            objective(0.5, [1.0], [0.5], alpha=1.5)


class TestSearchSpace:
    def test_repair_sorts_segments(self):
        space = SearchSpace(num_levels=4)
        vec = np.array([1.0, 3.0, 2.0, 0.9, 0.1, 0.5, 0.3])
        fixed = space.repair(vec)
        assert list(fixed[:3]) == sorted(fixed[:3], reverse=True)
        assert list(fixed[3:]) == sorted(fixed[3:])
        assert space.is_feasible(space.candidate(fixed))

    def test_repair_breaks_exact_ties(self):
        space = SearchSpace(num_levels=3)
        fixed = space.repair(np.array([2.0, 2.0, 0.4, 0.4, 0.4]))
        assert fixed[0] > fixed[1]

    def test_dim(self):
        assert SearchSpace(num_levels=4).dim == 7
        assert SearchSpace(num_levels=3).dim == 5


class TestEvaluateCandidate:
    def test_no_pruning_has_perfect_recall(self, small_bench):
        cand = PolicyCandidate(thresholds=(3.0, 2.0, 1.0),
                               prune_ratios=(0.0, 0.0, 0.0, 0.0))
        obs = evaluate_candidate(cand, small_bench, alpha=0.65)
        assert obs.accuracy == 1.0
        assert obs.efficiency_term == 0.0

    def test_determinism(self, small_bench):
        cand = PolicyCandidate(thresholds=(2.5, 1.0, 0.5),
                               prune_ratios=(0.1, 0.2, 0.5, 0.7))
        a = evaluate_candidate(cand, small_bench, alpha=0.65)
        b = evaluate_candidate(cand, small_bench, alpha=0.65)
        assert a == b

    def test_level_fractions_partition_items(self, small_bench):
        cand = PolicyCandidate(thresholds=(2.5, 1.0, 0.5),
                               prune_ratios=(0.1, 0.2, 0.5, 0.7))
        obs = evaluate_candidate(cand, small_bench, alpha=0.65)
        assert sum(obs.level_fractions) == pytest.approx(1.0, abs=1e-12)

    def test_objective_identity(self, small_bench):
        cand = PolicyCandidate(thresholds=(4.0, 1.5, 0.2),
                               prune_ratios=(0.0, 0.3, 0.4, 0.9))
        obs = evaluate_candidate(cand, small_bench, alpha=0.4)
        expect = 0.4 * obs.accuracy + 0.6 * obs.efficiency_term
        assert obs.objective == pytest.approx(expect, abs=1e-12)


class TestProposeAndRun:
    def test_first_proposals_come_from_latin_hypercube(self):
        space = SearchSpace()
        state = new_state(space, alpha=0.65, seed=3)
        bounds = space.bounds()
        seen = []
        for _ in range(5):
            cand = propose(state, space)
            vec = cand.as_vector()
            assert np.all(vec >= bounds[:, 0] - 1e-12)
            assert np.all(vec <= bounds[:, 1] + 1e-12)
            assert space.is_feasible(cand)
            seen.append(vec)
            # feed a dummy observation so the seed queue advances
            state.maximizer.tell(vec, 0.0)
        assert len({tuple(v) for v in seen}) == 5

    def test_every_proposal_is_feasible(self, small_bench):
        space = SearchSpace()
        res = run(space, small_bench, alpha=0.65, iterations=12, seed=2)
        for obs in res.trace:
            assert space.is_feasible(PolicyCandidate(obs.thresholds, obs.prune_ratios))

    def test_minimum_iterations_enforced(self, small_bench):
        with pytest.raises(InvalidInputError):
            run(SearchSpace(), small_bench, iterations=5, seed=0)

    def test_run_is_deterministic(self, small_bench):
        a = run(SearchSpace(), small_bench, alpha=0.65, iterations=12, seed=9)
        b = run(SearchSpace(), small_bench, alpha=0.65, iterations=12, seed=9)
        assert a.trace == b.trace
        assert a.best_by_accuracy == b.best_by_accuracy

    def test_best_selection_rules(self, small_bench):
        res = run(SearchSpace(), small_bench, alpha=0.65, iterations=15, seed=4)
        accs = [o.accuracy for o in res.trace]
        objs = [o.objective for o in res.trace]
        assert res.best_by_objective.objective == max(objs)
        best_acc = max(accs)
        assert res.best_by_accuracy.accuracy == best_acc
        tied = [o for o in res.trace if o.accuracy == best_acc]
        assert res.best_by_accuracy.objective == max(o.objective for o in tied)

    def test_best_so_far_is_nondecreasing(self, small_bench):
        res = run(SearchSpace(), small_bench, alpha=0.65, iterations=15, seed=6)
        running = np.maximum.accumulate([o.objective for o in res.trace])
        assert list(running) == sorted(running)
        assert running[-1] == res.best_by_objective.objective

    def test_lower_alpha_prefers_more_pruning(self, small_bench):
        eff = {}
        for alpha in (0.45, 0.85):
            vals = [run(SearchSpace(), small_bench, alpha=alpha, iterations=20,
                        seed=s).best_by_objective.efficiency_term for s in (0, 1, 2)]
            eff[alpha] = np.mean(vals)
        assert eff[0.45] >= eff[0.85]

    def test_toy_quadratic_convergence_single_seed(self):
        bm = BayesianMaximizer(bounds=[(0.0, 1.0)], seed=0)
        for _ in range(40):
            x = bm.ask()
            bm.tell(x, -((x[0] - 0.3) ** 2))
        best_x, _ = bm.best
        assert abs(best_x[0] - 0.3) <= 0.05

    def test_trace_csv_round_trips(self, small_bench, tmp_path):
        res = run(SearchSpace(), small_bench, alpha=0.65, iterations=10, seed=1)
        path = tmp_path / "trace.csv"
        write_trace_csv(res.trace, path)
        import csv
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 10
        for row, obs in zip(rows, res.trace):
            assert float(row["objective"]) == obs.objective
            assert float(row["accuracy"]) == obs.accuracy
