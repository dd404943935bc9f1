"""Policy search: Gaussian-process Bayesian optimization of (thresholds, ratios).

The search maximizes the joint reward

    F = alpha * accuracy + (1 - alpha) * sum_i c_i * p_i

where accuracy is the benchmark's salient-recall, c_i the empirical
fraction of images landing in complexity level i under the candidate's
thresholds, and p_i the candidate's stage-1 pruning ratio for that level.
The reported best configuration is the one with the highest accuracy
(ties break toward the higher objective); the best-by-objective point and
the full trace come along for analysis.

Surrogate: Matern-5/2 GP on box-normalized inputs, length-scale and noise
fitted by marginal-likelihood grid search in log space; acquisition is
Expected Improvement over 1024 sampled feasible points. Candidates are
drawn inside the box and repaired by sorting (thresholds descending,
ratios ascending), so every evaluated point satisfies the ordering
constraints. The first five points come from a Latin hypercube. Runs are
deterministic for a fixed seed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import cdist
from scipy.special import ndtr

from .bench import SyntheticBenchmark, attention_provider_for, score
from .errors import InvalidInputError
from .policy import FinalBudget, PruningPolicy
from .stage2 import run_pipeline

log = logging.getLogger("erase.bayesopt")

_EI_XI = 0.01
_N_SEED = 5
_N_CANDIDATES = 1024
_LENGTH_SCALES = np.geomspace(0.05, 2.0, 6)
_NOISE_LEVELS = (1e-6, 1e-4, 1e-2)


# ---------------------------------------------------------------------------
# search space and candidates

@dataclass(frozen=True)
class PolicyCandidate:
    thresholds: tuple[float, ...]
    prune_ratios: tuple[float, ...]

    def as_vector(self) -> np.ndarray:
        return np.array(self.thresholds + self.prune_ratios, dtype=np.float64)


@dataclass(frozen=True)
class SearchSpace:
    num_levels: int = 4
    threshold_bounds: tuple[float, float] = (0.05, 5.0)
    ratio_bounds: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self) -> None:
        if self.num_levels < 2:
            raise InvalidInputError("search space needs at least two levels")
        for lo, hi in (self.threshold_bounds, self.ratio_bounds):
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise InvalidInputError("bounds must be finite with low < high")
        if self.threshold_bounds[0] <= 0:
            raise InvalidInputError("thresholds must stay positive")

    @property
    def dim(self) -> int:
        return 2 * self.num_levels - 1

    def bounds(self) -> np.ndarray:
        n = self.num_levels
        out = np.empty((self.dim, 2))
        out[: n - 1] = self.threshold_bounds
        out[n - 1:] = self.ratio_bounds
        return out

    def repair(self, vec: np.ndarray) -> np.ndarray:
        """Sort the segments into feasibility: thresholds strictly
        descending, ratios ascending."""
        n = self.num_levels
        vec = np.array(vec, dtype=np.float64)
        thr = np.sort(vec[: n - 1])[::-1]
        # strictness: spread exact ties by a relative epsilon
        for i in range(1, thr.size):
            if thr[i] >= thr[i - 1]:
                thr[i] = np.nextafter(thr[i - 1], -np.inf)
        vec[: n - 1] = thr
        vec[n - 1:] = np.sort(vec[n - 1:])
        return vec

    def candidate(self, vec: np.ndarray) -> PolicyCandidate:
        n = self.num_levels
        return PolicyCandidate(
            thresholds=tuple(float(t) for t in vec[: n - 1]),
            prune_ratios=tuple(float(p) for p in vec[n - 1:]),
        )

    def is_feasible(self, cand: PolicyCandidate) -> bool:
        thr, pr = cand.thresholds, cand.prune_ratios
        if len(thr) != self.num_levels - 1 or len(pr) != self.num_levels:
            return False
        if any(a <= b for a, b in zip(thr, thr[1:])):
            return False
        if any(a > b for a, b in zip(pr, pr[1:])):
            return False
        lo, hi = self.threshold_bounds
        if any(not lo <= t <= hi for t in thr):
            return False
        lo, hi = self.ratio_bounds
        return all(lo <= p <= hi for p in pr)


# ---------------------------------------------------------------------------
# objective

def objective(accuracy: float, level_fractions, prune_ratios, alpha: float) -> float:
    """Joint reward F = alpha * accuracy + (1 - alpha) * sum(c_i * p_i)."""
    c = np.asarray(level_fractions, dtype=np.float64)
    p = np.asarray(prune_ratios, dtype=np.float64)
    if c.shape != p.shape:
        raise InvalidInputError("level fractions and ratios must align")
    if abs(float(c.sum()) - 1.0) > 1e-9:
        raise InvalidInputError(f"level fractions must sum to 1, got {c.sum()!r}")
    if np.any((p < 0) | (p > 1)):
        raise InvalidInputError("pruning ratios must lie in [0, 1]")
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    return float(alpha * accuracy + (1.0 - alpha) * float(np.dot(c, p)))


@dataclass(frozen=True)
class Observation:
    thresholds: tuple[float, ...]
    prune_ratios: tuple[float, ...]
    accuracy: float
    efficiency_term: float
    level_fractions: tuple[float, ...]
    objective: float


@dataclass(frozen=True)
class EvalConfig:
    """Fixed parts of the policy during the search."""

    early_layer: int = 2
    late_layer: int = 17
    total_layers: int = 28
    budget: FinalBudget = field(default_factory=lambda: FinalBudget("fraction", 1.0))
    bins: int = 256


def candidate_policy(cand: PolicyCandidate, bench: SyntheticBenchmark,
                     config: EvalConfig, model_id: str = "candidate") -> PruningPolicy:
    return PruningPolicy(
        model_id=model_id,
        patch_h=bench.spec.patch_h,
        patch_w=bench.spec.patch_w,
        bins=config.bins,
        thresholds=cand.thresholds,
        prune_ratios=cand.prune_ratios,
        early_layer=config.early_layer,
        late_layer=config.late_layer,
        total_layers=config.total_layers,
        final_budget=config.budget,
        provenance="optimized",
    )


def evaluate_candidate(cand: PolicyCandidate, bench: SyntheticBenchmark, alpha: float,
                       config: EvalConfig | None = None) -> Observation:
    """Run the pipeline on every benchmark image and score the candidate.

    accuracy = mean salient-recall; c_i = fraction of images classified at
    level i. The default budget (fraction 1.0) bypasses stage 2, so the
    search scores stage-1 behavior; tighter budgets exercise both stages.
    """
    config = config or EvalConfig()
    policy = candidate_policy(cand, bench, config)
    n_levels = policy.num_levels
    level_counts = np.zeros(n_levels)
    recalls = []
    for item in bench.items:
        provider = attention_provider_for(item, bench.seed)
        result = run_pipeline(item.image, policy, provider)
        level_counts[result.decision.level - 1] += 1
        recalls.append(score(result, item))
    fractions = level_counts / len(bench.items)
    accuracy = float(np.mean(recalls))
    eff = float(np.dot(fractions, np.asarray(cand.prune_ratios)))
    return Observation(
        thresholds=cand.thresholds,
        prune_ratios=cand.prune_ratios,
        accuracy=accuracy,
        efficiency_term=eff,
        level_fractions=tuple(float(f) for f in fractions),
        objective=objective(accuracy, fractions, cand.prune_ratios, alpha),
    )


# ---------------------------------------------------------------------------
# Gaussian process surrogate

def _matern52(dist: np.ndarray, ell: float) -> np.ndarray:
    a = math.sqrt(5.0) * dist / ell
    return (1.0 + a + a * a / 3.0) * np.exp(-a)


class _FittedGP:
    def __init__(self, x: np.ndarray, y: np.ndarray, ell: float, noise: float):
        self.x = x
        self.ell = ell
        k = _matern52(cdist(x, x), ell) + noise * np.eye(len(x))
        self._chol = cho_factor(k, lower=True)
        self.alpha_vec = cho_solve(self._chol, y)
        self.log_marginal = float(
            -0.5 * y @ self.alpha_vec
            - np.sum(np.log(np.diag(self._chol[0])))
            - 0.5 * len(y) * math.log(2.0 * math.pi))

    def predict(self, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        ks = _matern52(cdist(xs, self.x), self.ell)
        mu = ks @ self.alpha_vec
        v = cho_solve(self._chol, ks.T)
        var = 1.0 - np.sum(ks * v.T, axis=1)
        return mu, np.sqrt(np.clip(var, 1e-12, None))


def _fit_gp(x: np.ndarray, y: np.ndarray) -> "_FittedGP | None":
    best = None
    for ell in _LENGTH_SCALES:
        for noise in _NOISE_LEVELS:
            try:
                gp = _FittedGP(x, y, float(ell), float(noise))
            except np.linalg.LinAlgError:
                continue
            if best is None or gp.log_marginal > best.log_marginal:
                best = gp
    return best


def _latin_hypercube(rng: np.random.Generator, n: int, bounds: np.ndarray) -> np.ndarray:
    d = len(bounds)
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return bounds[:, 0] + u * (bounds[:, 1] - bounds[:, 0])


class BayesianMaximizer:
    """Generic ask/tell GP-EI maximizer over a box with optional repair."""

    def __init__(self, bounds, seed: int, repair=None, n_seed: int = _N_SEED,
                 n_candidates: int = _N_CANDIDATES):
        self.bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
        self.rng = np.random.default_rng(seed)
        self.repair = repair
        self.n_candidates = n_candidates
        self.x: list[np.ndarray] = []
        self.y: list[float] = []
        self._seed_points = _latin_hypercube(self.rng, n_seed, self.bounds)
        self.surrogate_failures = 0

    def _normalize(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return (x - lo) / (hi - lo)

    def _apply_repair(self, x: np.ndarray) -> np.ndarray:
        return self.repair(x) if self.repair is not None else x

    def _random_point(self) -> np.ndarray:
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        return self._apply_repair(lo + self.rng.random(len(self.bounds)) * (hi - lo))

    def ask(self) -> np.ndarray:
        if len(self.x) < len(self._seed_points):
            return self._apply_repair(self._seed_points[len(self.x)].copy())

        # candidate pool: half global uniform, half local around the incumbent
        # (two perturbation scales), all repaired into feasibility
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        span = hi - lo
        n_half = self.n_candidates // 2
        n_quarter = self.n_candidates - n_half - (self.n_candidates - n_half) // 2
        raw = [lo + self.rng.random((n_half, len(self.bounds))) * span]
        incumbent = self.x[int(np.argmax(self.y))]
        for scale, count in ((0.06, n_quarter), (0.01, self.n_candidates - n_half - n_quarter)):
            local = incumbent + self.rng.normal(0.0, scale, (count, len(self.bounds))) * span
            raw.append(np.clip(local, lo, hi))
        cands = np.array([self._apply_repair(r) for r in np.concatenate(raw)])

        ys = np.asarray(self.y)
        y_std = float(ys.std())
        if y_std <= 0.0:
            return cands[0]
        yn = (ys - float(ys.mean())) / y_std
        gp = _fit_gp(np.asarray([self._normalize(p) for p in self.x]), yn)
        if gp is None:
            self.surrogate_failures += 1
            log.warning("surrogate fit failed at iteration %d; sampling uniformly", len(self.x))
            return self._random_point()
        mu, sd = gp.predict(self._normalize(cands))
        best = float(yn.max())
        z = (mu - best - _EI_XI) / sd
        ei = (mu - best - _EI_XI) * ndtr(z) + sd * np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
        return cands[int(np.argmax(ei))]

    def tell(self, x: np.ndarray, value: float) -> None:
        self.x.append(np.asarray(x, dtype=np.float64))
        self.y.append(float(value))

    @property
    def best(self) -> tuple[np.ndarray, float]:
        i = int(np.argmax(self.y))
        return self.x[i], self.y[i]


# ---------------------------------------------------------------------------
# spec-facing optimizer state and driver

@dataclass
class OptimizerState:
    space: SearchSpace
    alpha: float
    rng_seed: int
    maximizer: BayesianMaximizer
    observations: list[Observation] = field(default_factory=list)

    def record(self, obs: Observation) -> None:
        self.maximizer.tell(
            np.concatenate([obs.thresholds, obs.prune_ratios]), obs.objective)
        self.observations.append(obs)

    @property
    def best_by_objective(self) -> Observation:
        return max(self.observations, key=lambda o: o.objective)

    @property
    def best_by_accuracy(self) -> Observation:
        # highest accuracy; ties resolved toward the higher objective
        return max(self.observations, key=lambda o: (o.accuracy, o.objective))


def new_state(space: SearchSpace, alpha: float, seed: int) -> OptimizerState:
    maximizer = BayesianMaximizer(space.bounds(), seed=seed, repair=space.repair)
    return OptimizerState(space=space, alpha=alpha, rng_seed=seed, maximizer=maximizer)


def propose(state: OptimizerState, space: SearchSpace) -> PolicyCandidate:
    """Next candidate: Latin-hypercube point during seeding, then the EI
    maximizer over sampled feasible points. Always ordering-feasible."""
    cand = space.candidate(state.maximizer.ask())
    assert space.is_feasible(cand)
    return cand


@dataclass(frozen=True)
class OptimizeResult:
    best_by_accuracy: Observation
    best_by_objective: Observation
    trace: tuple[Observation, ...]
    alpha: float
    seed: int


def run(space: SearchSpace, bench: SyntheticBenchmark, alpha: float = 0.65,
        iterations: int = 100, seed: int = 0,
        config: EvalConfig | None = None) -> OptimizeResult:
    """Seed phase plus EI loop; deterministic for a fixed seed."""
    if iterations < 10:
        raise InvalidInputError(f"need at least 10 iterations, got {iterations}")
    state = new_state(space, alpha, seed)
    for _ in range(iterations):
        cand = propose(state, space)
        state.record(evaluate_candidate(cand, bench, alpha, config))
    return OptimizeResult(
        best_by_accuracy=state.best_by_accuracy,
        best_by_objective=state.best_by_objective,
        trace=tuple(state.observations),
        alpha=alpha,
        seed=seed,
    )


def write_trace_csv(trace, path: str | Path) -> None:
    trace = list(trace)
    if not trace:
        raise InvalidInputError("empty trace")
    n_thr = len(trace[0].thresholds)
    n_rat = len(trace[0].prune_ratios)
    header = (["iteration"]
              + [f"threshold_{i + 1}" for i in range(n_thr)]
              + [f"prune_ratio_{i + 1}" for i in range(n_rat)]
              + ["accuracy", "efficiency_term", "objective"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, obs in enumerate(trace):
            writer.writerow([i] + [repr(v) for v in obs.thresholds]
                            + [repr(v) for v in obs.prune_ratios]
                            + [repr(obs.accuracy), repr(obs.efficiency_term),
                               repr(obs.objective)])


def observation_policy(obs: Observation, bench: SyntheticBenchmark,
                       config: EvalConfig | None = None,
                       model_id: str = "optimized") -> PruningPolicy:
    """Export an observation in the policy schema."""
    cand = PolicyCandidate(obs.thresholds, obs.prune_ratios)
    return candidate_policy(cand, bench, config or EvalConfig(), model_id=model_id)
