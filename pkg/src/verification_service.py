from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from src.config import get_logger
from src.constants import (
    SUITES, SUITE_SUBMODULARITY, SUITE_SENSOR, SUITE_LEMMA1, SUITE_LEMMA2, SUITE_GREEDY_KNOWN, SUITE_MEMORIZATION,
    LEMMA_TOLERANCE, GREEDY_RATIO, FEATURE_NAMES, ADAPTIVE_MAX_HORIZON, ADAPTIVE_MAX_WORLDS,
)
from src.exceptions import InvalidConfigError
from src.learner import ForestModel, ForestParams, RegressionDataset, RegressionExample, fit
from src.models import ProblemSpec, SensorConfig
from src.oracles import greedy_step
from src.reference import (
    TinyEnsemble, adaptive_greedy_act, brute_force_path, deterministic_rollin, hallucinating_greedy_value,
    lemma1_check, make_tiny_ensemble, marching_traversal_oracle, optimal_adaptive_value, slab_traversal_oracle,
    uniform_rollin,
)
from src.rng import child_rng, derive_seed
from src.sensor import trace_rays
from src.utility import CoverageInstance, CoverageState, marginal_gain_count
from src.worldgen import gen_distributed_blocks

# Set up logger for this module
logger = get_logger(__name__)


@dataclass
class SuiteResult:
    name: str
    checked: int = 0
    failures: List[str] = field(default_factory=list)
    failing_seeds: List[int] = field(default_factory=list)
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, seed: int, message: str) -> None:
        self.failures.append(message)
        if seed not in self.failing_seeds:
            self.failing_seeds.append(seed)


def format_table(results: Sequence[SuiteResult]) -> str:
    """Fixed-width pass/fail table, one row per suite."""
    lines = [f"{'suite':<14} {'result':<6} {'checked':>8} {'seconds':>8}  failing seeds"]
    for r in results:
        seeds = ", ".join(str(s) for s in r.failing_seeds[:10]) or "-"
        lines.append(f"{r.name:<14} {'PASS' if r.passed else 'FAIL':<6} {r.checked:>8} {r.seconds:>8.2f}  {seeds}")
    return "\n".join(lines)


class VerificationService:
    """Service class for running the exhaustive reference suites"""

    def __init__(self, seed: int = 0, scale: float = 1.0):
        """
        Args:
            seed: Root seed; every instance seed is derived from it and printed on failure
            scale: Multiplier on the number of instances per suite
        """
        if not scale > 0:
            raise InvalidConfigError(f"Invalid scale {scale}: must be > 0")
        self.seed = seed
        self.scale = scale
        self._suites: Dict[str, Callable[[SuiteResult], None]] = {
            SUITE_SUBMODULARITY: self.check_submodularity,
            SUITE_SENSOR: self.check_sensor,
            SUITE_LEMMA1: self.check_lemma1,
            SUITE_LEMMA2: self.check_lemma2,
            SUITE_GREEDY_KNOWN: self.check_greedy_known,
            SUITE_MEMORIZATION: self.check_memorization,
        }

    def _count(self, base: int) -> int:
        return max(1, int(round(base * self.scale)))

    def _seed(self, suite: str, index: int) -> int:
        return derive_seed(self.seed, SUITES.index(suite), index) % (2 ** 31)

    def run(self, suites: Optional[Sequence[str]] = None) -> List[SuiteResult]:
        names = list(suites) if suites else list(SUITES)
        unknown = [n for n in names if n not in self._suites]
        if unknown:
            raise InvalidConfigError(f"Unknown suites {unknown}. Valid suites are: {', '.join(SUITES)}")
        results = []
        for name in names:
            result = SuiteResult(name=name)
            started = time.perf_counter()
            self._suites[name](result)
            result.seconds = time.perf_counter() - started
            level = logger.info if result.passed else logger.error
            level(f"Suite {name}: {'passed' if result.passed else 'FAILED'} "
                  f"({result.checked} checks, {result.seconds:.2f}s)")
            for message in result.failures[:5]:
                logger.error(f"  {message}")
            results.append(result)
        return results

    def check_submodularity(self, result: SuiteResult, trials: int = 1000) -> None:
        """Diminishing returns and monotonicity of coverage on random (A subset of B, v) triples."""
        seed = self._seed(SUITE_SUBMODULARITY, 0)
        dataset = gen_distributed_blocks(grid_dims=(32, 32), count=4, seed=seed, num_nodes=40, split="test")
        instances = [CoverageInstance(e.world, e.nodes, SensorConfig(num_rays=64)) for e in dataset]
        rng = child_rng(seed, 1)
        for k in range(self._count(trials)):
            instance = instances[int(rng.integers(0, len(instances)))]
            n = instance.num_nodes
            big = rng.choice(n, size=int(rng.integers(0, 11)), replace=False)
            small = big[rng.random(big.size) < 0.5]
            v = int(rng.integers(0, n))
            gain_small = marginal_gain_count(instance, v, small)
            gain_big = marginal_gain_count(instance, v, big)
            covered_small = int(instance.covered_mask(small).sum())
            covered_big = int(instance.covered_mask(big).sum())
            result.checked += 1
            if not gain_small >= gain_big >= 0 or covered_small > covered_big:
                result.fail(seed, f"trial {k}: gains {gain_small} < {gain_big} or coverage {covered_small} > {covered_big}")

    def check_sensor(self, result: SuiteResult, rays: int = 1000) -> None:
        """Traversal against the slab oracle (exact) and the marching oracle (subset)."""
        seed = self._seed(SUITE_SENSOR, 0)
        rng = child_rng(seed)
        for k in range(self._count(rays)):
            blocking = rng.random((32, 32)) < 0.12
            free = np.flatnonzero(~blocking.ravel())
            row, col = divmod(int(free[rng.integers(0, free.size)]), 32)
            origin = np.array([col + 0.05 + 0.9 * rng.random(), row + 0.05 + 0.9 * rng.random()])
            angle = rng.uniform(0.0, 2.0 * math.pi)
            direction = np.array([math.cos(angle), math.sin(angle)])
            max_range = float(rng.uniform(2.0, 20.0))

            batch = trace_rays(blocking, origin, direction[None, :], max_range)
            traced = frozenset(int(c) for c in batch.cells[0] if c >= 0)
            hit = int(batch.hit_cell[0])
            expected, expected_hit = slab_traversal_oracle(blocking, origin, direction, max_range)
            marched = marching_traversal_oracle(blocking, origin, direction, max_range)
            result.checked += 1
            if traced != expected or hit != expected_hit:
                result.fail(seed, f"ray {k}: traversal {sorted(traced ^ expected)} differs, hit {hit} vs {expected_hit}")
            elif not marched <= traced | {hit}:
                result.fail(seed, f"ray {k}: marched cells {sorted(marched - traced)} not reported")

    def _ensemble(self, suite: str, index: int) -> tuple:
        seed = self._seed(suite, index)
        rng = child_rng(seed)
        worlds = int(rng.integers(1, ADAPTIVE_MAX_WORLDS, endpoint=True))
        horizon = int(rng.integers(1, ADAPTIVE_MAX_HORIZON, endpoint=True))
        ensemble = make_tiny_ensemble(seed, num_worlds=worlds, num_nodes=6)
        return seed, ensemble, ProblemSpec.unconstrained(horizon)

    def check_lemma1(self, result: SuiteResult, ensembles: int = 50) -> None:
        """Expected clairvoyant value equals its posterior-sampled form, for every (t, a)."""
        for index in range(self._count(ensembles)):
            seed, ensemble, spec = self._ensemble(SUITE_LEMMA1, index)
            greedy_rollin = deterministic_rollin(
                lambda belief, visited, feasible, e=ensemble, s=spec: adaptive_greedy_act(e, visited, belief, s))
            for label, rollin in (("greedy", greedy_rollin), ("uniform", uniform_rollin)):
                for t in range(1, spec.horizon + 1):
                    for action in range(len(ensemble.nodes)):
                        check = lemma1_check(ensemble, rollin, t, action, spec)
                        result.checked += 1
                        if check.gap > LEMMA_TOLERANCE:
                            result.fail(seed, f"seed {seed} {label} roll-in t={t} a={action}: "
                                              f"lhs {check.lhs!r} rhs {check.rhs!r}")

    def check_lemma2(self, result: SuiteResult, ensembles: int = 50) -> None:
        """Hallucinating one-step greedy reaches (1 - 1/e) of the optimal adaptive value."""
        for index in range(self._count(ensembles)):
            seed, ensemble, spec = self._ensemble(SUITE_LEMMA2, index)
            greedy = hallucinating_greedy_value(ensemble, spec)
            optimal = optimal_adaptive_value(ensemble, spec)
            result.checked += 1
            if greedy < GREEDY_RATIO * optimal - LEMMA_TOLERANCE:
                result.fail(seed, f"seed {seed}: greedy {greedy:.6f} < (1-1/e) * optimal {optimal:.6f}")

    def check_greedy_known(self, result: SuiteResult, instances: int = 50) -> None:
        """Known-world greedy reaches (1 - 1/e) of the brute-force optimal path."""
        for index in range(self._count(instances)):
            seed = self._seed(SUITE_GREEDY_KNOWN, index)
            ensemble: TinyEnsemble = make_tiny_ensemble(seed, num_worlds=1, num_nodes=8)
            instance = ensemble.instances[0]
            spec = ProblemSpec.unconstrained(int(child_rng(seed, 1).integers(1, 4, endpoint=True)))
            best = brute_force_path(ensemble.worlds[0], ensemble.nodes, spec, instance=instance)
            state = CoverageState.start(instance)
            for _ in range(spec.horizon):
                state.apply(greedy_step(state, spec))
            result.checked += 1
            greedy_gain = state.covered_count - best.start_count
            optimal_gain = best.count - best.start_count
            if greedy_gain < GREEDY_RATIO * optimal_gain - LEMMA_TOLERANCE:
                result.fail(seed, f"seed {seed}: greedy gain {greedy_gain} < (1-1/e) * optimal gain {optimal_gain}")

    def check_memorization(self, result: SuiteResult, rows: int = 300) -> None:
        """Unlimited-depth forest fits deduplicated rows exactly; save/load keeps predictions bit-identical."""
        seed = self._seed(SUITE_MEMORIZATION, 0)
        rng = child_rng(seed)
        features = np.unique(np.round(rng.random((self._count(rows), len(FEATURE_NAMES))), 3), axis=0)
        data = RegressionDataset()
        data.extend([RegressionExample(features=f, target=float(rng.random()), t=1) for f in features])
        params = ForestParams(num_trees=5, max_depth=None, min_samples_leaf=1, bootstrap=False)
        model = fit(data, params, seed)
        result.checked += 1
        if model.training_mse != 0.0:
            result.fail(seed, f"seed {seed}: memorization training MSE {model.training_mse!r}")

        restored = ForestModel.from_dict(json.loads(json.dumps(model.to_dict())))
        queries = rng.random((200, len(FEATURE_NAMES)))
        result.checked += 1
        if not np.array_equal(model.predict_batch(queries), restored.predict_batch(queries)):
            result.fail(seed, f"seed {seed}: predictions changed after save/load")
