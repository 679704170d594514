from __future__ import annotations

import json
import math
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import get_logger
from src.constants import (
    CI_Z, CI_HEADER, CURVE_CSV, FINAL_CSV, TRAJECTORIES_JSONL, CURVE_COLUMNS, FINAL_COLUMNS,
    STREAM_EVAL, SPLIT_TEST, TERMINAL_HORIZON, TERMINAL_BUDGET, TERMINAL_POLICY_ERROR,
)
from src.dataset_store_service import canonical_json
from src.exceptions import InfoGatherError, InvalidConfigError
from src.models import WorldDataset, WorldEntry, SensorConfig, ProblemSpec, StepRecord, Trajectory
from src.policies import Episode, Policy
from src.rng import child_rng, derive_seed
from src.utility import CoverageInstance

# Set up logger for this module
logger = get_logger(__name__)


def world_fingerprint(entry: WorldEntry) -> int:
    """CRC32 of the occupancy grid, node positions and start id."""
    crc = zlib.crc32(np.ascontiguousarray(entry.world.occupied, dtype=np.uint8).tobytes())
    crc = zlib.crc32(np.ascontiguousarray(entry.nodes.positions, dtype="<f8").tobytes(), crc)
    return zlib.crc32(int(entry.nodes.start_id).to_bytes(4, "little"), crc)


def rollout_seed(seed: int, entry: WorldEntry) -> int:
    # keyed by world content, not position, so permuting the dataset changes no episode
    return derive_seed(seed, STREAM_EVAL, world_fingerprint(entry))


def confidence_half_width(values: np.ndarray) -> float:
    """1.96 * std(ddof=1) / sqrt(n); 0 for a single value."""
    n = values.shape[0]
    if n < 2:
        return 0.0
    return float(CI_Z * np.std(values, ddof=1) / math.sqrt(n))


def rollout(policy: Policy, instance: CoverageInstance, spec: ProblemSpec, seed: int = 0,
            world_index: int = 0) -> Trajectory:
    """
    Run one episode of up to T actions.

    Record t = 0 is the start observation. The episode stops early when the
    feasible set is empty. An error raised by the policy ends the episode with
    a diagnostic record instead of propagating.
    """
    episode = Episode(instance, spec, rng=child_rng(seed), world_index=world_index)
    start_value = episode.state.coverage
    trajectory = Trajectory(policy=policy.name, world_index=world_index)
    trajectory.records.append(StepRecord(
        t=0, node_id=episode.state.current, reward=start_value, cumulative_reward=start_value,
        remaining_budget=episode.state.remaining_budget(spec), num_feasible=int(episode.feasible().size),
    ))

    for t in range(1, spec.horizon + 1):
        feasible = episode.feasible()
        if feasible.size == 0:
            trajectory.terminal = TERMINAL_BUDGET
            break
        try:
            action = policy.act(episode)
            step_reward = episode.advance(action)
        except InfoGatherError as e:
            logger.warning(f"Policy '{policy.name}' failed on world {world_index} at t={t}: {e}")
            trajectory.terminal = TERMINAL_POLICY_ERROR
            trajectory.error = f"{type(e).__name__}: {e}"
            break
        trajectory.records.append(StepRecord(
            t=t, node_id=int(action), reward=step_reward, cumulative_reward=episode.state.coverage,
            remaining_budget=episode.state.remaining_budget(spec), num_feasible=int(feasible.size),
        ))
    else:
        trajectory.terminal = TERMINAL_HORIZON
    return trajectory


@dataclass
class EvalSummary:
    policy: str
    horizon: int
    mean: List[float]
    ci_half: List[float]
    n: int
    final_median: float
    final_lo: float
    final_hi: float
    wall_clock: float = 0.0

    @property
    def final_mean(self) -> float:
        return self.mean[-1]

    @property
    def final_ci_half(self) -> float:
        return self.ci_half[-1]


@dataclass
class EvalResult:
    summary: EvalSummary
    trajectories: List[Trajectory] = field(default_factory=list)


def summarize(policy_name: str, trajectories: Sequence[Trajectory], horizon: int, wall_clock: float = 0.0) -> EvalSummary:
    """
    Per-timestep mean and CI of cumulative reward, holding each episode's last value after early termination.

    Values are sorted per timestep before reduction, so the summary does not depend on episode order.
    """
    curves = np.sort(np.array([t.cumulative_curve(horizon) for t in trajectories], dtype=np.float64), axis=0)
    n = curves.shape[0]
    if n == 0:
        raise InvalidConfigError("Cannot summarize an empty set of trajectories")
    mean = [math.fsum(curves[:, k]) / n for k in range(horizon + 1)]
    ci = [confidence_half_width(curves[:, k]) for k in range(horizon + 1)]
    final = curves[:, -1]
    return EvalSummary(
        policy=policy_name,
        horizon=horizon,
        mean=mean,
        ci_half=ci,
        n=n,
        final_median=float(np.median(final)),
        final_lo=mean[-1] - ci[-1],
        final_hi=mean[-1] + ci[-1],
        wall_clock=wall_clock,
    )


class EvaluationService:
    """Service class for rolling out policies on world datasets and writing the comparison outputs"""

    def __init__(self, sensor: Optional[SensorConfig] = None, threads: int = 1):
        """
        Args:
            sensor: Sensor model shared by every rollout
            threads: Worker threads for rollouts across worlds
        """
        self.sensor = sensor or SensorConfig()
        self.threads = max(1, int(threads))
        self._instances: Dict[int, Tuple[WorldDataset, List[CoverageInstance]]] = {}

    def instances(self, dataset: WorldDataset) -> List[CoverageInstance]:
        """Coverage instances for every world, built once per dataset object."""
        cached = self._instances.get(id(dataset))
        if cached is not None and cached[0] is dataset:
            return cached[1]
        built = self._map(lambda entry: CoverageInstance(entry.world, entry.nodes, self.sensor), list(dataset))
        self._instances[id(dataset)] = (dataset, built)
        return built

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def rollouts(self, policy: Policy, dataset: WorldDataset, spec: ProblemSpec, seed: int) -> List[Trajectory]:
        instances = self.instances(dataset)
        jobs = [(i, entry, instance) for i, (entry, instance) in enumerate(zip(dataset, instances))]
        return self._map(lambda job: rollout(policy, job[2], spec, rollout_seed(seed, job[1]), job[0]), jobs)

    def evaluate(self, policy: Policy, dataset: WorldDataset, spec: ProblemSpec, seed: int = 0,
                 expected_split: Optional[str] = SPLIT_TEST) -> EvalResult:
        """
        One rollout per world, aggregated into an EvalSummary.

        Raises:
            InvalidConfigError: If the dataset is not from the expected split
        """
        if expected_split is not None and dataset.split != expected_split:
            raise InvalidConfigError(f"Evaluation expects a '{expected_split}' dataset, got '{dataset.split}'")
        started = time.perf_counter()
        trajectories = self.rollouts(policy, dataset, spec, seed)
        summary = summarize(policy.name, trajectories, spec.horizon, time.perf_counter() - started)
        errors = sum(1 for t in trajectories if t.terminal == TERMINAL_POLICY_ERROR)
        logger.info(
            f"Policy '{policy.name}': final mean {summary.final_mean:.4f} +- {summary.final_ci_half:.4f}, "
            f"median {summary.final_median:.4f} over {summary.n} worlds ({summary.wall_clock:.1f}s)"
        )
        if errors:
            logger.warning(f"Policy '{policy.name}' aborted {errors} episodes with errors")
        return EvalResult(summary=summary, trajectories=trajectories)

    def compare(self, policies: Sequence[Policy], dataset: WorldDataset, spec: ProblemSpec,
                seed: int = 0) -> List[EvalResult]:
        """Evaluate several policies on the same worlds and rollout seeds."""
        names = [p.name for p in policies]
        if len(set(names)) != len(names):
            raise InvalidConfigError(f"Policy names must be unique, got {names}")
        return [self.evaluate(policy, dataset, spec, seed) for policy in policies]


def write_outputs(results: Sequence[EvalResult], output_dir: str) -> Dict[str, str]:
    """
    Write curve.csv, final.csv and trajectories.jsonl.

    Returns:
        Mapping of file name to written path
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)

    curve_rows = [
        (r.summary.policy, t, r.summary.mean[t], r.summary.ci_half[t], r.summary.n)
        for r in results for t in range(r.summary.horizon + 1)
    ]
    final_rows = [(r.summary.policy, r.summary.final_median, r.summary.final_lo, r.summary.final_hi)
                  for r in results]

    paths = {name: str(out / name) for name in (CURVE_CSV, FINAL_CSV, TRAJECTORIES_JSONL)}
    for name, columns, rows in ((CURVE_CSV, CURVE_COLUMNS, curve_rows), (FINAL_CSV, FINAL_COLUMNS, final_rows)):
        with open(paths[name], "w", encoding="utf-8", newline="") as handle:
            handle.write(CI_HEADER + "\n")
            pd.DataFrame(rows, columns=list(columns)).to_csv(handle, index=False, lineterminator="\n")

    with open(paths[TRAJECTORIES_JSONL], "w", encoding="utf-8") as handle:
        for result in results:
            for trajectory in result.trajectories:
                handle.write(canonical_json(trajectory.to_dict()) + "\n")

    logger.info(f"Wrote evaluation outputs for {len(results)} policies to {out}")
    return paths


def read_curve(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_trajectories(path: str) -> List[dict]:
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
