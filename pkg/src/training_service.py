from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from src.config import get_logger
from src.constants import (
    FORWARD_ALGORITHMS, AGGREGATE_ALGORITHMS, STREAM_TRAIN, STREAM_FIT, MAX_ROLLIN_RESAMPLES,
    REPORT_JSON, REPORT_CSV, REPORT_FORMAT_VERSION, POLICY_FILE,
)
from src.dataset_store_service import canonical_json
from src.evaluation_service import EvaluationService
from src.exceptions import ConfigMismatchError, EmptyDatasetError
from src.learner import (
    FeatureScaler, ForestModel, LearntPolicy, RegressionDataset, RegressionExample, fit, save_policy,
)
from src.models import WorldDataset
from src.oracles import q_value_to_go
from src.policies import ClairvoyantPolicy, Episode, MixturePolicy, Policy, RandomPolicy
from src.rng import child_rng, derive_seed
from src.train_config import TrainConfig, validate_train_config
from src.utility import CoverageInstance, CoverageState, reward

# Set up logger for this module
logger = get_logger(__name__)


@dataclass
class IterationRecord:
    iteration: int
    dataset_size: int
    new_examples: int
    training_mse: float
    validation_reward: Optional[float]
    online_regression_loss: Optional[float]
    online_class_regret: Optional[float]
    resampled: int
    wall_clock: float


@dataclass
class TrainingReport:
    algorithm: str
    config: dict
    iterations: List[IterationRecord] = field(default_factory=list)
    selected_iteration: int = 0
    wall_clock: float = 0.0
    audited: int = 0
    audit_mismatches: int = 0

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_FORMAT_VERSION,
            "algorithm": self.algorithm,
            "config": self.config,
            "iterations": [asdict(record) for record in self.iterations],
            "selected_iteration": self.selected_iteration,
            "wall_clock": self.wall_clock,
            "audited": self.audited,
            "audit_mismatches": self.audit_mismatches,
        }


@dataclass
class TrainingOutcome:
    policy: LearntPolicy
    report: TrainingReport
    datasets: List[RegressionDataset]


@dataclass
class _Batch:
    examples: List[RegressionExample]
    resampled: int
    # per labelled state: (targets, predictions of the pre-update learner)
    states: List[Tuple[np.ndarray, Optional[np.ndarray]]]


def _online_metrics(batches: Sequence[_Batch]) -> Tuple[Optional[float], Optional[float]]:
    """Pre-update squared error and regret among labelled actions, or None without a learner."""
    states = [s for batch in batches for s in batch.states if s[1] is not None]
    if not states:
        return None, None
    errors = np.concatenate([pred - target for target, pred in states])
    regrets = [float(target.max() - target[int(np.argmax(pred))]) for target, pred in states]
    return float(np.mean(errors * errors)), float(np.mean(regrets))


class TrainingService:
    """Service class for imitation training of learnt policies"""

    def __init__(self, evaluation_service: Optional[EvaluationService] = None, threads: int = 1):
        """
        Args:
            evaluation_service: Rollout service for validation (built from the config's sensor if None)
            threads: Worker threads for roll-ins and tree fitting
        """
        self.evaluation_service = evaluation_service
        self.threads = max(1, int(threads))

    def _evaluator(self, config: TrainConfig) -> EvaluationService:
        if self.evaluation_service is None or self.evaluation_service.sensor != config.sensor_config:
            self.evaluation_service = EvaluationService(config.sensor_config, self.threads)
        return self.evaluation_service

    def _map(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                return list(pool.map(fn, items))
        return [fn(item) for item in items]

    def label(self, config: TrainConfig, state: CoverageState, action: int, steps_remaining: int) -> float:
        """One-step reward or oracle value-to-go, per the configured algorithm."""
        if config.uses_reward_target:
            return reward(state, action)
        return q_value_to_go(config.oracle_kind, state, action, steps_remaining, config.spec)

    def _label_state(self, config: TrainConfig, episode: Episode, iteration: int, episode_index: int,
                     learner: Optional[ForestModel]) -> _Batch:
        feasible = episode.feasible()
        k = min(config.actions_labeled_per_state, int(feasible.size))
        actions = np.sort(episode.rng.choice(feasible, size=k, replace=False))
        features = episode.features(actions)
        targets = np.array([self.label(config, episode.state, int(a), episode.steps_remaining) for a in actions])
        predictions = learner.predict_batch(features) if learner is not None else None

        examples = [
            RegressionExample(
                features=features[i], target=float(targets[i]), t=episode.t,
                world_index=episode.world_index, visited=tuple(episode.visited), action=int(a),
                sort_key=(iteration, episode_index, int(a)),
            )
            for i, a in enumerate(actions)
        ]
        return _Batch(examples=examples, resampled=0, states=[(targets, predictions)])

    def _roll_in(self, config: TrainConfig, instances: List[CoverageInstance], rng: np.random.Generator,
                 roll_in: Policy, t: Optional[int]) -> Tuple[Optional[Episode], int]:
        """
        Sample a world (and t, when not given) and roll in to timestep t.

        Returns the episode, or None when every attempt hit an empty feasible set, and the resample count.
        """
        spec = config.spec
        resampled = 0
        for _ in range(MAX_ROLLIN_RESAMPLES + 1):
            world = int(rng.integers(0, len(instances)))
            target_t = int(rng.integers(1, spec.horizon + 1)) if t is None else t
            episode = Episode(instances[world], spec, rng=rng, world_index=world)
            reached = True
            while episode.t < target_t:
                if episode.feasible().size == 0:
                    reached = False
                    break
                episode.advance(roll_in.act(episode))
            if reached and episode.feasible().size > 0:
                return episode, resampled
            resampled += 1
        return None, resampled

    def _collect(self, config: TrainConfig, instances: List[CoverageInstance], iteration: int,
                 roll_in: Policy, t: Optional[int], learner: Optional[ForestModel]) -> List[_Batch]:
        def one(j: int) -> _Batch:
            rng = child_rng(config.seed, STREAM_TRAIN, iteration, j)
            episode, resampled = self._roll_in(config, instances, rng, roll_in, t)
            if episode is None:
                logger.warning(f"Iteration {iteration} episode {j}: no usable roll-in after {resampled} attempts")
                return _Batch(examples=[], resampled=resampled, states=[])
            batch = self._label_state(config, episode, iteration, j, learner)
            batch.resampled = resampled
            return batch

        return self._map(one, list(range(config.episodes_per_iteration)))

    def _validate(self, config: TrainConfig, policy: LearntPolicy, val_worlds: WorldDataset) -> float:
        result = self._evaluator(config).evaluate(policy, val_worlds, config.spec, config.seed, expected_split=None)
        return result.summary.final_mean

    def train(self, config: TrainConfig, train_worlds: WorldDataset, val_worlds: WorldDataset) -> TrainingOutcome:
        validate_train_config(config)
        if config.is_forward:
            return self.train_forward(config, train_worlds, val_worlds)
        return self.train_aggregate(config, train_worlds, val_worlds)

    def train_forward(self, config: TrainConfig, train_worlds: WorldDataset,
                      val_worlds: WorldDataset) -> TrainingOutcome:
        """
        One model per timestep, each trained on states reached by the models before it.

        Raises:
            ConfigMismatchError: If the algorithm is not a forward-training one
            EmptyDatasetError: If no example could be collected at t = 1
        """
        if config.algorithm not in FORWARD_ALGORITHMS:
            raise ConfigMismatchError(f"train_forward cannot run algorithm '{config.algorithm}'")
        validate_train_config(config)
        started = time.perf_counter()
        instances = self._evaluator(config).instances(train_worlds)
        report = TrainingReport(algorithm=config.algorithm, config=config.to_dict())
        models: List[ForestModel] = []
        datasets: List[RegressionDataset] = []
        scaler: Optional[FeatureScaler] = None

        for t in range(1, config.horizon + 1):
            step_started = time.perf_counter()
            roll_in = LearntPolicy(models, stationary=False) if models else RandomPolicy()
            batches = self._collect(config, instances, t, roll_in, t, None)
            data = RegressionDataset()
            data.extend([e for batch in batches for e in batch.examples])
            data = data.sorted()
            resampled = sum(batch.resampled for batch in batches)

            if len(data) == 0 or len(data) < config.forest_params.min_samples_leaf:
                if not models:
                    raise EmptyDatasetError(f"No examples could be collected at t=1 ({resampled} resamples)")
                # t is unreachable on the training worlds; reuse the previous step's model
                logger.warning(f"t={t}: only {len(data)} examples, reusing the t={t - 1} model")
                model = models[-1]
            else:
                if scaler is None:
                    scaler = FeatureScaler.fit(data.features())
                model = fit(data, config.forest_params, derive_seed(config.seed, STREAM_FIT, t), scaler, self.threads)
            models.append(model)
            datasets.append(data)

            validation = None
            if t == config.horizon:
                validation = self._validate(config, LearntPolicy(models, stationary=False, horizon=config.horizon),
                                            val_worlds)
            report.iterations.append(IterationRecord(
                iteration=t, dataset_size=len(data), new_examples=len(data), training_mse=model.training_mse,
                validation_reward=validation, online_regression_loss=None, online_class_regret=None,
                resampled=resampled, wall_clock=time.perf_counter() - step_started,
            ))
            logger.info(f"t={t}: {len(data)} examples, training MSE {model.training_mse:.6g}, {resampled} resamples")

        policy = LearntPolicy(models, stationary=False, horizon=config.horizon)
        report.selected_iteration = config.horizon
        report.wall_clock = time.perf_counter() - started
        self._audit(config, instances, datasets, report)
        return TrainingOutcome(policy=policy, report=report, datasets=datasets)

    def train_aggregate(self, config: TrainConfig, train_worlds: WorldDataset,
                        val_worlds: WorldDataset) -> TrainingOutcome:
        """
        One stationary model, refit each iteration on the aggregate of all labelled roll-ins.

        Raises:
            ConfigMismatchError: If the algorithm is not an aggregation one
            EmptyDatasetError: If the aggregate is still too small to fit
        """
        if config.algorithm not in AGGREGATE_ALGORITHMS:
            raise ConfigMismatchError(f"train_aggregate cannot run algorithm '{config.algorithm}'")
        validate_train_config(config)
        started = time.perf_counter()
        instances = self._evaluator(config).instances(train_worlds)
        report = TrainingReport(algorithm=config.algorithm, config=config.to_dict())
        oracle = ClairvoyantPolicy(config.oracle_kind)
        aggregate = RegressionDataset()
        scaler: Optional[FeatureScaler] = None
        learner_model: Optional[ForestModel] = None
        candidates: List[LearntPolicy] = []

        for i in range(1, config.iterations + 1):
            step_started = time.perf_counter()
            learner: Policy = LearntPolicy([learner_model], stationary=True) if learner_model is not None else RandomPolicy()
            roll_in = MixturePolicy(oracle, learner, config.alpha(i))
            batches = self._collect(config, instances, i, roll_in, None, learner_model)
            new = RegressionDataset()
            new.extend([e for batch in batches for e in batch.examples])
            new = new.sorted()
            aggregate.extend(new.examples)
            resampled = sum(batch.resampled for batch in batches)
            online_loss, online_regret = _online_metrics(batches)

            if scaler is None and len(new) > 0:
                scaler = FeatureScaler.fit(new.features())
            learner_model = fit(aggregate, config.forest_params, derive_seed(config.seed, STREAM_FIT, i),
                                scaler, self.threads)
            policy = LearntPolicy([learner_model], stationary=True)
            candidates.append(policy)
            validation = self._validate(config, policy, val_worlds)

            report.iterations.append(IterationRecord(
                iteration=i, dataset_size=len(aggregate), new_examples=len(new),
                training_mse=learner_model.training_mse, validation_reward=validation,
                online_regression_loss=online_loss, online_class_regret=online_regret,
                resampled=resampled, wall_clock=time.perf_counter() - step_started,
            ))
            logger.info(
                f"Iteration {i}/{config.iterations} (alpha={config.alpha(i):.3f}): |D|={len(aggregate)}, "
                f"training MSE {learner_model.training_mse:.6g}, validation reward {validation:.4f}"
            )

        validations = [record.validation_reward for record in report.iterations]
        best = int(np.argmax(validations))
        report.selected_iteration = best + 1
        report.wall_clock = time.perf_counter() - started
        logger.info(f"Selected iteration {best + 1} with validation reward {validations[best]:.4f}")
        self._audit(config, instances, [aggregate], report)
        return TrainingOutcome(policy=candidates[best], report=report, datasets=[aggregate])

    def audit_labels(self, config: TrainConfig, instances: List[CoverageInstance],
                     examples: Sequence[RegressionExample]) -> int:
        """Recompute each example's target from its visited path; returns the number of mismatches."""
        mismatches = 0
        for example in examples:
            state = CoverageState.from_visited(instances[example.world_index], list(example.visited))
            steps_remaining = config.horizon - len(example.visited) + 1
            if self.label(config, state, example.action, steps_remaining) != example.target:
                mismatches += 1
        return mismatches

    def _audit(self, config: TrainConfig, instances: List[CoverageInstance], datasets: List[RegressionDataset],
               report: TrainingReport, count: int = 100) -> None:
        pool = [e for data in datasets for e in data.examples]
        if not pool:
            return
        rng = child_rng(config.seed, STREAM_TRAIN, 0, 0)
        picks = rng.choice(len(pool), size=min(count, len(pool)), replace=False)
        report.audited = int(picks.size)
        report.audit_mismatches = self.audit_labels(config, instances, [pool[int(p)] for p in np.sort(picks)])
        if report.audit_mismatches:
            logger.error(f"Label audit: {report.audit_mismatches} of {report.audited} targets did not reproduce")
        else:
            logger.info(f"Label audit: {report.audited} targets reproduced exactly")


def write_report(report: TrainingReport, output_dir: str) -> Tuple[str, str]:
    """
    Write report.json and report.csv. Wall-clock times go to the JSON report only,
    so the CSV is byte-identical across reruns.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path, csv_path = out / REPORT_JSON, out / REPORT_CSV
    json_path.write_text(canonical_json(_finite(report.to_dict())) + "\n", encoding="utf-8")

    rows = [asdict(record) for record in report.iterations]
    frame = pd.DataFrame(rows).drop(columns=["wall_clock"])
    frame["selected"] = frame["iteration"] == report.selected_iteration
    frame.to_csv(csv_path, index=False, lineterminator="\n")
    logger.info(f"Wrote training report to {json_path} and {csv_path}")
    return str(json_path), str(csv_path)


def _finite(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _finite(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_finite(v) for v in value]
    return value


def save_outcome(outcome: TrainingOutcome, output_dir: str) -> str:
    """Write the policy file and the training report into one directory; returns the policy path."""
    policy_path = str(Path(output_dir) / POLICY_FILE)
    save_policy(outcome.policy, policy_path)
    write_report(outcome.report, output_dir)
    return policy_path
