from __future__ import annotations

import base64
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from src.belief import Belief, FeatureVector, extract_features_batch
from src.config import get_logger
from src.constants import (
    FEATURE_NAMES, FEATURE_SCHEMA_VERSION, MODEL_FORMAT_VERSION, MODEL_FILE_KIND, POLICY_FILE_KIND,
    DEFAULT_NUM_TREES, DEFAULT_MAX_DEPTH, DEFAULT_MIN_SAMPLES_LEAF, DEFAULT_BOOTSTRAP,
    ERROR_EMPTY_DATASET, ERROR_SCHEMA_MISMATCH, ERROR_NO_FEASIBLE_ACTION,
)
from src.dataset_store_service import canonical_json, check_format_version
from src.exceptions import (
    InvalidConfigError, EmptyDatasetError, SchemaMismatchError, NoFeasibleActionError, DatasetFormatError,
)
from src.models import NodeSet, ProblemSpec, SensorConfig
from src.policies import Episode
from src.rng import child_rng

# Set up logger for this module
logger = get_logger(__name__)

LEAF = -1


@dataclass(frozen=True)
class ForestParams:
    num_trees: int = DEFAULT_NUM_TREES
    max_depth: Optional[int] = DEFAULT_MAX_DEPTH
    min_samples_leaf: int = DEFAULT_MIN_SAMPLES_LEAF
    feature_subsample: Optional[float] = None
    bootstrap: bool = DEFAULT_BOOTSTRAP

    def __post_init__(self):
        if self.num_trees < 1:
            raise InvalidConfigError(f"Invalid num_trees {self.num_trees}: must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise InvalidConfigError(f"Invalid max_depth {self.max_depth}: must be >= 0 or null")
        if self.min_samples_leaf < 1:
            raise InvalidConfigError(f"Invalid min_samples_leaf {self.min_samples_leaf}: must be >= 1")
        if self.feature_subsample is not None and not (0 < self.feature_subsample <= 1):
            raise InvalidConfigError(f"Invalid feature_subsample {self.feature_subsample}: expected 0 < f <= 1")

    def features_per_split(self, num_features: int) -> int:
        if self.feature_subsample is None:
            return max(1, int(round(math.sqrt(num_features))))
        return max(1, int(round(self.feature_subsample * num_features)))

    def to_dict(self) -> dict:
        return {
            "num_trees": self.num_trees,
            "max_depth": self.max_depth,
            "min_samples_leaf": self.min_samples_leaf,
            "feature_subsample": self.feature_subsample,
            "bootstrap": self.bootstrap,
        }


@dataclass(frozen=True)
class FeatureScaler:
    """Per-component affine map (x - offset) / scale, fit once and then frozen."""
    offset: Tuple[float, ...]
    scale: Tuple[float, ...]

    @classmethod
    def fit(cls, features: np.ndarray) -> "FeatureScaler":
        low = features.min(axis=0)
        span = features.max(axis=0) - low
        span = np.where(span > 0, span, 1.0)
        return cls(offset=tuple(float(v) for v in low), scale=tuple(float(v) for v in span))

    @classmethod
    def identity(cls, width: int = len(FEATURE_NAMES)) -> "FeatureScaler":
        return cls(offset=(0.0,) * width, scale=(1.0,) * width)

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (features - np.asarray(self.offset)) / np.asarray(self.scale)


@dataclass(frozen=True)
class RegressionExample:
    """A labelled (state, action) pair plus where it came from."""
    features: np.ndarray
    target: float
    t: int
    weight: float = 1.0
    world_index: int = -1
    visited: Tuple[int, ...] = ()
    action: int = -1
    sort_key: Tuple = ()

    def __post_init__(self):
        if not math.isfinite(self.target):
            raise InvalidConfigError(f"Regression target must be finite, got {self.target}")
        if self.t < 1:
            raise InvalidConfigError(f"Invalid timestep {self.t}: must be >= 1")
        if not self.weight > 0:
            raise InvalidConfigError(f"Invalid weight {self.weight}: must be > 0")


@dataclass
class RegressionDataset:
    """Append-only aggregate of labelled examples sharing one feature schema."""
    examples: List[RegressionExample] = field(default_factory=list)
    schema_version: int = FEATURE_SCHEMA_VERSION

    def __len__(self) -> int:
        return len(self.examples)

    def extend(self, batch: Sequence[RegressionExample]) -> None:
        for example in batch:
            if np.asarray(example.features).shape != (len(FEATURE_NAMES),):
                raise SchemaMismatchError(ERROR_SCHEMA_MISMATCH.format(len(FEATURE_NAMES),
                                                                       np.asarray(example.features).shape))
        self.examples.extend(batch)

    def sorted(self) -> "RegressionDataset":
        return RegressionDataset(sorted(self.examples, key=lambda e: e.sort_key), self.schema_version)

    def features(self) -> np.ndarray:
        if not self.examples:
            return np.zeros((0, len(FEATURE_NAMES)))
        return np.vstack([np.asarray(e.features, dtype=np.float64) for e in self.examples])

    def targets(self) -> np.ndarray:
        return np.array([e.target for e in self.examples], dtype=np.float64)

    def weights(self) -> np.ndarray:
        return np.array([e.weight for e in self.examples], dtype=np.float64)


@dataclass(frozen=True)
class TreeArrays:
    """Flat binary regression tree; feature == -1 marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.feature.shape[0]

    def predict(self, features: np.ndarray) -> np.ndarray:
        node = np.zeros(features.shape[0], dtype=np.int64)
        rows = np.arange(features.shape[0])
        while True:
            split = self.feature[node]
            active = split != LEAF
            if not active.any():
                break
            idx = rows[active]
            here = node[active]
            go_left = features[idx, split[active]] <= self.threshold[here]
            node[active] = np.where(go_left, self.left[here], self.right[here])
        return self.value[node]

    def to_matrix(self) -> np.ndarray:
        return np.column_stack([self.feature, self.threshold, self.left, self.right, self.value]).astype("<f8")

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "TreeArrays":
        return cls(
            feature=matrix[:, 0].astype(np.int64),
            threshold=matrix[:, 1].copy(),
            left=matrix[:, 2].astype(np.int64),
            right=matrix[:, 3].astype(np.int64),
            value=matrix[:, 4].copy(),
        )


def _leaf_value(y: np.ndarray, w: np.ndarray) -> float:
    if np.all(y == y[0]):
        return float(y[0])
    return float(np.sum(w * y) / np.sum(w))


def _best_split(x: np.ndarray, y: np.ndarray, w: np.ndarray, min_leaf: int) -> Optional[Tuple[float, float]]:
    """(gain, threshold) of the best valid split on one feature, or None."""
    n = x.shape[0]
    order = np.argsort(x, kind="stable")
    xs, ys, ws = x[order], y[order], w[order]
    centered = ys - np.sum(ws * ys) / np.sum(ws)
    cw = np.cumsum(ws)
    cwy = np.cumsum(ws * centered)
    cwy2 = np.cumsum(ws * centered * centered)
    total_w, total_wy, total_wy2 = cw[-1], cwy[-1], cwy2[-1]

    # position i puts samples [0, i) on the left
    positions = np.arange(min_leaf, n - min_leaf + 1)
    positions = positions[xs[positions - 1] < xs[positions]] if positions.size else positions
    if positions.size == 0:
        return None

    lw, lwy, lwy2 = cw[positions - 1], cwy[positions - 1], cwy2[positions - 1]
    rw, rwy, rwy2 = total_w - lw, total_wy - lwy, total_wy2 - lwy2
    parent_sse = total_wy2 - total_wy * total_wy / total_w
    child_sse = (lwy2 - lwy * lwy / lw) + (rwy2 - rwy * rwy / rw)
    gains = parent_sse - child_sse
    best = int(np.argmax(gains))
    i = int(positions[best])
    low, high = xs[i - 1], xs[i]
    threshold = low + (high - low) / 2.0
    if not (low <= threshold < high):
        threshold = low
    return float(gains[best]), float(threshold)


def build_tree(features: np.ndarray, targets: np.ndarray, weights: np.ndarray,
               params: ForestParams, rng: np.random.Generator) -> TreeArrays:
    """Grow one tree depth-first with exact threshold scans."""
    num_features = features.shape[1]
    per_split = params.features_per_split(num_features)
    max_depth = math.inf if params.max_depth is None else params.max_depth
    min_leaf = params.min_samples_leaf

    feature, threshold, left, right, value = [], [], [], [], []

    def new_node() -> int:
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.arange(features.shape[0]), 0)]
    while stack:
        node, idx, depth = stack.pop()
        y, w = targets[idx], weights[idx]
        value[node] = _leaf_value(y, w)
        if depth >= max_depth or idx.size < 2 * min_leaf or np.all(y == y[0]):
            continue

        order = rng.permutation(num_features)
        best = None
        for group in (order[:per_split], order[per_split:]):
            for f in group:
                found = _best_split(features[idx, f], y, w, min_leaf)
                if found is not None and (best is None or found[0] > best[0]):
                    best = (found[0], found[1], int(f))
            if best is not None:
                break
        if best is None:
            continue

        _, cut, f = best
        goes_left = features[idx, f] <= cut
        feature[node] = f
        threshold[node] = cut
        left_id, right_id = new_node(), new_node()
        left[node], right[node] = left_id, right_id
        stack.append((right_id, idx[~goes_left], depth + 1))
        stack.append((left_id, idx[goes_left], depth + 1))

    return TreeArrays(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        value=np.asarray(value, dtype=np.float64),
    )


@dataclass(frozen=True)
class ForestModel:
    trees: Tuple[TreeArrays, ...]
    params: ForestParams
    seed: int
    scaler: FeatureScaler
    training_mse: float = 0.0
    feature_names: Tuple[str, ...] = FEATURE_NAMES
    schema_version: int = FEATURE_SCHEMA_VERSION

    def check_schema(self, width: int) -> None:
        if tuple(self.feature_names) != FEATURE_NAMES or self.schema_version != FEATURE_SCHEMA_VERSION:
            raise SchemaMismatchError(ERROR_SCHEMA_MISMATCH.format(
                f"v{FEATURE_SCHEMA_VERSION} {list(FEATURE_NAMES)}",
                f"v{self.schema_version} {list(self.feature_names)}"))
        if width != len(self.feature_names):
            raise SchemaMismatchError(ERROR_SCHEMA_MISMATCH.format(len(self.feature_names), width))

    def predict_batch(self, features: np.ndarray) -> np.ndarray:
        """
        Mean over trees. Tree outputs are sorted before summing so the result
        does not depend on tree order; unanimous trees return their value exactly.
        """
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        self.check_schema(features.shape[1])
        scaled = self.scaler.transform(features)
        per_tree = np.sort(np.vstack([tree.predict(scaled) for tree in self.trees]), axis=0)
        mean = per_tree.sum(axis=0) / len(self.trees)
        unanimous = np.all(per_tree == per_tree[0], axis=0)
        return np.where(unanimous, per_tree[0], mean)

    def to_dict(self) -> dict:
        return {
            "kind": MODEL_FILE_KIND,
            "format_version": MODEL_FORMAT_VERSION,
            "schema": {"version": self.schema_version, "names": list(self.feature_names)},
            "normalization": {"offset": list(self.scaler.offset), "scale": list(self.scaler.scale)},
            "hyperparams": self.params.to_dict(),
            "seed": int(self.seed),
            "training_mse": self.training_mse,
            "trees": [
                {"num_nodes": tree.num_nodes,
                 "nodes": base64.b64encode(tree.to_matrix().tobytes()).decode("ascii")}
                for tree in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ForestModel":
        if data.get("kind") != MODEL_FILE_KIND:
            raise DatasetFormatError(f"Not a model record: kind={data.get('kind')}")
        check_format_version(data.get("format_version"), MODEL_FORMAT_VERSION, "Model file")
        schema = data["schema"]
        if int(schema["version"]) != FEATURE_SCHEMA_VERSION or tuple(schema["names"]) != FEATURE_NAMES:
            raise SchemaMismatchError(ERROR_SCHEMA_MISMATCH.format(
                f"v{FEATURE_SCHEMA_VERSION} {list(FEATURE_NAMES)}", f"v{schema['version']} {schema['names']}"))
        trees = []
        for record in data["trees"]:
            raw = base64.b64decode(record["nodes"])
            matrix = np.frombuffer(raw, dtype="<f8").reshape(int(record["num_nodes"]), 5)
            trees.append(TreeArrays.from_matrix(matrix))
        return cls(
            trees=tuple(trees),
            params=ForestParams(**data["hyperparams"]),
            seed=int(data["seed"]),
            scaler=FeatureScaler(offset=tuple(data["normalization"]["offset"]),
                                 scale=tuple(data["normalization"]["scale"])),
            training_mse=float(data["training_mse"]),
            feature_names=tuple(schema["names"]),
            schema_version=int(schema["version"]),
        )


def mean_squared_error(model: ForestModel, data: RegressionDataset) -> float:
    if len(data) == 0:
        return 0.0
    residual = model.predict_batch(data.features()) - data.targets()
    w = data.weights()
    return float(np.sum(w * residual * residual) / np.sum(w))


def fit(data: RegressionDataset, params: ForestParams = ForestParams(), seed: int = 0,
        scaler: Optional[FeatureScaler] = None, threads: int = 1) -> ForestModel:
    """
    Fit a regression forest; deterministic given (data order, params, seed).

    Raises:
        EmptyDatasetError: If there are fewer than min_samples_leaf examples
        SchemaMismatchError: If the dataset schema differs from the current one
    """
    needed = max(params.min_samples_leaf, 1)
    if len(data) < needed:
        raise EmptyDatasetError(ERROR_EMPTY_DATASET.format(len(data), needed))
    if data.schema_version != FEATURE_SCHEMA_VERSION:
        raise SchemaMismatchError(ERROR_SCHEMA_MISMATCH.format(FEATURE_SCHEMA_VERSION, data.schema_version))

    raw = data.features()
    scaler = scaler or FeatureScaler.fit(raw)
    features = scaler.transform(raw)
    targets = data.targets()
    weights = data.weights()
    n = features.shape[0]

    def grow(index: int) -> TreeArrays:
        rng = child_rng(seed, index)
        if params.bootstrap:
            rows = np.sort(rng.integers(0, n, size=n))
            return build_tree(features[rows], targets[rows], weights[rows], params, rng)
        return build_tree(features, targets, weights, params, rng)

    if threads > 1 and params.num_trees > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            trees = list(pool.map(grow, range(params.num_trees)))
    else:
        trees = [grow(i) for i in range(params.num_trees)]

    model = ForestModel(trees=tuple(trees), params=params, seed=seed, scaler=scaler)
    mse = mean_squared_error(model, data)
    logger.debug(f"Fitted {params.num_trees} trees on {n} examples, training MSE {mse:.6g}")
    return ForestModel(trees=model.trees, params=params, seed=seed, scaler=scaler, training_mse=mse)


def predict(model: ForestModel, x: Union[FeatureVector, np.ndarray]) -> float:
    """
    Raises:
        SchemaMismatchError: If x does not have the model's feature width
    """
    row = x.as_array() if isinstance(x, FeatureVector) else np.asarray(x, dtype=np.float64)
    if row.ndim != 1:
        raise SchemaMismatchError(ERROR_SCHEMA_MISMATCH.format("one feature row", row.shape))
    return float(model.predict_batch(row[None, :])[0])


class LearntPolicy:
    """
    argmax of the imitated value over feasible actions.

    Stationary policies hold one model; non-stationary ones hold one model per timestep.
    """

    def __init__(self, models: Sequence[ForestModel], stationary: bool, horizon: Optional[int] = None,
                 name: str = "learnt"):
        models = tuple(models)
        if not models:
            raise InvalidConfigError("A learnt policy needs at least one model")
        if stationary and len(models) != 1:
            raise InvalidConfigError(f"Stationary policy takes exactly one model, got {len(models)}")
        if not stationary and horizon is not None and len(models) != horizon:
            raise InvalidConfigError(f"Non-stationary policy needs exactly {horizon} models, got {len(models)}")
        self.models = models
        self.stationary = stationary
        self.horizon = horizon if horizon is not None else (None if stationary else len(models))
        self.name = name

    def model_for(self, t: int) -> ForestModel:
        if self.stationary:
            return self.models[0]
        return self.models[min(max(t, 1), len(self.models)) - 1]

    def act(self, episode: Episode) -> int:
        return policy_act(self, episode.belief, episode.visited, episode.feasible(), episode.nodes,
                          episode.spec, episode.sensor, episode.t, cost=episode.state.cost)

    def to_dict(self) -> dict:
        return {
            "kind": POLICY_FILE_KIND,
            "format_version": MODEL_FORMAT_VERSION,
            "stationary": self.stationary,
            "horizon": self.horizon,
            "models": [model.to_dict() for model in self.models],
        }

    @classmethod
    def from_dict(cls, data: dict, name: str = "learnt") -> "LearntPolicy":
        if data.get("kind") != POLICY_FILE_KIND:
            raise DatasetFormatError(f"Not a policy record: kind={data.get('kind')}")
        check_format_version(data.get("format_version"), MODEL_FORMAT_VERSION, "Policy file")
        models = [ForestModel.from_dict(m) for m in data["models"]]
        return cls(models, stationary=bool(data["stationary"]), horizon=data.get("horizon"), name=name)


def policy_act(policy: LearntPolicy, belief: Belief, visited: Sequence[int], feasible: Sequence[int],
               nodes: NodeSet, spec: ProblemSpec, cfg: SensorConfig, t: int, cost: Optional[float] = None) -> int:
    """
    Raises:
        NoFeasibleActionError: If the feasible set is empty
    """
    candidates = np.sort(np.asarray(feasible, dtype=np.int64))
    if candidates.size == 0:
        raise NoFeasibleActionError(ERROR_NO_FEASIBLE_ACTION.format(visited[-1], list(visited), cost or 0.0))
    features = extract_features_batch(belief, visited, candidates, nodes, spec, cfg, cost)
    values = policy.model_for(t).predict_batch(features)
    return int(candidates[int(np.argmax(values))])


def save_policy(policy: LearntPolicy, path: str) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(canonical_json(policy.to_dict()) + "\n", encoding="utf-8")
    logger.info(f"Saved {'stationary' if policy.stationary else 'non-stationary'} policy to {target}")


def load_policy(path: str, name: Optional[str] = None) -> LearntPolicy:
    """
    Raises:
        OSError: If the file cannot be read
        DatasetFormatError: If the file is not a policy file
        SchemaMismatchError: If the feature schema differs
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = json.loads(text)
        return LearntPolicy.from_dict(data, name=name or Path(path).stem)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DatasetFormatError(f"Error in {path}: {e}")
