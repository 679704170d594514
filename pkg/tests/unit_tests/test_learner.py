import base64
import json

import numpy as np
import pytest

from src.belief import Belief
from src.constants import BELIEF_FREE, FEATURE_NAMES, FEATURE_TRANSLATION
from src.exceptions import DatasetFormatError, EmptyDatasetError, FormatVersionError, InvalidConfigError, SchemaMismatchError
from src.learner import (
    LEAF, FeatureScaler, ForestModel, ForestParams, LearntPolicy, RegressionDataset, RegressionExample, TreeArrays,
    fit, load_policy, mean_squared_error, policy_act, predict, save_policy,
)
from src.models import ProblemSpec, SensorConfig
from src.rng import child_rng

from world_builders import node_set

WIDTH = len(FEATURE_NAMES)
TRANSLATION = FEATURE_NAMES.index(FEATURE_TRANSLATION)


def make_dataset(features, targets):
    data = RegressionDataset()
    data.extend([RegressionExample(features=np.asarray(f, dtype=np.float64), target=float(y), t=1)
                 for f, y in zip(features, targets)])
    return data


def stump(feature, threshold, low, high):
    """One split: rows with x[feature] <= threshold get `low`, the rest `high`."""
    return TreeArrays(
        feature=np.array([feature, LEAF, LEAF]),
        threshold=np.array([threshold, 0.0, 0.0]),
        left=np.array([1, LEAF, LEAF]),
        right=np.array([2, LEAF, LEAF]),
        value=np.array([0.0, low, high]),
    )


def constant_tree(value):
    return TreeArrays(feature=np.array([LEAF]), threshold=np.array([0.0]), left=np.array([LEAF]),
                      right=np.array([LEAF]), value=np.array([value]))


def hand_model(*trees):
    return ForestModel(trees=tuple(trees), params=ForestParams(num_trees=len(trees)), seed=0,
                       scaler=FeatureScaler.identity())


class TestFit:
    """Test cases for fitting the regression forest"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        rng = child_rng(21)
        self.features = rng.random((200, WIDTH))
        self.targets = np.where(self.features[:, 0] > 0.5, 1.0, 0.0) + 0.05 * rng.standard_normal(200)
        self.data = make_dataset(self.features, self.targets)
        self.params = ForestParams(num_trees=10, max_depth=6, min_samples_leaf=3)

    def test_constant_target_is_reproduced_exactly(self):
        """Test that a constant target gives that constant everywhere"""
        data = make_dataset(self.features, np.full(200, 0.3))

        model = fit(data, self.params, seed=1)

        assert np.all(model.predict_batch(child_rng(2).random((50, WIDTH))) == 0.3)
        assert model.training_mse == 0.0

    def test_step_function_beats_the_mean(self):
        """Test that the forest explains most of the variance of a step target"""
        model = fit(self.data, self.params, seed=1)

        assert mean_squared_error(model, self.data) < 0.25 * np.var(self.targets)
        assert model.training_mse == pytest.approx(mean_squared_error(model, self.data))

    def test_same_seed_same_model(self):
        """Test that fitting twice with the same seed gives identical predictions"""
        queries = child_rng(3).random((100, WIDTH))

        first = fit(self.data, self.params, seed=5)
        second = fit(self.data, self.params, seed=5)
        threaded = fit(self.data, self.params, seed=5, threads=4)

        assert np.array_equal(first.predict_batch(queries), second.predict_batch(queries))
        assert np.array_equal(first.predict_batch(queries), threaded.predict_batch(queries))

    def test_memorizes_distinct_rows(self):
        """Test that unlimited depth without bootstrap fits every training row exactly"""
        params = ForestParams(num_trees=3, max_depth=None, min_samples_leaf=1, bootstrap=False)

        model = fit(self.data, params, seed=0)

        assert model.training_mse == 0.0
        assert np.array_equal(model.predict_batch(self.features), self.targets)

    def test_predictions_stay_within_target_range(self):
        """Test that leaf means never leave the range of the targets"""
        model = fit(self.data, self.params, seed=1)

        predictions = model.predict_batch(child_rng(4).uniform(-2.0, 3.0, (300, WIDTH)))

        assert predictions.min() >= self.targets.min()
        assert predictions.max() <= self.targets.max()

    def test_tree_order_does_not_change_predictions(self):
        """Test that the forest mean is independent of tree order"""
        model = fit(self.data, self.params, seed=1)
        reversed_model = ForestModel(trees=model.trees[::-1], params=model.params, seed=model.seed,
                                     scaler=model.scaler)
        queries = child_rng(6).random((100, WIDTH))

        assert np.array_equal(model.predict_batch(queries), reversed_model.predict_batch(queries))

    def test_too_few_examples(self):
        """Test that fitting needs at least min_samples_leaf examples"""
        with pytest.raises(EmptyDatasetError):
            fit(RegressionDataset(), self.params)
        with pytest.raises(EmptyDatasetError):
            fit(make_dataset(self.features[:2], self.targets[:2]), self.params)

    def test_schema_mismatch(self):
        """Test that rows of the wrong width and stale schema versions are rejected"""
        with pytest.raises(SchemaMismatchError):
            make_dataset(np.zeros((3, WIDTH - 1)), [0.0, 1.0, 2.0])
        stale = make_dataset(self.features, self.targets)
        stale.schema_version = 0
        with pytest.raises(SchemaMismatchError):
            fit(stale, self.params)

    def test_non_finite_target(self):
        """Test that NaN targets are rejected at the example level"""
        with pytest.raises(InvalidConfigError):
            RegressionExample(features=np.zeros(WIDTH), target=float("nan"), t=1)

    def test_invalid_params(self):
        """Test hyperparameter validation"""
        with pytest.raises(InvalidConfigError):
            ForestParams(num_trees=0)
        with pytest.raises(InvalidConfigError):
            ForestParams(min_samples_leaf=0)
        with pytest.raises(InvalidConfigError):
            ForestParams(feature_subsample=1.5)


class TestPredict:
    """Test cases for single-row prediction and the model file"""

    def test_single_row(self):
        """Test that predict handles one feature row"""
        model = hand_model(stump(0, 0.5, 1.0, 2.0))

        assert predict(model, np.zeros(WIDTH)) == 1.0
        assert predict(model, np.ones(WIDTH)) == 2.0

    def test_wrong_width(self):
        """Test that rows of the wrong width are rejected"""
        model = hand_model(constant_tree(1.0))

        with pytest.raises(SchemaMismatchError):
            predict(model, np.zeros(WIDTH + 1))

    def test_to_dict_round_trip_is_bit_identical(self):
        """Test that serialized models predict exactly the same values"""
        rng = child_rng(8)
        data = make_dataset(rng.random((80, WIDTH)), rng.random(80))
        model = fit(data, ForestParams(num_trees=4, max_depth=5, min_samples_leaf=2), seed=3)

        restored = ForestModel.from_dict(json.loads(json.dumps(model.to_dict())))
        queries = rng.random((50, WIDTH))

        assert np.array_equal(model.predict_batch(queries), restored.predict_batch(queries))
        assert restored.params == model.params

    def test_newer_format_rejected(self):
        """Test that a model from a newer major format version is rejected"""
        record = hand_model(constant_tree(1.0)).to_dict()
        record["format_version"] = "2.0"

        with pytest.raises(FormatVersionError):
            ForestModel.from_dict(record)

    def test_renamed_features_rejected(self):
        """Test that a model with a different feature schema is rejected"""
        record = hand_model(constant_tree(1.0)).to_dict()
        record["schema"]["names"] = list(reversed(FEATURE_NAMES))

        with pytest.raises(SchemaMismatchError):
            ForestModel.from_dict(record)

    def test_tree_matrix_layout(self):
        """Test that each serialized tree is base64 of an N x 5 little-endian float64 node matrix"""
        record = hand_model(stump(TRANSLATION, 2.5, 0.25, 0.75)).to_dict()

        tree = record["trees"][0]
        matrix = np.frombuffer(base64.b64decode(tree["nodes"]), dtype="<f8").reshape(tree["num_nodes"], 5)

        assert tree["num_nodes"] == 3
        assert matrix.tolist() == [
            [float(TRANSLATION), 2.5, 1.0, 2.0, 0.0],
            [-1.0, 0.0, -1.0, -1.0, 0.25],
            [-1.0, 0.0, -1.0, -1.0, 0.75],
        ]
        assert record["kind"] == "igi-forest"
        assert record["schema"]["names"] == list(FEATURE_NAMES)


class TestLearntPolicy:
    """Test cases for acting with learnt models"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.belief = Belief(occ=np.full((12, 12), BELIEF_FREE, dtype=np.int8), history=())
        self.nodes = node_set([(1.5, 1.5, 0.0), (2.5, 1.5, 0.0), (9.5, 9.5, 0.0), (6.5, 2.5, 0.0)])
        self.spec = ProblemSpec.unconstrained(5)
        self.cfg = SensorConfig(num_rays=16, max_range=6.0)

    def act(self, policy, feasible=(1, 2, 3), t=1):
        return policy_act(policy, self.belief, [0], list(feasible), self.nodes, self.spec, self.cfg, t)

    def test_constant_model_picks_lowest_id(self):
        """Test that ties across all candidates go to the lowest id"""
        policy = LearntPolicy([hand_model(constant_tree(0.7))], stationary=True)

        assert self.act(policy, feasible=(3, 2, 1)) == 1

    def test_translation_split_picks_far_node(self):
        """Test that a tree rewarding long moves picks the farthest node"""
        policy = LearntPolicy([hand_model(stump(TRANSLATION, 3.0, 0.0, 1.0))], stationary=True)

        assert self.act(policy, feasible=(1, 3)) == 3
        assert self.act(policy) == 2

    def test_shifting_all_leaves_keeps_the_choice(self):
        """Test that adding a constant to every leaf does not change the argmax"""
        base = hand_model(stump(TRANSLATION, 3.0, 0.2, 0.9), stump(TRANSLATION, 8.0, 0.1, 0.5))
        shifted = hand_model(stump(TRANSLATION, 3.0, 5.2, 5.9), stump(TRANSLATION, 8.0, 5.1, 5.5))

        for feasible in ((1, 2, 3), (1, 3), (1,)):
            assert (self.act(LearntPolicy([base], stationary=True), feasible)
                    == self.act(LearntPolicy([shifted], stationary=True), feasible))

    def test_non_stationary_uses_model_per_timestep(self):
        """Test that each timestep uses its own model and later steps reuse the last"""
        near = hand_model(stump(TRANSLATION, 3.0, 1.0, 0.0))
        far = hand_model(stump(TRANSLATION, 3.0, 0.0, 1.0))
        policy = LearntPolicy([near, far], stationary=False)

        assert policy.horizon == 2
        assert self.act(policy, t=1) == 1
        assert self.act(policy, t=2) == 2
        assert policy.model_for(7) is far

    def test_model_count_validation(self):
        """Test that model counts must match the policy kind"""
        model = hand_model(constant_tree(0.0))

        with pytest.raises(InvalidConfigError):
            LearntPolicy([], stationary=True)
        with pytest.raises(InvalidConfigError):
            LearntPolicy([model, model], stationary=True)
        with pytest.raises(InvalidConfigError):
            LearntPolicy([model, model], stationary=False, horizon=3)

    def test_save_and_load(self, tmp_path):
        """Test that a saved policy loads with identical predictions and takes its name from the file"""
        rng = child_rng(9)
        data = make_dataset(rng.random((60, WIDTH)), rng.random(60))
        models = [fit(data, ForestParams(num_trees=3, max_depth=4, min_samples_leaf=2), seed=s) for s in (1, 2)]
        policy = LearntPolicy(models, stationary=False)
        path = tmp_path / "nested" / "policy.json"

        save_policy(policy, str(path))
        loaded = load_policy(str(path))

        queries = rng.random((40, WIDTH))
        assert loaded.name == "policy"
        assert loaded.stationary is False
        for original, restored in zip(policy.models, loaded.models):
            assert np.array_equal(original.predict_batch(queries), restored.predict_batch(queries))

    def test_saved_bytes_are_deterministic(self, tmp_path):
        """Test that saving the same policy twice writes identical bytes"""
        policy = LearntPolicy([hand_model(stump(TRANSLATION, 3.0, 0.0, 1.0))], stationary=True)

        save_policy(policy, str(tmp_path / "a.json"))
        save_policy(policy, str(tmp_path / "b.json"))

        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_load_rejects_other_files(self, tmp_path):
        """Test that files that are not policies are rejected"""
        garbage = tmp_path / "garbage.json"
        garbage.write_text("{not json")
        model_file = tmp_path / "model.json"
        model_file.write_text(json.dumps(hand_model(constant_tree(0.0)).to_dict()))

        with pytest.raises(DatasetFormatError):
            load_policy(str(garbage))
        with pytest.raises(DatasetFormatError):
            load_policy(str(model_file))
        with pytest.raises(OSError):
            load_policy(str(tmp_path / "missing.json"))
