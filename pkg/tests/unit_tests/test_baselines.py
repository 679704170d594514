import numpy as np
import pytest

from src.baselines import HeuristicPolicy, heuristic_act
from src.belief import Belief
from src.constants import (
    BELIEF_FREE, FEATURE_NAMES, FEATURE_TRANSLATION, HEURISTIC_CLI_NAMES, METRIC_AVERAGE_ENTROPY, METRIC_FEATURES,
    METRIC_REAR_SIDE_VOXEL,
)
from src.exceptions import InvalidConfigError, NoFeasibleActionError
from src.models import ProblemSpec, SensorConfig
from src.policies import Episode
from src.rng import child_rng

from world_builders import blocks_instances, node_set, rear_side_belief


class TestHeuristicPolicy:
    """Test cases for heuristic construction"""

    def test_cli_names_map_to_metrics(self):
        """Test that every CLI name builds the matching metric and keeps its name"""
        for cli_name, metric in HEURISTIC_CLI_NAMES.items():
            policy = HeuristicPolicy.from_cli_name(cli_name, motion_penalty=0.1)
            assert policy.metric == metric
            assert policy.name == cli_name
            assert FEATURE_NAMES[policy.column] == METRIC_FEATURES[metric]

    def test_default_name_is_cli_name(self):
        """Test that a heuristic built from its metric is named after its CLI name"""
        assert HeuristicPolicy(metric=METRIC_REAR_SIDE_VOXEL).name == "rear-side-voxel"

    def test_unknown_heuristic(self):
        """Test that unknown CLI names and metrics are rejected"""
        with pytest.raises(InvalidConfigError, match="Unknown heuristic"):
            HeuristicPolicy.from_cli_name("frontier")
        with pytest.raises(InvalidConfigError, match="Invalid metric"):
            HeuristicPolicy(metric="Frontier")

    def test_negative_motion_penalty(self):
        """Test that a negative motion penalty is rejected"""
        with pytest.raises(InvalidConfigError, match="motion penalty"):
            HeuristicPolicy(metric=METRIC_AVERAGE_ENTROPY, motion_penalty=-0.1)

    def test_scores_subtract_penalized_translation(self):
        """Test that scores are the metric column minus penalty times translation"""
        policy = HeuristicPolicy(metric=METRIC_AVERAGE_ENTROPY, motion_penalty=0.5)
        features = np.zeros((2, len(FEATURE_NAMES)))
        features[:, policy.column] = [3.0, 4.0]
        features[:, FEATURE_NAMES.index(FEATURE_TRANSLATION)] = [2.0, 6.0]

        assert np.allclose(policy.scores(features), [2.0, 1.0])


class TestHeuristicAct:
    """Test cases for heuristic action selection"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.cfg = SensorConfig(num_rays=360, max_range=8.0)
        self.spec = ProblemSpec.unconstrained(10)

    def test_known_belief_falls_back_to_lowest_id(self):
        """Test that with nothing left to learn every metric ties and the lowest id wins"""
        belief = Belief(occ=np.full((12, 12), BELIEF_FREE, dtype=np.int8), history=())
        nodes = node_set([(1.5, 1.5, 0.0), (9.5, 9.5, 0.0), (5.5, 2.5, 0.0), (2.5, 8.5, 0.0)])

        for cli_name in HEURISTIC_CLI_NAMES:
            policy = HeuristicPolicy.from_cli_name(cli_name)
            assert heuristic_act(policy, belief, [0], [3, 1, 2], nodes, self.spec, self.cfg) == 1

    def test_motion_penalty_prefers_nearby_nodes(self):
        """Test that a penalty breaks ties toward the closest node"""
        belief = Belief(occ=np.full((12, 12), BELIEF_FREE, dtype=np.int8), history=())
        nodes = node_set([(1.5, 1.5, 0.0), (9.5, 9.5, 0.0), (5.5, 2.5, 0.0), (2.5, 8.5, 0.0)])
        policy = HeuristicPolicy.from_cli_name("average-entropy", motion_penalty=0.1)

        assert heuristic_act(policy, belief, [0], [1, 2, 3], nodes, self.spec, self.cfg) == 2

    def test_rear_side_voxel_picks_node_facing_the_wall(self):
        """Test that the node looking at the front of the wall wins on rear-side voxels"""
        belief = rear_side_belief()
        nodes = node_set([(8.5, 7.5, 0.0), (8.5, 1.5, 0.0), (2.5, 4.5, 0.0)])
        policy = HeuristicPolicy.from_cli_name("rear-side-voxel")

        assert heuristic_act(policy, belief, [0], [1, 2], nodes, self.spec, self.cfg) == 2

    def test_metrics_can_disagree(self):
        """Test that rear-side voxels and average entropy prefer different nodes"""
        belief = rear_side_belief(size=16, unknown_block=(slice(10, 16), slice(8, 16)))
        nodes = node_set([(14.5, 1.5, 0.0), (2.5, 4.5, 0.0), (11.5, 8.5, 0.0)])
        rear = HeuristicPolicy.from_cli_name("rear-side-voxel")
        entropy = HeuristicPolicy.from_cli_name("average-entropy")

        assert heuristic_act(rear, belief, [0], [1, 2], nodes, self.spec, self.cfg) == 1
        assert heuristic_act(entropy, belief, [0], [1, 2], nodes, self.spec, self.cfg) == 2

    def test_candidate_order_does_not_matter(self):
        """Test that shuffling the feasible list gives the same choice"""
        belief = rear_side_belief(size=16, unknown_block=(slice(10, 16), slice(8, 16)))
        nodes = node_set([(14.5, 1.5, 0.0), (2.5, 4.5, 0.0), (11.5, 8.5, 0.0)])
        policy = HeuristicPolicy.from_cli_name("occlusion-aware")

        first = heuristic_act(policy, belief, [0], [1, 2], nodes, self.spec, self.cfg)
        second = heuristic_act(policy, belief, [0], [2, 1], nodes, self.spec, self.cfg)

        assert first == second

    def test_empty_feasible_set(self):
        """Test that an empty feasible set raises"""
        policy = HeuristicPolicy.from_cli_name("unknown-count")

        with pytest.raises(NoFeasibleActionError):
            heuristic_act(policy, Belief.empty((5, 5)), [0], [], node_set([(2.5, 2.5, 0.0)]), self.spec, self.cfg)

    def test_budgeted_rollouts_stay_feasible(self):
        """Test that heuristics only pick feasible nodes under a tight budget"""
        spec = ProblemSpec.budgeted(12, 25.0)
        for instance in blocks_instances(count=2, seed=8, num_nodes=30):
            for cli_name in HEURISTIC_CLI_NAMES:
                policy = HeuristicPolicy.from_cli_name(cli_name, motion_penalty=0.05)
                episode = Episode(instance, spec, child_rng(1))
                while episode.t <= spec.horizon and episode.feasible().size:
                    action = policy.act(episode)
                    assert action in set(episode.feasible().tolist())
                    episode.advance(action)
                assert episode.state.cost <= 25.0 + 1e-9
