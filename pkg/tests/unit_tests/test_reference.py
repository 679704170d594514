import numpy as np
import pytest

from src.belief import Belief, belief_update
from src.constants import GREEDY_RATIO, LEMMA_TOLERANCE, ORACLE_GREEDY
from src.exceptions import InstanceTooLargeError, NoConsistentWorldError
from src.models import WorldMap, Measurement, ProblemSpec, SensorConfig
from src.oracles import q_value_to_go
from src.policies import ClairvoyantPolicy, Episode
from src.reference import (
    HallucinatingPolicy, TinyEnsemble, adaptive_greedy_act, brute_force_path, deterministic_rollin, exact_posterior,
    hallucinating_act, hallucinating_greedy_value, lemma1_check, make_tiny_ensemble, optimal_adaptive_value,
    policy_value, uniform_rollin,
)
from src.utility import CoverageState, feasible_actions

from world_builders import node_set


def four_world_ensemble():
    """
    Four 12x12 worlds sharing an obstacle at (3, 6) and differing in one extra cell.

    The start node sees the extras of worlds 2 and 3 but not those of worlds 0
    and 1; node 1 sits next to world 0's extra and node 2 next to world 1's.
    """
    extras = [(11, 0), (0, 11), (6, 9), (9, 6)]
    worlds = []
    for extra in extras:
        grid = np.zeros((12, 12), dtype=bool)
        grid[3, 6] = True
        grid[extra] = True
        worlds.append(WorldMap(occupied=grid))
    nodes = node_set([(6.5, 6.5, 0.0), (1.5, 10.5, 0.0), (10.5, 1.5, 0.0)])
    return TinyEnsemble(worlds=tuple(worlds), nodes=nodes, cfg=SensorConfig(num_rays=32, max_range=6.0))


class TestBruteForce:
    """Test cases for exhaustive path search"""

    def test_long_horizon_covers_everything(self):
        """Test that a horizon long enough to visit every node reaches full coverage"""
        for seed in range(5):
            ensemble = make_tiny_ensemble(seed, num_worlds=1, num_nodes=4)

            best = brute_force_path(ensemble.worlds[0], ensemble.nodes, ProblemSpec.unconstrained(4),
                                    instance=ensemble.instances[0])

            assert best.utility == 1.0

    def test_beats_every_greedy_path(self):
        """Test that the optimum is never below the greedy path"""
        for seed in range(5):
            ensemble = make_tiny_ensemble(seed, num_worlds=1, num_nodes=7)
            instance = ensemble.instances[0]
            spec = ProblemSpec.unconstrained(3)
            state = CoverageState.start(instance)
            for _ in range(3):
                feasible = feasible_actions(state, spec)
                state.apply(int(feasible[int(np.argmax(instance.gain_counts(state.covered, feasible)))]))

            best = brute_force_path(ensemble.worlds[0], ensemble.nodes, spec, instance=instance)

            assert best.count >= state.covered_count
            assert best.path[0] == ensemble.nodes.start_id

    def test_too_large(self):
        """Test that instances past the enumeration limits are refused"""
        ensemble = make_tiny_ensemble(0, num_worlds=1, num_nodes=11)

        with pytest.raises(InstanceTooLargeError):
            brute_force_path(ensemble.worlds[0], ensemble.nodes, ProblemSpec.unconstrained(2))
        small = make_tiny_ensemble(0, num_worlds=1, num_nodes=5)
        with pytest.raises(InstanceTooLargeError):
            brute_force_path(small.worlds[0], small.nodes, ProblemSpec.unconstrained(5))


class TestPosterior:
    """Test cases for the exact posterior over an explicit ensemble"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.ensemble = four_world_ensemble()

    def test_start_observation_splits_the_ensemble(self):
        """Test that worlds 0 and 1 look alike from the start and 2, 3 are identified"""
        assert np.array_equal(exact_posterior(self.ensemble, self.ensemble.start_belief(0)), [0.5, 0.5, 0.0, 0.0])
        assert np.array_equal(exact_posterior(self.ensemble, self.ensemble.start_belief(1)), [0.5, 0.5, 0.0, 0.0])
        assert np.array_equal(exact_posterior(self.ensemble, self.ensemble.start_belief(2)), [0.0, 0.0, 1.0, 0.0])
        assert np.array_equal(exact_posterior(self.ensemble, self.ensemble.start_belief(3)), [0.0, 0.0, 0.0, 1.0])

    def test_informative_node_collapses_the_posterior(self):
        """Test that visiting node 1 tells worlds 0 and 1 apart"""
        belief = belief_update(self.ensemble.start_belief(0), 1, self.ensemble.measurement(0, 1))

        assert np.array_equal(exact_posterior(self.ensemble, belief), [1.0, 0.0, 0.0, 0.0])

    def test_empty_history_is_the_prior(self):
        """Test that an empty belief gives the uniform prior"""
        assert np.array_equal(exact_posterior(self.ensemble, Belief.empty((12, 12))), self.ensemble.prior)

    def test_foreign_history(self):
        """Test that a history no world reproduces is rejected"""
        fake = Measurement(node_id=0, hit_cells=frozenset({0}), free_cells=frozenset(), ranges=(1.0,))
        belief = belief_update(Belief.empty((12, 12)), 0, fake)

        with pytest.raises(NoConsistentWorldError):
            exact_posterior(self.ensemble, belief)


class TestHallucinatingOracle:
    """Test cases for the posterior-expected oracle"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.spec = ProblemSpec.unconstrained(3)

    def test_point_mass_matches_clairvoyant_oracle(self):
        """Test that with one consistent world the oracle acts as if it knew the world"""
        ensemble = four_world_ensemble()
        for world in (2, 3):
            episode = Episode(ensemble.instances[world], self.spec)

            expected = ClairvoyantPolicy(ORACLE_GREEDY).act(episode)
            values = [q_value_to_go(ORACLE_GREEDY, episode.state, int(a), 3, self.spec) for a in episode.feasible()]
            chosen = hallucinating_act(ensemble, episode.visited, episode.belief, self.spec, steps_remaining=1)

            assert chosen == expected
            assert hallucinating_act(ensemble, episode.visited, episode.belief, self.spec) == \
                int(episode.feasible()[int(np.argmax(values))])

    def test_symmetric_side_nodes_tie_to_lowest_id(self):
        """Test that with worlds 0 and 1 ambiguous both side nodes have equal expected gain"""
        ensemble = four_world_ensemble()
        belief = ensemble.start_belief(0)

        one_step = [sum(0.5 * ensemble.state(w, [0]).gain_count(a) / ensemble.instances[w].denominator
                        for w in (0, 1)) for a in (1, 2)]

        assert one_step[0] == pytest.approx(one_step[1])
        assert hallucinating_act(ensemble, [0], belief, self.spec, steps_remaining=1) == 1

    def test_one_step_equals_adaptive_greedy(self):
        """Test that the one-step hallucinating oracle is adaptive greedy"""
        for seed in range(10):
            ensemble = make_tiny_ensemble(seed, num_worlds=4, num_nodes=6)
            for world in range(len(ensemble)):
                visited = [ensemble.nodes.start_id]
                belief = ensemble.start_belief(world)
                for _ in range(3):
                    action = hallucinating_act(ensemble, visited, belief, self.spec, steps_remaining=1)
                    assert action == adaptive_greedy_act(ensemble, visited, belief, self.spec)
                    visited.append(action)
                    belief = belief_update(belief, action, ensemble.measurement(world, action))

    def test_matches_direct_enumeration(self):
        """Test the argmax against expected values summed world by world"""
        for seed in range(5):
            ensemble = make_tiny_ensemble(seed, num_worlds=3, num_nodes=6)
            belief = ensemble.start_belief(0)
            posterior = exact_posterior(ensemble, belief)
            feasible = feasible_actions(ensemble.state(0, [0]), self.spec)
            values = [sum(posterior[w] * q_value_to_go(ORACLE_GREEDY, ensemble.state(w, [0]), int(a), 3, self.spec)
                          for w in range(len(ensemble)) if posterior[w] > 0) for a in feasible]
            best = max(values)
            expected = int(feasible[[i for i, v in enumerate(values) if v >= best - 1e-12][0]])

            assert hallucinating_act(ensemble, [0], belief, self.spec) == expected

    def test_policy_rollout_matches_policy_value(self):
        """Test that running the one-step policy through episodes reproduces its expected value"""
        ensemble = make_tiny_ensemble(3, num_worlds=4, num_nodes=6)
        policy = HallucinatingPolicy(ensemble, one_step=True)

        total = 0.0
        for world in range(len(ensemble)):
            episode = Episode(ensemble.instances[world], self.spec)
            gathered = 0.0
            while episode.t <= self.spec.horizon and episode.feasible().size:
                gathered += episode.advance(policy.act(episode))
            total += gathered / len(ensemble)

        assert total == pytest.approx(hallucinating_greedy_value(ensemble, self.spec))


class TestLemmaChecks:
    """Test cases for the exhaustive value identities and bounds"""

    def test_single_world_has_no_gap(self):
        """Test that a one-world ensemble gives identical sides"""
        ensemble = make_tiny_ensemble(4, num_worlds=1, num_nodes=6)
        spec = ProblemSpec.unconstrained(3)

        for t in range(1, 4):
            for action in range(6):
                assert lemma1_check(ensemble, uniform_rollin, t, action, spec).gap == 0.0

    def test_posterior_expectation_identity(self):
        """Test both roll-ins on random ensembles"""
        spec = ProblemSpec.unconstrained(2)
        for seed in range(5):
            ensemble = make_tiny_ensemble(seed, num_worlds=4, num_nodes=6)
            greedy_rollin = deterministic_rollin(
                lambda belief, visited, feasible, e=ensemble: adaptive_greedy_act(e, visited, belief, spec))
            for rollin in (greedy_rollin, uniform_rollin):
                for t in (1, 2):
                    for action in range(6):
                        check = lemma1_check(ensemble, rollin, t, action, spec)
                        assert check.gap <= LEMMA_TOLERANCE

    def test_identical_worlds_reduce_to_path_search(self):
        """Test that without uncertainty the optimal adaptive value is the best path"""
        base = make_tiny_ensemble(6, num_worlds=1, num_nodes=6)
        ensemble = TinyEnsemble(worlds=(base.worlds[0], base.worlds[0]), nodes=base.nodes, cfg=base.cfg)
        spec = ProblemSpec.unconstrained(3)

        best = brute_force_path(base.worlds[0], base.nodes, spec, instance=base.instances[0])

        assert optimal_adaptive_value(ensemble, spec) == pytest.approx(best.action_value)

    def test_zero_horizon(self):
        """Test that no actions gather nothing"""
        ensemble = make_tiny_ensemble(1, num_worlds=3, num_nodes=5)

        assert optimal_adaptive_value(ensemble, ProblemSpec.unconstrained(2), horizon=0) == 0.0

    def test_greedy_reaches_the_approximation_bound(self):
        """Test that hallucinating greedy reaches (1 - 1/e) of the optimal adaptive value"""
        for seed in range(8):
            ensemble = make_tiny_ensemble(seed, num_worlds=3, num_nodes=6)
            spec = ProblemSpec.unconstrained(2)

            optimal = optimal_adaptive_value(ensemble, spec)
            greedy = hallucinating_greedy_value(ensemble, spec)

            assert greedy >= GREEDY_RATIO * optimal - LEMMA_TOLERANCE
            assert greedy <= optimal + LEMMA_TOLERANCE

    def test_optimal_dominates_any_policy(self):
        """Test that the optimal adaptive value bounds a fixed open-loop path"""
        ensemble = make_tiny_ensemble(2, num_worlds=3, num_nodes=6)
        spec = ProblemSpec.unconstrained(2)

        fixed = policy_value(ensemble, spec, lambda w, visited, belief: [v for v in range(6) if v not in visited][0])

        assert fixed <= optimal_adaptive_value(ensemble, spec) + LEMMA_TOLERANCE

    def test_adaptive_search_size_limit(self):
        """Test that ensembles beyond the adaptive limits are refused"""
        ensemble = make_tiny_ensemble(0, num_worlds=2, num_nodes=9)

        with pytest.raises(InstanceTooLargeError):
            optimal_adaptive_value(ensemble, ProblemSpec.unconstrained(2))
        with pytest.raises(InstanceTooLargeError):
            optimal_adaptive_value(make_tiny_ensemble(0, num_worlds=2, num_nodes=5), ProblemSpec.unconstrained(4))
