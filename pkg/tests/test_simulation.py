import numpy as np
import pandas as pd
import pytest

from conftest import small_ecosystem
from ecosystem import EventKind, validate_event_log
from errors import ConfigurationError
from ranking import ConstantEngagement, EngagementModels, FeedItem, InteractionHistory, PolicyKind, RankingPolicy, \
    expected_feedback_all
from simulation import EffectInjection, Simulator, child_seeds, generate_world, step_simulation, train_engagement

CONSUMER_ONLY = RankingPolicy(PolicyKind.CONSUMER_ONLY)


def test_child_seeds_are_stable_and_distinct():
    assert child_seeds(5, 4) == child_seeds(5, 4)
    assert len(set(child_seeds(5, 4))) == 4
    assert child_seeds(5, 2) != child_seeds(6, 2)


def test_world_generation_is_deterministic(ecosystem_cfg, world):
    again = generate_world(ecosystem_cfg, seed=7)
    assert again.graph.edges == world.graph.edges
    assert again.affinity == world.affinity
    assert [b for _, b in again.population] == [b for _, b in world.population]
    assert set(world.affinity) == set(world.graph.edges)


def test_same_seed_same_log(simulator, sim_log, ecosystem_cfg):
    again = simulator.run(CONSUMER_ONLY, ecosystem_cfg.n_ticks, seed=11)
    pd.testing.assert_frame_equal(again.frame, sim_log.frame)
    other = simulator.run(CONSUMER_ONLY, ecosystem_cfg.n_ticks, seed=12)
    assert not other.frame.equals(sim_log.frame)


def test_zero_ticks_is_empty(simulator):
    log = simulator.run(CONSUMER_ONLY, 0, seed=1)
    assert len(log) == 0
    assert log.n_ticks == 0


def test_rejects_unknown_policy_and_negative_ticks(simulator):
    with pytest.raises(ConfigurationError):
        simulator.run("ConsumerOnly", 3, seed=1)
    with pytest.raises(ConfigurationError):
        simulator.run(CONSUMER_ONLY, 3, seed=1, overrides={0: "Heuristic"})
    with pytest.raises(ConfigurationError):
        simulator.run(CONSUMER_ONLY, -1, seed=1)


def test_log_satisfies_event_invariants(sim_log):
    assert validate_event_log(sim_log) == []
    assert len(sim_log.of_kind(EventKind.CREATE)) > 0
    assert len(sim_log.of_kind(EventKind.FEEDBACK)) > 0


def test_feedback_goes_to_item_creator(sim_log):
    creators = dict(zip(sim_log.of_kind(EventKind.CREATE)["item"], sim_log.of_kind(EventKind.CREATE)["actor"]))
    for kind in (EventKind.IMPRESSION, EventKind.CLICK, EventKind.FEEDBACK):
        rows = sim_log.of_kind(kind)
        assert all(creators[item] == target for item, target in zip(rows["item"], rows["target"]))


def test_impressions_follow_graph_slates_and_lifetime(sim_log, world, ecosystem_cfg):
    follows = set(world.graph.edges)
    impressions = sim_log.of_kind(EventKind.IMPRESSION)
    assert all((a, t) in follows for a, t in zip(impressions["actor"], impressions["target"]))
    assert impressions.groupby(["tick", "actor"]).size().max() <= ecosystem_cfg.slate_size

    created_at = dict(zip(sim_log.of_kind(EventKind.CREATE)["item"], sim_log.of_kind(EventKind.CREATE)["tick"]))
    ages = impressions["tick"] - impressions["item"].map(created_at)
    assert ages.between(1, ecosystem_cfg.item_lifetime).all()


def test_sessions_precede_impressions(sim_log):
    sessions = set(zip(sim_log.of_kind(EventKind.SESSION)["tick"], sim_log.of_kind(EventKind.SESSION)["actor"]))
    impressions = sim_log.of_kind(EventKind.IMPRESSION)
    assert set(zip(impressions["tick"], impressions["actor"])) <= sessions


def test_no_creation_without_base_rate():
    behavior = {level: {"base": [-1e9, -1e9], "gain": [1.0, 1.0], "rho": [0.3, 0.3]}
                for level in ("Daily", "Weekly", "Monthly", "Inactive")}
    world = generate_world(small_ecosystem(behavior=behavior), seed=2)
    log = Simulator(world, ConstantEngagement()).run(CONSUMER_ONLY, 10, seed=3)
    assert len(log.of_kind(EventKind.CREATE)) == 0
    assert len(log.of_kind(EventKind.IMPRESSION)) == 0
    assert len(log.of_kind(EventKind.SESSION)) > 0


def test_state_continues_across_calls(simulator):
    state = simulator.new_state()
    first = step_simulation(state, CONSUMER_ONLY, 10, seed=11)
    second = step_simulation(state, CONSUMER_ONLY, 5, seed=4)
    assert first.n_ticks == 10 and second.n_ticks == 15
    assert second.frame["tick"].min() >= 10
    assert state.tick == 15


def test_state_expected_feedback_matches_log(simulator, world):
    state = simulator.new_state()
    log = step_simulation(state, CONSUMER_ONLY, 21, seed=11)
    expected = expected_feedback_all(log, world.n_users, simulator.expected_window, simulator.horizon)
    assert state.expected_feedback() == pytest.approx(expected)


def test_zero_multiplier_injection_removes_feedback(simulator, world):
    everyone = frozenset(range(world.n_users))
    log = simulator.run(CONSUMER_ONLY, 14, seed=11, injection=EffectInjection(0.0, everyone))
    assert len(log.of_kind(EventKind.FEEDBACK)) == 0
    assert len(log.of_kind(EventKind.IMPRESSION)) > 0


def test_injection_factor():
    injection = EffectInjection(2.0, frozenset({1}), creators=frozenset({5}))
    assert injection.factor(1, 5, gain=0.5) == 2.0
    assert injection.factor(1, 5, gain=0.0) == 1.0
    assert injection.factor(2, 5, gain=0.5) == 1.0
    assert injection.factor(1, 6, gain=0.5) == 1.0
    with pytest.raises(ConfigurationError):
        EffectInjection(-1.0, frozenset())


def test_empty_warmup_falls_back_to_constant_engagement(world):
    engagement = train_engagement(world, seed=1, ticks=0)
    assert engagement == ConstantEngagement(0.5, 0.1)


def test_warmed_up_simulator_estimates_probabilities(world):
    simulator = Simulator.warmed_up(world, seed=5)
    assert isinstance(simulator.engagement, (EngagementModels, ConstantEngagement))
    items = [FeedItem(0, 1, 1, 0.3), FeedItem(1, 2, 2, -0.4)]
    consumer_utility, p_feedback = simulator.engagement.estimate(0, items, InteractionHistory())
    assert np.all((consumer_utility >= 0) & (consumer_utility <= 1))
    assert np.all((p_feedback >= 0) & (p_feedback <= 1))
