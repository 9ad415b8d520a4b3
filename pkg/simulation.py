"""Agent-based ecosystem simulation: visits, ranked feeds, feedback and creation."""
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, FrozenSet, List, Mapping, Optional, Tuple

import numpy as np
from scipy.special import expit

from config import EcosystemConfig
from ecosystem import (FEEDBACK_ACTION_PROBS, EventKind, EventLog, EventLogBuilder, Population, SocialGraph,
                       assign_population, create_probs, generate_graph, population_arrays)
from errors import ConfigurationError, DegenerateDataError
from logger import setup_logger
from ranking import (ConstantEngagement, EngagementEstimator, FeedItem, FeedRanker, InteractionHistory, PolicyKind,
                     RandomEngagement, RankingPolicy, engagement_matrix, fit_engagement_models)

logger = setup_logger()

_ACTIONS = [action.value for action in FEEDBACK_ACTION_PROBS]
_ACTION_CDF = np.cumsum(list(FEEDBACK_ACTION_PROBS.values()))


def child_seeds(seed: int, n: int) -> List[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


@dataclass
class World:
    """Static part of a simulated ecosystem: graph, population and pairwise affinities."""

    config: EcosystemConfig
    graph: SocialGraph
    population: Population
    affinity: Dict[Tuple[int, int], float] = field(repr=False)
    seed: int = 0

    @property
    def n_users(self) -> int:
        return self.graph.n_users


def generate_world(cfg: EcosystemConfig, seed: int) -> World:
    graph_seed, population_seed, affinity_seed = child_seeds(seed, 3)
    graph = generate_graph(cfg.n_users, cfg.mean_degree, cfg.rewire_prob, graph_seed)
    population = assign_population(graph, cfg.cohort_mix, cfg.behavior, population_seed,
                                   cfg.contribution_mix, cfg.n_locales)
    edges = graph.edges
    draws = np.random.default_rng(affinity_seed).normal(cfg.affinity_mean, cfg.affinity_sd, len(edges))
    affinity = {edge: float(value) for edge, value in zip(edges, draws)}
    return World(config=cfg, graph=graph, population=population, affinity=affinity, seed=seed)


@dataclass(frozen=True)
class EffectInjection:
    """
    Known treatment effect: treated consumers' feedback probability is multiplied
    toward creators that respond to feedback (gain > 0), capped at 1.
    """

    multiplier: float
    consumers: FrozenSet[int]
    creators: Optional[FrozenSet[int]] = None

    def __post_init__(self):
        if self.multiplier < 0:
            raise ConfigurationError(f"Effect multiplier must be >= 0, got {self.multiplier}")

    def factor(self, consumer: int, creator: int, gain: float) -> float:
        if consumer not in self.consumers or gain <= 0:
            return 1.0
        if self.creators is not None and creator not in self.creators:
            return 1.0
        return self.multiplier


@dataclass
class _Item:
    creator: int
    created: int
    quality: float


class SimulationState:
    """Mutable simulation state; advanced in place by step_simulation."""

    def __init__(self, world: World, engagement: EngagementEstimator, expected_window: int = 14,
                 horizon: int = 7, record_impressions: bool = False):
        if expected_window <= 0 or horizon <= 0:
            raise ConfigurationError("expected_window and horizon must be positive")
        cfg = world.config
        self.world = world
        self.engagement = engagement
        self.expected_window = expected_window
        self.horizon = horizon
        self.tick = 0
        self.next_item_id = 0
        self.items: Dict[int, _Item] = {}
        self.live: Dict[int, List[int]] = {}
        self.history = InteractionHistory()
        self.received: Deque[np.ndarray] = deque(maxlen=max(expected_window, cfg.feedback_memory))

        arrays = population_arrays(world.population)
        self.base, self.gain, self.rho = arrays["base"], arrays["gain"], arrays["rho"]
        try:
            self.visit_prob = np.array([cfg.visit_prob[level] for level in arrays["activity"]])
        except KeyError as e:
            raise ConfigurationError(f"No visit probability for activity level {e}") from e
        self.followees = [world.graph.followees(user) for user in range(world.n_users)]

        self.record_impressions = record_impressions
        self.trace: List[Tuple[float, int, int, int, int, int]] = []

    def expected_feedback(self) -> np.ndarray:
        """Trailing-window feedback received per user, scaled to the horizon."""
        recent = list(self.received)[-self.expected_window:]
        total = np.sum(recent, axis=0) if recent else np.zeros(self.world.n_users)
        return total * self.horizon / self.expected_window

    def recent_feedback(self, current: np.ndarray) -> np.ndarray:
        memory = self.world.config.feedback_memory
        earlier = list(self.received)[-(memory - 1):] if memory > 1 else []
        return current + (np.sum(earlier, axis=0) if earlier else 0)

    def candidates(self, consumer: int) -> List[FeedItem]:
        items = []
        for creator in self.followees[consumer]:
            for item_id in self.live.get(creator, ()):
                item = self.items[item_id]
                items.append(FeedItem(item_id, creator, self.tick - item.created, item.quality))
        return items

    def engagement_data(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Design matrix and (engaged, feedback) labels of every recorded impression."""
        if not self.trace:
            return np.zeros((0, 5)), np.zeros(0), np.zeros(0)
        rows = np.array(self.trace, dtype=float)
        items = [FeedItem(0, 0, int(age), quality) for quality, age in rows[:, :2]]
        X = engagement_matrix(items, rows[:, 2], rows[:, 3])
        return X, rows[:, 4], rows[:, 5]


def _run_tick(state: SimulationState, policy: RankingPolicy, overrides: Mapping[int, RankingPolicy],
              injection: Optional[EffectInjection], rng: np.random.Generator, builder: EventLogBuilder) -> None:
    cfg = state.world.config
    t = state.tick
    n = state.world.n_users
    ranker = FeedRanker(state.engagement, state.expected_feedback(), state.history)
    received = np.zeros(n)
    messages = []

    for consumer in np.flatnonzero(rng.random(n) < state.visit_prob):
        consumer = int(consumer)
        builder.add(t, EventKind.SESSION, consumer)
        candidates = state.candidates(consumer)
        ranked = ranker.rank(consumer, candidates, overrides.get(consumer, policy))
        for position, scored in enumerate(ranked[:cfg.slate_size]):
            item = scored.item
            creator = item.creator_id
            builder.add(t, EventKind.IMPRESSION, consumer, creator, item.item_id)
            prior_feedback = state.history.feedback.get((consumer, creator), 0)
            prior_impressions = state.history.impressions.get((consumer, creator), 0)
            state.history.record_impression(consumer, creator)

            clicked = gave_feedback = False
            if rng.random() < cfg.position_decay ** position:
                affinity = state.world.affinity.get((consumer, creator), cfg.affinity_mean)
                clicked = rng.random() < expit(affinity + item.quality + cfg.click_shift)
                p_feedback = expit(affinity + item.quality)
                if injection is not None:
                    p_feedback = min(1.0, p_feedback * injection.factor(consumer, creator, state.gain[creator]))
                gave_feedback = rng.random() < p_feedback

            if clicked:
                builder.add(t, EventKind.CLICK, consumer, creator, item.item_id)
            if gave_feedback:
                action = _ACTIONS[int(np.searchsorted(_ACTION_CDF, rng.random() * _ACTION_CDF[-1], side="right"))]
                builder.add(t, EventKind.FEEDBACK, consumer, creator, item.item_id, action)
                received[creator] += 1
                state.history.record_feedback(consumer, creator)
            if state.record_impressions:
                state.trace.append((item.quality, item.age_ticks, prior_feedback, prior_impressions,
                                    int(clicked or gave_feedback), int(gave_feedback)))

        if rng.random() < cfg.message_prob and state.followees[consumer]:
            followees = state.followees[consumer]
            messages.append((consumer, followees[int(rng.integers(len(followees)))]))

    probs = create_probs(state.base, state.gain, state.rho, state.recent_feedback(received))
    for creator in np.flatnonzero(rng.random(n) < probs):
        creator = int(creator)
        item_id = state.next_item_id
        state.next_item_id += 1
        state.items[item_id] = _Item(creator, t, float(rng.normal(0.0, cfg.quality_sd)))
        state.live.setdefault(creator, []).append(item_id)
        builder.add(t, EventKind.CREATE, creator, item=item_id)

    for sender, target in messages:
        builder.add(t, EventKind.MESSAGE, sender, target)

    state.received.append(received)
    state.tick += 1
    # items stay visible for item_lifetime ticks after creation
    oldest = state.tick - cfg.item_lifetime
    for creator in list(state.live):
        kept = [i for i in state.live[creator] if state.items[i].created >= oldest]
        if kept:
            state.live[creator] = kept
        else:
            del state.live[creator]


def step_simulation(state: SimulationState, policy: RankingPolicy, ticks: int, seed: int,
                    overrides: Optional[Mapping[int, RankingPolicy]] = None,
                    injection: Optional[EffectInjection] = None) -> EventLog:
    """
    Advance the simulation by `ticks` ticks.

    Within a tick, each visiting consumer gets a ranked slate of live items
    from the creators they follow; examined items may be clicked or receive
    feedback. Creation is then drawn from the ground-truth response to the
    feedback received over the last feedback_memory ticks.

    Args:
        policy: ranking policy for every consumer not in overrides
        overrides: per-consumer policies, used by experiments
        injection: optional known effect on treated consumers' feedback

    Returns:
        EventLog of the simulated ticks; identical for identical inputs

    Raises:
        ConfigurationError: unknown policy or negative tick count
    """
    overrides = overrides or {}
    for candidate in (policy, *overrides.values()):
        if not isinstance(candidate, RankingPolicy) or not isinstance(candidate.kind, PolicyKind):
            raise ConfigurationError(f"Unknown ranking policy: {candidate!r}")
    if ticks < 0:
        raise ConfigurationError(f"ticks must be >= 0, got {ticks}")

    rng = np.random.default_rng(seed)
    builder = EventLogBuilder()
    for _ in range(ticks):
        _run_tick(state, policy, overrides, injection, rng, builder)
    log = builder.build(n_ticks=state.tick, seed=seed)
    logger.debug(f"Simulated {ticks} ticks under {policy.name}: {len(log)} events")
    return log


class Simulator:
    """A world plus the engagement estimates used to rank its feeds."""

    def __init__(self, world: World, engagement: EngagementEstimator, expected_window: int = 14, horizon: int = 7):
        self.world = world
        self.engagement = engagement
        self.expected_window = expected_window
        self.horizon = horizon

    @classmethod
    def warmed_up(cls, world: World, seed: int, expected_window: int = 14, horizon: int = 7) -> "Simulator":
        """Fit engagement models on a randomized warm-up run of the same world."""
        engagement = train_engagement(world, seed, world.config.warmup_ticks)
        return cls(world, engagement, expected_window, horizon)

    def new_state(self, record_impressions: bool = False) -> SimulationState:
        return SimulationState(self.world, self.engagement, self.expected_window, self.horizon, record_impressions)

    def run(self, policy: RankingPolicy, ticks: int, seed: int,
            overrides: Optional[Mapping[int, RankingPolicy]] = None,
            injection: Optional[EffectInjection] = None) -> EventLog:
        """Simulate from an empty feed state."""
        return step_simulation(self.new_state(), policy, ticks, seed, overrides, injection)


def train_engagement(world: World, seed: int, ticks: int) -> EngagementEstimator:
    """
    Run a randomized-feed warm-up and fit ConsumerUtility and pFeedback on it.

    Falls back to constant base rates when the warm-up is too small to fit.
    """
    explore_seed, run_seed, fit_seed = child_seeds(seed, 3)
    state = SimulationState(world, RandomEngagement(explore_seed), record_impressions=True)
    step_simulation(state, RankingPolicy(PolicyKind.CONSUMER_ONLY), ticks, run_seed)
    X, engaged, gave_feedback = state.engagement_data()
    try:
        models = fit_engagement_models(X, engaged, gave_feedback, fit_seed)
    except DegenerateDataError as e:
        consumer_utility = float(engaged.mean()) if engaged.size else 0.5
        p_feedback = float(gave_feedback.mean()) if gave_feedback.size else 0.1
        logger.warning(f"Using constant engagement estimates ({e})")
        return ConstantEngagement(consumer_utility, p_feedback)
    logger.info(f"Fitted engagement models on {X.shape[0]} warm-up impressions")
    return models


def build_simulator(cfg: EcosystemConfig, seed: int, expected_window: int = 14, horizon: int = 7) -> Simulator:
    """Generate the world for a seed and warm up its engagement models."""
    world_seed, warmup_seed = child_seeds(seed, 2)
    world = generate_world(cfg, world_seed)
    logger.info(f"Generated world: {cfg.n_users} users, {world.graph.digraph.number_of_edges()} follows")
    return Simulator.warmed_up(world, warmup_seed, expected_window, horizon)
