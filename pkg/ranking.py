"""Feed ranking: engagement estimates, creator-side utilities and the blended score."""
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from ecosystem import EventKind, EventLog
from errors import ConfigurationError, DegenerateDataError
from logger import setup_logger
from models import select_l2
from sensitivity import SensitivityCurve, Snapshot

logger = setup_logger()

ENGAGEMENT_FEATURES = ("quality", "age", "log_prior_feedback", "log_prior_impressions", "has_prior_feedback")
ENGAGEMENT_L2_GRID = (1e-3, 1e-2, 1e-1)
# exp(700) is finite in float64
MAX_LOG_UTILITY = 700.0


class PolicyKind(str, Enum):
    CONSUMER_ONLY = "ConsumerOnly"
    HEURISTIC = "Heuristic"
    PCREATE_DELTA = "PCreateDelta"
    PCREATE_PARAM = "PCreateParam"


def parse_policy_kind(name: Union[str, PolicyKind]) -> PolicyKind:
    try:
        return PolicyKind(name)
    except ValueError as e:
        known = ", ".join(kind.value for kind in PolicyKind)
        raise ConfigurationError(f"Unknown ranking policy '{name}' (expected one of {known})") from e


@dataclass
class RankingPolicy:
    kind: PolicyKind
    alpha: float = 0.5
    snapshot: Optional[Snapshot] = field(default=None, repr=False)

    def __post_init__(self):
        self.kind = parse_policy_kind(self.kind)
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kind in (PolicyKind.PCREATE_DELTA, PolicyKind.PCREATE_PARAM) and self.snapshot is None:
            raise ConfigurationError(f"{self.kind.value} ranking needs a utility snapshot")

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.CONSUMER_ONLY:
            return self.kind.value
        return f"{self.kind.value}(alpha={self.alpha:g})"


@dataclass(frozen=True)
class FeedItem:
    item_id: int
    creator_id: int
    age_ticks: int
    quality: float = 0.0


@dataclass(frozen=True)
class ScoredItem:
    item: FeedItem
    consumer_utility: float
    p_feedback: float
    creator_utility: float
    expected_feedback: float
    final_score: float


class InteractionHistory:
    """Running (consumer, creator) impression and feedback counts."""

    def __init__(self):
        self.impressions: Dict[Tuple[int, int], int] = defaultdict(int)
        self.feedback: Dict[Tuple[int, int], int] = defaultdict(int)

    def record_impression(self, consumer: int, creator: int) -> None:
        self.impressions[(consumer, creator)] += 1

    def record_feedback(self, consumer: int, creator: int) -> None:
        self.feedback[(consumer, creator)] += 1

    def counts(self, consumer: int, creators: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        impressions = np.array([self.impressions.get((consumer, c), 0) for c in creators], dtype=float)
        feedback = np.array([self.feedback.get((consumer, c), 0) for c in creators], dtype=float)
        return feedback, impressions


def engagement_matrix(items: Sequence[FeedItem], prior_feedback: np.ndarray,
                      prior_impressions: np.ndarray) -> np.ndarray:
    return np.column_stack([
        np.array([item.quality for item in items], dtype=float),
        np.array([item.age_ticks for item in items], dtype=float),
        np.log1p(prior_feedback),
        np.log1p(prior_impressions),
        (prior_feedback > 0).astype(float),
    ])


class EngagementEstimator:
    """Produces (ConsumerUtility, pFeedback) for a consumer's candidate items."""

    def estimate(self, consumer: int, items: Sequence[FeedItem],
                 history: InteractionHistory) -> Tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


@dataclass
class ConstantEngagement(EngagementEstimator):
    consumer_utility: float = 0.5
    p_feedback: float = 0.1

    def estimate(self, consumer, items, history):
        n = len(items)
        return np.full(n, self.consumer_utility), np.full(n, self.p_feedback)


class RandomEngagement(EngagementEstimator):
    """Uniformly random consumer utility; used to explore during warm-up."""

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def estimate(self, consumer, items, history):
        n = len(items)
        return self.rng.random(n), np.full(n, 0.5)


@dataclass
class EngagementModels(EngagementEstimator):
    """
    Two logistic models over consumer-creator features.

    consumer_theta scores P(click or feedback | impression); feedback_theta
    scores P(feedback | impression). theta[0] is the intercept.
    """

    consumer_theta: np.ndarray
    feedback_theta: np.ndarray

    def estimate(self, consumer, items, history):
        if not items:
            return np.zeros(0), np.zeros(0)
        feedback, impressions = history.counts(consumer, [item.creator_id for item in items])
        X = engagement_matrix(items, feedback, impressions)
        consumer_utility = expit(self.consumer_theta[0] + X @ self.consumer_theta[1:])
        p_feedback = expit(self.feedback_theta[0] + X @ self.feedback_theta[1:])
        return consumer_utility, p_feedback

    def to_dict(self) -> Dict[str, object]:
        return {"features": list(ENGAGEMENT_FEATURES), "consumer_theta": self.consumer_theta.tolist(),
                "feedback_theta": self.feedback_theta.tolist()}


def fit_engagement_models(X: np.ndarray, engaged: np.ndarray, gave_feedback: np.ndarray,
                          seed: int) -> EngagementModels:
    """
    Fit both engagement models on logged impressions, picking l2 on a 20% holdout.

    Raises:
        DegenerateDataError: a target has a single class
    """
    if X.shape[0] < 10:
        raise DegenerateDataError(f"Only {X.shape[0]} impressions to fit engagement models")
    rng = np.random.default_rng(seed)
    holdout = rng.random(X.shape[0]) < 0.2
    thetas = []
    for target in (engaged, gave_feedback):
        fit, l2 = select_l2(X[~holdout], target[~holdout], X[holdout], target[holdout], ENGAGEMENT_L2_GRID)
        logger.debug(f"engagement model: l2={l2:g}, {fit.iterations} Newton steps")
        thetas.append(fit.theta)
    return EngagementModels(consumer_theta=thetas[0], feedback_theta=thetas[1])


def heuristic_utility(expected_feedback: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """exp(-E): more upcoming feedback means less benefit from another unit."""
    value = np.exp(-np.asarray(expected_feedback, dtype=float))
    return float(value) if value.ndim == 0 else value


def pcreate_utility_delta(curve: Optional[SensitivityCurve]) -> float:
    """First-level delta clamped below at 0; users without a curve get 0."""
    if curve is None:
        return 0.0
    return max(curve.deltas[0], 0.0)


def pcreate_utility_param(curve: Optional[SensitivityCurve], expected_feedback: float) -> float:
    """exp(tau * E + b) from the fitted curve, exponent capped at MAX_LOG_UTILITY; users without a curve get 0."""
    if curve is None:
        return 0.0
    return float(np.exp(min(curve.tau * expected_feedback + curve.b, MAX_LOG_UTILITY)))


def creator_utilities(policy: RankingPolicy, creators: Sequence[int], expected: np.ndarray) -> np.ndarray:
    if policy.kind is PolicyKind.CONSUMER_ONLY:
        return np.zeros(len(creators))
    if policy.kind is PolicyKind.HEURISTIC:
        return heuristic_utility(expected)
    curves = [policy.snapshot.curve(c) for c in creators]
    if policy.kind is PolicyKind.PCREATE_DELTA:
        return np.array([pcreate_utility_delta(curve) for curve in curves])
    return np.array([pcreate_utility_param(curve, e) for curve, e in zip(curves, expected)])


def feed_score(consumer_utility, p_feedback, creator_utility, policy: RankingPolicy):
    """
    alpha * ConsumerUtility + (1 - alpha) * pFeedback * CreatorUtility.

    ConsumerOnly, and alpha = 1, reduce to ConsumerUtility exactly.
    """
    if policy.kind is PolicyKind.CONSUMER_ONLY or policy.alpha == 1.0:
        return consumer_utility
    return policy.alpha * consumer_utility + (1.0 - policy.alpha) * p_feedback * creator_utility


def rank_feed(candidates: Sequence[FeedItem], consumer: int, policy: RankingPolicy,
              engagement: EngagementEstimator, expected_feedback: Union[Mapping[int, float], np.ndarray],
              history: Optional[InteractionHistory] = None) -> List[ScoredItem]:
    """
    Score and order a consumer's candidates.

    Sorted by descending final score; ties by ascending age, then ascending item_id.

    Args:
        expected_feedback: E per creator, as a mapping or an array indexed by user_id
    """
    if not candidates:
        return []
    history = history or InteractionHistory()
    creators = [item.creator_id for item in candidates]
    if isinstance(expected_feedback, np.ndarray):
        expected = expected_feedback[creators].astype(float)
    else:
        expected = np.array([float(expected_feedback.get(c, 0.0)) for c in creators])

    consumer_utility, p_feedback = engagement.estimate(consumer, candidates, history)
    creator_utility = creator_utilities(policy, creators, expected)
    final = feed_score(consumer_utility, p_feedback, creator_utility, policy)

    ages = np.array([item.age_ticks for item in candidates])
    item_ids = np.array([item.item_id for item in candidates])
    order = np.lexsort((item_ids, ages, -final))
    return [
        ScoredItem(item=candidates[i], consumer_utility=float(consumer_utility[i]), p_feedback=float(p_feedback[i]),
                   creator_utility=float(creator_utility[i]), expected_feedback=float(expected[i]),
                   final_score=float(final[i]))
        for i in order
    ]


def expected_feedback_all(log: EventLog, n_users: int, window_ticks: int, horizon: int,
                          now: Optional[int] = None) -> np.ndarray:
    """Trailing-window feedback received per user, scaled to the horizon."""
    if window_ticks <= 0 or horizon <= 0:
        raise ConfigurationError("window_ticks and horizon must be positive")
    now = log.n_ticks if now is None else now
    window = log.window(max(0, now - window_ticks), now)
    targets = window.loc[window["kind"] == EventKind.FEEDBACK.value, "target"].to_numpy(dtype=int)
    received = np.bincount(targets, minlength=n_users).astype(float)
    return received * horizon / window_ticks


def estimate_expected_feedback(log: EventLog, creator: int, window_ticks: int, horizon: int = 7,
                               now: Optional[int] = None) -> float:
    """
    Feedback the creator is expected to receive over the next horizon ticks.

    Counts Feedback events targeting the creator in [now - window_ticks, now)
    and rescales the count to the horizon.
    """
    expected = expected_feedback_all(log, creator + 1, window_ticks, horizon, now)
    return float(expected[creator])


class FeedRanker:
    """Ranks slates within one tick against fixed engagement models, E estimates and history."""

    def __init__(self, engagement: EngagementEstimator, expected_feedback: Union[Mapping[int, float], np.ndarray],
                 history: Optional[InteractionHistory] = None):
        self.engagement = engagement
        self.expected_feedback = expected_feedback
        self.history = history or InteractionHistory()

    def rank(self, consumer: int, candidates: Sequence[FeedItem], policy: RankingPolicy) -> List[ScoredItem]:
        return rank_feed(candidates, consumer, policy, self.engagement, self.expected_feedback, self.history)
