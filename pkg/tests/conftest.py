import numpy as np
import pytest
from scipy.special import expit

from config import EcosystemConfig
from datagen import BucketEdges, FeatureVector, TrainingExample, bucketize_feedback
from ranking import ConstantEngagement, PolicyKind, RankingPolicy
from simulation import Simulator, generate_world

EDGES = BucketEdges((0, 1, 2, 5, 10, 25))
COHORTS = ("Daily", "Weekly", "Monthly")
CONTRIBUTION_FOR = {"Daily": "DailyContrib", "Weekly": "WeeklyContrib", "Monthly": "MonthlyContrib"}


def small_ecosystem(**overrides) -> EcosystemConfig:
    settings = dict(n_users=80, mean_degree=6, n_ticks=21, warmup_ticks=4, slate_size=4)
    settings.update(overrides)
    return EcosystemConfig(**settings)


def make_fv(a: int = 0, activity_level: str = "Daily", contribution_level: str = "DailyContrib",
            static=(0.0, 1.0), activity=None, edges: BucketEdges = EDGES) -> FeatureVector:
    return FeatureVector(
        a=a,
        a_bucket=bucketize_feedback(a, edges),
        static=tuple(static),
        activity=tuple(activity if activity is not None else [1.0] * 8),
        activity_level=activity_level,
        contribution_level=contribution_level,
    )


def synthetic_examples(n: int, seed: int, cohort_gain=None, edges: BucketEdges = EDGES, feedback_mean: float = 3.0):
    """Examples whose label responds to feedback with a per-cohort strength."""
    cohort_gain = cohort_gain or {"Daily": 1.0, "Weekly": 0.4, "Monthly": 2.0}
    rng = np.random.default_rng(seed)
    examples = []
    for user in range(n):
        cohort = COHORTS[rng.integers(len(COHORTS))]
        a = int(rng.poisson(feedback_mean))
        static = tuple(rng.normal(size=2))
        activity = tuple(float(v) for v in rng.poisson(2.0, size=8))
        logit = -1.5 + 0.3 * static[0] + cohort_gain[cohort] * (1 - np.exp(-0.4 * a))
        label = int(rng.random() < expit(logit))
        fv = make_fv(a, cohort, CONTRIBUTION_FOR[cohort], static, activity, edges)
        examples.append(TrainingExample(user_id=user, features=fv, label=label))
    return examples


@pytest.fixture(scope="session")
def ecosystem_cfg():
    return small_ecosystem()


@pytest.fixture(scope="session")
def world(ecosystem_cfg):
    return generate_world(ecosystem_cfg, seed=7)


@pytest.fixture(scope="session")
def simulator(world):
    return Simulator(world, ConstantEngagement(0.5, 0.2), expected_window=7, horizon=7)


@pytest.fixture(scope="session")
def sim_log(simulator, ecosystem_cfg):
    return simulator.run(RankingPolicy(PolicyKind.CONSUMER_ONLY), ecosystem_cfg.n_ticks, seed=11)


@pytest.fixture
def examples():
    return synthetic_examples(600, seed=3)
