"""Online experiments: ego clusters, consumer A/B tests, effect estimates and policy sweeps."""
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats
from statsmodels.stats.proportion import confint_proportions_2indep, proportions_ztest

from artifacts import PathLike, write_csv, write_json
from ecosystem import EventKind, EventLog, SocialGraph, create_probs, population_arrays
from errors import ConfigurationError, DataError, SelectionError, UndefinedEffectError, WindowingError
from logger import setup_logger
from metrics import gini
from ranking import PolicyKind, RankingPolicy
from sensitivity import Snapshot
from simulation import EffectInjection, Simulator, child_seeds

logger = setup_logger()

SIGNIFICANCE = 0.05
NEUTRAL = "Neutral"
MIN_SUTVA_REPLICATES = 30


class Arm(str, Enum):
    TREATMENT = "Treatment"
    CONTROL = "Control"


@dataclass(frozen=True)
class EgoCluster:
    ego: int
    alters: FrozenSet[int]
    arm: Optional[Arm] = None


def jaccard(a: FrozenSet[int], b: FrozenSet[int]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


def select_ego_clusters(graph: SocialGraph, n_egos: int, min_alters: int, max_overlap: float,
                        seed: int) -> List[EgoCluster]:
    """
    Pick egos in random order, rejecting any whose follower set overlaps an
    accepted cluster's by more than max_overlap (Jaccard).

    Raises:
        ConfigurationError: bad arguments
        SelectionError: fewer than n_egos clusters are achievable
    """
    if n_egos < 1 or min_alters < 1:
        raise ConfigurationError(f"n_egos and min_alters must be >= 1, got {n_egos}, {min_alters}")
    if not 0.0 <= max_overlap <= 1.0:
        raise ConfigurationError(f"max_overlap must lie in [0, 1], got {max_overlap}")

    eligible = [u for u in range(graph.n_users) if len(graph.followers(u)) >= min_alters]
    order = np.random.default_rng(seed).permutation(eligible)
    clusters: List[EgoCluster] = []
    rejected = 0
    for ego in order:
        alters = frozenset(graph.followers(int(ego))) - {int(ego)}
        if any(jaccard(alters, accepted.alters) > max_overlap for accepted in clusters):
            rejected += 1
            continue
        clusters.append(EgoCluster(ego=int(ego), alters=alters))
        if len(clusters) == n_egos:
            break

    if len(clusters) < n_egos:
        raise SelectionError(
            f"Only {len(clusters)} of {n_egos} ego clusters achievable "
            f"({len(eligible)} eligible egos, {rejected} rejected for overlap)",
            achievable=len(clusters),
        )
    logger.info(f"Selected {len(clusters)} ego clusters ({rejected} rejected for overlap)")
    return clusters


def assign_treatments(clusters: Sequence[EgoCluster], seed: int) -> List[EgoCluster]:
    """Randomize clusters into arms of sizes floor(n/2) and ceil(n/2)."""
    rng = np.random.default_rng(seed)
    n = len(clusters)
    n_treated = n // 2 + (n % 2 if rng.random() < 0.5 else 0)
    treated = set(rng.permutation(n)[:n_treated].tolist())
    return [replace(c, arm=Arm.TREATMENT if i in treated else Arm.CONTROL) for i, c in enumerate(clusters)]


@dataclass(frozen=True)
class MetricSample:
    """Per-unit metrics over one measurement window."""

    unit: int
    contributions: int
    contributor: int
    contributor_with_response: int
    retained_creator: int
    feed_viral_actions: int
    feed_viral_actor: int
    feed_interactions: int
    creations: int
    commenter: int
    reshares: int
    clicks: int
    public_contributor: int
    private_contributor: int
    feedback_received: int


METRICS = tuple(f.name for f in fields(MetricSample) if f.name != "unit")
FLAG_METRICS = frozenset({"contributor", "contributor_with_response", "retained_creator", "feed_viral_actor",
                          "commenter", "public_contributor", "private_contributor"})


def compute_metrics(log: EventLog, units: Iterable[int], window: Tuple[int, int],
                    response_horizon: int = 2) -> List[MetricSample]:
    """
    Metrics per unit over [start, stop).

    A contributor with response created an item in the window that received
    feedback within response_horizon ticks of creation. A retained creator
    created in both the window and the equally long window before it.

    Raises:
        WindowingError: window outside the log span or empty
    """
    start, stop = window
    if start < 0 or stop > log.n_ticks or start >= stop:
        raise WindowingError(f"Window [{start}, {stop}) is not inside the log span [0, {log.n_ticks})")

    frame = log.window(start, stop)
    by_kind = frame.groupby(["actor", "kind"]).size().to_dict()
    feedback = frame[frame["kind"] == EventKind.FEEDBACK.value]
    by_action = feedback.groupby(["actor", "action"]).size().to_dict()
    received = feedback.groupby("target").size().to_dict()

    creates = frame[frame["kind"] == EventKind.CREATE.value]
    earlier = log.window(max(0, start - (stop - start)), start)
    earlier_creators = set(earlier.loc[earlier["kind"] == EventKind.CREATE.value, "actor"].tolist())

    all_feedback = log.of_kind(EventKind.FEEDBACK)[["item", "tick"]].rename(columns={"tick": "feedback_tick"})
    responses = creates[["actor", "item", "tick"]].merge(all_feedback, on="item")
    lag = responses["feedback_tick"] - responses["tick"]
    responded = set(responses.loc[(lag >= 0) & (lag <= response_horizon), "actor"].tolist())

    samples = []
    for unit in sorted(set(units)):
        def kind_count(kind: EventKind) -> int:
            return int(by_kind.get((unit, kind.value), 0))

        likes = int(by_action.get((unit, "like"), 0))
        comments = int(by_action.get((unit, "comment"), 0))
        shares = int(by_action.get((unit, "share"), 0))
        creations = kind_count(EventKind.CREATE)
        messages = kind_count(EventKind.MESSAGE)
        clicks = kind_count(EventKind.CLICK)
        viral = likes + comments + shares
        public = creations + viral
        samples.append(MetricSample(
            unit=unit,
            contributions=public + messages,
            contributor=int(public + messages > 0),
            contributor_with_response=int(unit in responded),
            retained_creator=int(creations > 0 and unit in earlier_creators),
            feed_viral_actions=viral,
            feed_viral_actor=int(viral > 0),
            feed_interactions=clicks + viral,
            creations=creations,
            commenter=int(comments > 0),
            reshares=shares,
            clicks=clicks,
            public_contributor=int(public > 0),
            private_contributor=int(messages > 0),
            feedback_received=int(received.get(unit, 0)),
        ))
    return samples


@dataclass(frozen=True)
class EffectEstimate:
    metric: str
    delta_pct: float
    ci_low: float
    ci_high: float
    p_value: float
    mean_treatment: float
    mean_control: float
    n_treatment: int
    n_control: int
    test: str

    @property
    def significant(self) -> bool:
        return self.p_value <= SIGNIFICANCE

    @property
    def label(self) -> str:
        return f"{self.delta_pct:+.2f}%" if self.significant else NEUTRAL

    def to_dict(self) -> Dict[str, object]:
        row = asdict(self)
        row["label"] = self.label
        return row


Samples = Union[Sequence[MetricSample], Sequence[float]]


def _values(samples: Samples, metric: str) -> np.ndarray:
    if len(samples) and isinstance(samples[0], MetricSample):
        if metric not in METRICS:
            raise ConfigurationError(f"Unknown metric '{metric}'")
        return np.array([getattr(s, metric) for s in samples], dtype=float)
    return np.asarray(samples, dtype=float)


def _zero_se_p(diff: float) -> float:
    return 1.0 if diff == 0 else 0.0


def delta_effect(treat: Samples, control: Samples, metric: str) -> EffectEstimate:
    """
    Relative effect 100 * (mean_T - mean_C) / mean_C with a 95% interval.

    Counts use Welch's t-test; 0/1 flags use a two-proportion z-test (pooled
    for the p-value, Wald for the interval). When the standard error is
    zero the p-value is 0 for a nonzero difference and 1 otherwise.

    Raises:
        DataError: fewer than two units in an arm
        UndefinedEffectError: control mean is zero; carries the absolute effect
    """
    t = _values(treat, metric)
    c = _values(control, metric)
    if t.size < 2 or c.size < 2:
        raise DataError(f"{metric}: need at least two units per arm, got {t.size} and {c.size}")
    mean_t, mean_c = float(t.mean()), float(c.mean())
    diff = mean_t - mean_c
    if mean_c == 0:
        raise UndefinedEffectError(f"{metric}: control mean is zero; relative effect undefined",
                                   absolute_effect=diff)

    if metric in FLAG_METRICS:
        test = "two-proportion z"
        counts, nobs = [t.sum(), c.sum()], [t.size, c.size]
        pooled = sum(counts) / sum(nobs)
        if 0 < pooled < 1:
            _, p_value = proportions_ztest(counts, nobs)
            low, high = confint_proportions_2indep(counts[0], nobs[0], counts[1], nobs[1], method="wald",
                                                   compare="diff", alpha=SIGNIFICANCE)
        else:
            p_value, low, high = _zero_se_p(diff), diff, diff
    else:
        test = "welch t"
        if t.var() > 0 or c.var() > 0:
            result = stats.ttest_ind(t, c, equal_var=False)
            p_value = result.pvalue
            low, high = result.confidence_interval(confidence_level=1 - SIGNIFICANCE)
        else:
            p_value, low, high = _zero_se_p(diff), diff, diff

    scale = 100.0 / mean_c
    bounds = sorted((float(low) * scale, float(high) * scale))
    return EffectEstimate(metric=metric, delta_pct=diff * scale, ci_low=bounds[0], ci_high=bounds[1],
                          p_value=float(p_value), mean_treatment=mean_t, mean_control=mean_c,
                          n_treatment=int(t.size), n_control=int(c.size), test=test)


@dataclass
class ExperimentResult:
    design: str
    treatment: List[MetricSample]
    control: List[MetricSample]
    log: EventLog

    def effects(self, metrics: Sequence[str] = METRICS) -> pd.DataFrame:
        """One row per metric; undefined relative effects keep the absolute difference."""
        rows = []
        for metric in metrics:
            try:
                row = delta_effect(self.treatment, self.control, metric).to_dict()
                row["absolute_effect"] = row["mean_treatment"] - row["mean_control"]
            except UndefinedEffectError as e:
                logger.warning(str(e))
                row = {"metric": metric, "label": "Undefined", "absolute_effect": e.absolute_effect}
            rows.append(row)
        return pd.DataFrame(rows)


def _measure_window(ticks: int, measure_window: int) -> Tuple[int, int]:
    if not 0 < measure_window <= ticks:
        raise ConfigurationError(f"measure_window must lie in [1, {ticks}], got {measure_window}")
    return ticks - measure_window, ticks


def run_ego_experiment(simulator: Simulator, clusters: Sequence[EgoCluster], control_policy: RankingPolicy,
                       treatment_policy: RankingPolicy, ticks: int, seed: int, measure_window: int = 7,
                       response_horizon: int = 2, injection_multiplier: Optional[float] = None) -> ExperimentResult:
    """
    Treat the feeds of treatment clusters' alters and measure creator metrics on egos.

    Egos always see the control ranking. An alter of any treatment cluster is
    treated, even when it also follows a control ego.

    Args:
        injection_multiplier: optional known effect on treated alters' feedback
            toward treatment egos

    Raises:
        ConfigurationError: clusters without an assigned arm, bad window
    """
    if any(c.arm is None for c in clusters):
        raise ConfigurationError("Every ego cluster needs an assigned arm")
    window = _measure_window(ticks, measure_window)
    egos = {c.ego for c in clusters}
    treated_alters = frozenset().union(*(c.alters for c in clusters if c.arm is Arm.TREATMENT)) - egos
    overrides = {alter: treatment_policy for alter in treated_alters}
    treated_egos = frozenset(c.ego for c in clusters if c.arm is Arm.TREATMENT)
    injection = (EffectInjection(injection_multiplier, treated_alters, treated_egos)
                 if injection_multiplier is not None else None)

    log = simulator.run(control_policy, ticks, seed, overrides, injection)
    samples = {s.unit: s for s in compute_metrics(log, egos, window, response_horizon)}
    treatment = [samples[c.ego] for c in clusters if c.arm is Arm.TREATMENT]
    control = [samples[c.ego] for c in clusters if c.arm is Arm.CONTROL]
    logger.info(f"Ego experiment: {len(treatment)} treatment and {len(control)} control clusters, "
                f"{len(treated_alters)} treated alters")
    return ExperimentResult("ego", treatment, control, log)


def run_consumer_ab(simulator: Simulator, control_policy: RankingPolicy, treatment_policy: RankingPolicy,
                    split: float, ticks: int, seed: int, measure_window: int = 7, response_horizon: int = 2,
                    injection_multiplier: Optional[float] = None) -> ExperimentResult:
    """Randomize individual consumers into arms and measure every user by their own arm."""
    if not 0.0 < split < 1.0:
        raise ConfigurationError(f"split must lie in (0, 1), got {split}")
    window = _measure_window(ticks, measure_window)
    assign_seed, run_seed = child_seeds(seed, 2)
    n = simulator.world.n_users
    treated = np.random.default_rng(assign_seed).random(n) < split
    treated_users = frozenset(np.flatnonzero(treated).tolist())
    overrides = {user: treatment_policy for user in treated_users}
    injection = EffectInjection(injection_multiplier, treated_users) if injection_multiplier is not None else None

    log = simulator.run(control_policy, ticks, run_seed, overrides, injection)
    samples = compute_metrics(log, range(n), window, response_horizon)
    treatment = [s for s in samples if treated[s.unit]]
    control = [s for s in samples if not treated[s.unit]]
    logger.info(f"Consumer A/B: {len(treatment)} treatment and {len(control)} control users")
    return ExperimentResult("consumer", treatment, control, log)


@dataclass
class SutvaReport:
    replicates: pd.DataFrame
    metric: str
    multiplier: float

    def summary(self) -> Dict[str, float]:
        frame = self.replicates
        return {
            "metric": self.metric,
            "multiplier": self.multiplier,
            "replicates": int(len(frame)),
            "truth_mean": float(frame["truth_pct"].mean()),
            "ego_mean": float(frame["ego_pct"].mean()),
            "naive_mean": float(frame["naive_pct"].mean()),
            "ego_coverage": float(frame["ego_covers_truth"].mean()),
            "naive_coverage": float(frame["naive_covers_truth"].mean()),
        }


def _global_effect(simulator: Simulator, units: Iterable[int], metric: str, multiplier: float, ticks: int,
                   seed: int, window: Tuple[int, int], response_horizon: int) -> float:
    """Every consumer treated toward units versus no one treated, on common random numbers."""
    units = frozenset(units)
    everyone = frozenset(range(simulator.world.n_users))
    policy = RankingPolicy(PolicyKind.CONSUMER_ONLY)
    means = []
    for injection in (EffectInjection(multiplier, everyone, units), None):
        log = simulator.run(policy, ticks, seed, injection=injection)
        values = [getattr(s, metric) for s in compute_metrics(log, units, window, response_horizon)]
        means.append(float(np.mean(values)))
    if means[1] == 0:
        raise UndefinedEffectError(f"{metric}: global control mean is zero", absolute_effect=means[0])
    return 100.0 * (means[0] - means[1]) / means[1]


def sutva_bias_demo(simulator: Simulator, multiplier: float, replicates: int, n_egos: int, min_alters: int,
                    max_overlap: float, ticks: int, measure_window: int, seed: int,
                    metric: str = "feedback_received", split: float = 0.5,
                    response_horizon: int = 2) -> SutvaReport:
    """
    Compare consumer-randomized and ego-cluster estimates of a known injected
    effect against the global-treatment ground truth.

    Each replicate draws fresh clusters and simulation seeds on the same world.
    Replicates with an undefined relative effect are skipped. The ground truth
    multiplies every consumer's feedback toward the replicate's egos.

    Raises:
        ConfigurationError: fewer than MIN_SUTVA_REPLICATES replicates
    """
    if replicates < MIN_SUTVA_REPLICATES:
        raise ConfigurationError(f"replicates must be >= {MIN_SUTVA_REPLICATES}, got {replicates}")
    window = _measure_window(ticks, measure_window)
    policy = RankingPolicy(PolicyKind.CONSUMER_ONLY)
    rows = []
    for replicate, replicate_seed in enumerate(child_seeds(seed, replicates)):
        select_seed, assign_seed, ego_seed, ab_seed, truth_seed = child_seeds(replicate_seed, 5)
        clusters = assign_treatments(
            select_ego_clusters(simulator.world.graph, n_egos, min_alters, max_overlap, select_seed), assign_seed)
        try:
            ego = run_ego_experiment(simulator, clusters, policy, policy, ticks, ego_seed, measure_window,
                                     response_horizon, multiplier)
            naive = run_consumer_ab(simulator, policy, policy, split, ticks, ab_seed, measure_window,
                                    response_horizon, multiplier)
            ego_effect = delta_effect(ego.treatment, ego.control, metric)
            naive_effect = delta_effect(naive.treatment, naive.control, metric)
            egos = [c.ego for c in clusters]
            truth = _global_effect(simulator, egos, metric, multiplier, ticks, truth_seed, window,
                                   response_horizon)
        except UndefinedEffectError as e:
            logger.warning(f"Replicate {replicate} skipped: {e}")
            continue
        rows.append({
            "replicate": replicate,
            "truth_pct": truth,
            "ego_pct": ego_effect.delta_pct,
            "ego_ci_low": ego_effect.ci_low,
            "ego_ci_high": ego_effect.ci_high,
            "naive_pct": naive_effect.delta_pct,
            "naive_ci_low": naive_effect.ci_low,
            "naive_ci_high": naive_effect.ci_high,
            "ego_covers_truth": int(ego_effect.ci_low <= truth <= ego_effect.ci_high),
            "naive_covers_truth": int(naive_effect.ci_low <= truth <= naive_effect.ci_high),
        })
        logger.info(f"Replicate {replicate}: truth {truth:+.2f}%, ego {ego_effect.delta_pct:+.2f}%, "
                    f"naive {naive_effect.delta_pct:+.2f}%")
    if not rows:
        raise UndefinedEffectError(f"{metric}: no replicate produced a defined effect", absolute_effect=float("nan"))
    return SutvaReport(pd.DataFrame(rows), metric, multiplier)


def feedback_sensitivity(simulator: Simulator) -> np.ndarray:
    """Ground-truth first-unit response p*(1) - p*(0) per user."""
    arrays = population_arrays(simulator.world.population)
    base, gain, rho = arrays["base"], arrays["gain"], arrays["rho"]
    return create_probs(base, gain, rho, np.ones_like(base)) - create_probs(base, gain, rho, np.zeros_like(base))


def distribution_metrics(log: EventLog, sensitivity: np.ndarray) -> Dict[str, float]:
    impressions = len(log.of_kind(EventKind.IMPRESSION))
    clicks = len(log.of_kind(EventKind.CLICK))
    targets = log.of_kind(EventKind.FEEDBACK)["target"].to_numpy(dtype=int)
    received = np.bincount(targets, minlength=sensitivity.size).astype(float)
    top = sensitivity >= np.quantile(sensitivity, 0.75)
    total = received.sum()
    return {
        "consumer_ctr": clicks / impressions if impressions else float("nan"),
        "viral_actions": float(total),
        "feedback_gini": gini(received),
        "top_quartile_feedback_share": float(received[top].sum() / total) if total else float("nan"),
    }


def sweep_alpha(simulator: Simulator, kind: Union[str, PolicyKind], alpha_grid: Sequence[float],
                seeds: Sequence[int], ticks: int, snapshot: Optional[Snapshot] = None) -> pd.DataFrame:
    """
    Simulate the policy at every alpha and average distribution metrics over seeds.

    Every alpha reuses the same seeds. Rows are sorted by alpha descending.

    Raises:
        ConfigurationError: empty grid or seeds, alpha outside [0, 1]
    """
    if not alpha_grid or not seeds:
        raise ConfigurationError("sweep_alpha needs a non-empty alpha grid and seed list")
    sensitivity = feedback_sensitivity(simulator)
    rows = []
    for alpha in sorted(set(float(a) for a in alpha_grid), reverse=True):
        policy = RankingPolicy(kind, alpha, snapshot)
        runs = [distribution_metrics(simulator.run(policy, ticks, seed), sensitivity) for seed in seeds]
        row = {"alpha": alpha, "policy": policy.kind.value}
        for name in runs[0]:
            values = np.array([r[name] for r in runs])
            row[name] = float("nan") if np.isnan(values).all() else float(np.nanmean(values))
        row["seeds_used"] = len(runs)
        rows.append(row)
        logger.info(f"alpha={alpha:g}: ctr {row['consumer_ctr']:.4f}, top-quartile share "
                    f"{row['top_quartile_feedback_share']:.4f}")
    return pd.DataFrame(rows)


def write_effects(table: pd.DataFrame, csv_path: PathLike, json_path: PathLike, meta: Dict[str, object]) -> None:
    write_csv(csv_path, table, meta)
    records = table.astype(object).where(table.notna(), None).to_dict("records")
    write_json(json_path, {**meta, "effects": records})
