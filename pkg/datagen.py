"""Turn an event log into pCreate training data following the feature/label timeline."""
from dataclasses import dataclass, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from artifacts import PathLike, read_csv, write_csv
from ecosystem import ActivityLevel, ContributionLevel, EventKind, EventLog, FeedbackAction, Population
from errors import ConfigurationError, SchemaError, WindowingError
from logger import setup_logger

logger = setup_logger()

UNKNOWN = "Unknown"
ACTIVITY_CATEGORIES = [level.value for level in ActivityLevel] + [UNKNOWN]
CONTRIBUTION_CATEGORIES = [level.value for level in ContributionLevel] + [UNKNOWN]

ACTIVITY_FEATURES = ("visits", "impressions", "clicks", "likes", "comments", "shares", "messages", "creations")

_KIND_FEATURE = {
    EventKind.SESSION.value: "visits",
    EventKind.IMPRESSION.value: "impressions",
    EventKind.CLICK.value: "clicks",
    EventKind.MESSAGE.value: "messages",
    EventKind.CREATE.value: "creations",
}
_ACTION_FEATURE = {
    FeedbackAction.LIKE.value: "likes",
    FeedbackAction.COMMENT.value: "comments",
    FeedbackAction.SHARE.value: "shares",
}


@dataclass(frozen=True)
class TimelineConfig:
    """Features come from [t-u, t), labels from [t, t+w)."""

    t: int
    u: int
    w: int

    def __post_init__(self):
        if self.u <= 0 or self.w <= 0:
            raise ConfigurationError(f"u and w must be positive, got u={self.u}, w={self.w}")
        if self.t < self.u:
            raise ConfigurationError(f"t must be >= u, got t={self.t}, u={self.u}")


@dataclass(frozen=True)
class BucketEdges:
    """Lower edges v_1 = 0 < v_2 < ... < v_K of the feedback levels."""

    edges: Tuple[int, ...]

    def __post_init__(self):
        edges = tuple(self.edges)
        object.__setattr__(self, "edges", edges)
        if len(edges) < 2:
            raise ConfigurationError("Bucket edges need at least two levels")
        if edges[0] != 0:
            raise ConfigurationError(f"First bucket edge must be 0, got {edges[0]}")
        if any(b <= a for a, b in zip(edges, edges[1:])):
            raise ConfigurationError(f"Bucket edges must be strictly increasing: {edges}")

    @property
    def levels(self) -> int:
        return len(self.edges)


def bucketize_feedback(a: int, edges: BucketEdges) -> int:
    """Level k in 1..K such that v_k <= a < v_{k+1}."""
    if a < 0:
        raise ConfigurationError(f"feedback count must be >= 0, got {a}")
    return int(np.searchsorted(edges.edges, a, side="right"))


@dataclass(frozen=True)
class FeatureVector:
    a: int
    a_bucket: int
    static: Tuple[float, ...]
    activity: Tuple[float, ...]
    activity_level: str = UNKNOWN
    contribution_level: str = UNKNOWN

    def with_feedback(self, a: int, edges: BucketEdges) -> "FeatureVector":
        """Same user with feedback replaced by a and the bucket re-derived."""
        return replace(self, a=a, a_bucket=bucketize_feedback(a, edges))


@dataclass(frozen=True)
class TrainingExample:
    user_id: int
    features: FeatureVector
    label: int

    @property
    def cohort(self) -> Tuple[str, str]:
        return self.features.activity_level, self.features.contribution_level


def _require_span(log: EventLog, start: int, stop: int) -> None:
    if start < 0 or stop > log.n_ticks:
        raise WindowingError(
            f"Log spans ticks [0, {log.n_ticks}) but windows need [{start}, {stop})"
        )


def _profiles_by_id(population: Population) -> Dict[int, object]:
    return {profile.user_id: profile for profile, _ in population}


def collect_features(log: EventLog, population: Population, t: int, u: int,
                     edges: BucketEdges, users: Optional[Iterable[int]] = None) -> Dict[int, FeatureVector]:
    """
    Feature vectors at time t from events in [t-u, t).

    Args:
        users: users to featurize; defaults to every user in the population

    Raises:
        WindowingError: the log does not cover [t-u, t)
        SchemaError: a requested user has no profile
    """
    _require_span(log, t - u, t)
    window = log.window(t - u, t)
    profiles = _profiles_by_id(population)

    feedback = window[window["kind"] == EventKind.FEEDBACK.value]
    received = feedback.groupby("target").size().to_dict()
    kind_counts = window.groupby(["actor", "kind"]).size().to_dict()
    action_counts = feedback.groupby(["actor", "action"]).size().to_dict()

    features = {}
    for user in sorted(profiles if users is None else users):
        profile = profiles.get(user)
        if profile is None:
            raise SchemaError(f"User {user} has no profile in the population")
        counts = dict.fromkeys(ACTIVITY_FEATURES, 0.0)
        for kind, name in _KIND_FEATURE.items():
            counts[name] = float(kind_counts.get((user, kind), 0))
        for action, name in _ACTION_FEATURE.items():
            counts[name] = float(action_counts.get((user, action), 0))
        a = int(received.get(user, 0))
        features[user] = FeatureVector(
            a=a,
            a_bucket=bucketize_feedback(a, edges),
            static=tuple(profile.static_features),
            activity=tuple(counts[name] for name in ACTIVITY_FEATURES),
            activity_level=profile.activity_level.value,
            contribution_level=profile.contribution_level.value,
        )
    return features


def collect_examples(log: EventLog, population: Population, cfg: TimelineConfig,
                     edges: BucketEdges) -> List[TrainingExample]:
    """
    One example per user active in [t-u, t), sorted by user_id.

    A user is active when they act in the feature window or receive feedback
    in it. The label is 1 iff the user creates in [t, t+w).

    Raises:
        WindowingError: the log is shorter than [t-u, t+w)
    """
    _require_span(log, cfg.t - cfg.u, cfg.t + cfg.w)
    window = log.window(cfg.t - cfg.u, cfg.t)
    feedback_targets = window.loc[window["kind"] == EventKind.FEEDBACK.value, "target"]
    active = sorted(set(window["actor"].tolist()) | set(feedback_targets.tolist()))

    labels_window = log.window(cfg.t, cfg.t + cfg.w)
    creators = set(labels_window.loc[labels_window["kind"] == EventKind.CREATE.value, "actor"].tolist())

    features = collect_features(log, population, cfg.t, cfg.u, edges, active)
    examples = [
        TrainingExample(user_id=user, features=features[user], label=int(user in creators))
        for user in active
    ]
    positives = sum(e.label for e in examples)
    logger.info(f"Collected {len(examples)} examples at t={cfg.t} ({positives} positive)")
    return examples


def _allocate(n: int, ratios: Sequence[float]) -> np.ndarray:
    raw = np.asarray(ratios, dtype=float) * n
    counts = np.floor(raw).astype(int)
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:n - counts.sum()]] += 1
    return counts


def split_dataset(examples: Sequence[TrainingExample], ratios: Sequence[float],
                  seed: int) -> Tuple[List[TrainingExample], List[TrainingExample], List[TrainingExample]]:
    """
    Stratified random partition into (train, valid, test).

    Split sizes follow the rounded global targets; each class is spread
    across the splits in the same proportions.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios):
        raise ConfigurationError(f"ratios must be three nonnegative numbers, got {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"ratios must sum to 1, got {sum(ratios):.12g}")
    if not examples:
        logger.warning("split_dataset called with no examples; returning empty splits")
        return [], [], []

    rng = np.random.default_rng(seed)
    labels = np.array([e.label for e in examples])
    positives = rng.permutation(np.flatnonzero(labels == 1))
    negatives = rng.permutation(np.flatnonzero(labels == 0))

    targets = _allocate(len(examples), ratios)
    pos_counts = _allocate(positives.size, ratios)
    neg_counts = targets - pos_counts
    if np.any(neg_counts < 0) or neg_counts.sum() != negatives.size:
        neg_counts = _allocate(negatives.size, ratios)

    splits = []
    pos_start = neg_start = 0
    for pos_n, neg_n in zip(pos_counts, neg_counts):
        chosen = np.r_[positives[pos_start:pos_start + pos_n], negatives[neg_start:neg_start + neg_n]]
        pos_start += pos_n
        neg_start += neg_n
        splits.append(sorted((examples[i] for i in chosen), key=lambda e: e.user_id))
    return splits[0], splits[1], splits[2]


class FeatureSchema:
    """
    Column layout of the design matrix for one model family.

    logistic: static, log1p(activity), cohort dummies, bucket dummies (levels
    2..K), and optionally bucket x cohort interaction dummies.
    gbt: raw feedback count, static, raw activity, cohort codes.
    """

    def __init__(self, family: str, edges: BucketEdges, n_static: int, interactions: bool = True):
        if family not in ("logistic", "gbt"):
            raise ConfigurationError(f"Unknown model family: {family}")
        self.family = family
        self.edges = edges
        self.n_static = n_static
        self.interactions = interactions and family == "logistic"

    @property
    def cohort_dummies(self) -> List[str]:
        return ([f"activity={c}" for c in ACTIVITY_CATEGORIES[1:]]
                + [f"contribution={c}" for c in CONTRIBUTION_CATEGORIES[1:]])

    @property
    def gamma_names(self) -> List[str]:
        static = [f"static_{j}" for j in range(self.n_static)]
        if self.family == "gbt":
            return ["a"] + static + list(ACTIVITY_FEATURES) + ["activity_code", "contribution_code"]
        return static + [f"log1p_{name}" for name in ACTIVITY_FEATURES] + self.cohort_dummies

    @property
    def bucket_names(self) -> List[str]:
        return [f"a_bucket={k}" for k in range(2, self.edges.levels + 1)] if self.family == "logistic" else []

    @property
    def interaction_names(self) -> List[str]:
        if not self.interactions:
            return []
        return [f"{b}*{c}" for b in self.bucket_names for c in self.cohort_dummies]

    @property
    def names(self) -> List[str]:
        return self.gamma_names + self.bucket_names + self.interaction_names

    def check(self, fv: FeatureVector) -> None:
        if len(fv.static) != self.n_static:
            raise SchemaError(f"Expected {self.n_static} static features, got {len(fv.static)}")
        if len(fv.activity) != len(ACTIVITY_FEATURES):
            raise SchemaError(f"Expected {len(ACTIVITY_FEATURES)} activity features, got {len(fv.activity)}")
        if not 1 <= fv.a_bucket <= self.edges.levels:
            raise SchemaError(f"Bucket level {fv.a_bucket} outside 1..{self.edges.levels}")

    def _cohort_row(self, fv: FeatureVector) -> np.ndarray:
        activity = fv.activity_level if fv.activity_level in ACTIVITY_CATEGORIES else UNKNOWN
        contribution = fv.contribution_level if fv.contribution_level in CONTRIBUTION_CATEGORIES else UNKNOWN
        row = np.zeros(len(ACTIVITY_CATEGORIES) + len(CONTRIBUTION_CATEGORIES) - 2)
        a_index = ACTIVITY_CATEGORIES.index(activity)
        c_index = CONTRIBUTION_CATEGORIES.index(contribution)
        if a_index > 0:
            row[a_index - 1] = 1.0
        if c_index > 0:
            row[len(ACTIVITY_CATEGORIES) - 1 + c_index - 1] = 1.0
        return row

    def row(self, fv: FeatureVector) -> np.ndarray:
        self.check(fv)
        if self.family == "gbt":
            activity = fv.activity_level if fv.activity_level in ACTIVITY_CATEGORIES else UNKNOWN
            contribution = fv.contribution_level if fv.contribution_level in CONTRIBUTION_CATEGORIES else UNKNOWN
            return np.array([float(fv.a), *fv.static, *fv.activity,
                             float(ACTIVITY_CATEGORIES.index(activity)),
                             float(CONTRIBUTION_CATEGORIES.index(contribution))])
        cohort = self._cohort_row(fv)
        buckets = np.zeros(self.edges.levels - 1)
        if fv.a_bucket > 1:
            buckets[fv.a_bucket - 2] = 1.0
        parts = [np.asarray(fv.static, dtype=float), np.log1p(np.asarray(fv.activity, dtype=float)), cohort, buckets]
        if self.interactions:
            parts.append(np.outer(buckets, cohort).ravel())
        return np.concatenate(parts)

    def matrix(self, features: Sequence[FeatureVector]) -> np.ndarray:
        if not features:
            return np.zeros((0, len(self.names)))
        return np.vstack([self.row(fv) for fv in features])

    def to_dict(self) -> Dict[str, object]:
        return {
            "family": self.family,
            "edges": list(self.edges.edges),
            "n_static": self.n_static,
            "interactions": self.interactions,
            "names": self.names,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, object]) -> "FeatureSchema":
        try:
            schema = cls(str(data["family"]), BucketEdges(tuple(data["edges"])),
                         int(data["n_static"]), bool(data["interactions"]))
        except (KeyError, TypeError) as e:
            raise SchemaError(f"Malformed feature schema: {e}") from e
        if "names" in data and list(data["names"]) != schema.names:
            raise SchemaError("Feature schema column names do not match this version")
        return schema

    def __eq__(self, other: object) -> bool:
        return isinstance(other, FeatureSchema) and self.to_dict() == other.to_dict()


# -- examples file ------------------------------------------------------------

def write_examples(examples: Sequence[TrainingExample], path: PathLike, seed: int,
                   cfg: TimelineConfig, edges: BucketEdges) -> None:
    rows = []
    for e in examples:
        fv = e.features
        row = {"user_id": e.user_id, "label": e.label, "a": fv.a, "a_bucket": fv.a_bucket,
               "activity_level": fv.activity_level, "contribution_level": fv.contribution_level}
        row.update({f"static_{j}": v for j, v in enumerate(fv.static)})
        row.update(dict(zip(ACTIVITY_FEATURES, fv.activity)))
        rows.append(row)
    meta = {"seed": seed, "kind": "examples", "t": cfg.t, "u": cfg.u, "w": cfg.w, "edges": list(edges.edges)}
    write_csv(path, pd.DataFrame(rows), meta)


def read_examples(path: PathLike) -> List[TrainingExample]:
    frame, _ = read_csv(path, keep_default_na=False)
    static_columns = sorted((c for c in frame.columns if c.startswith("static_")),
                            key=lambda c: int(c.split("_")[1]))
    missing = {"user_id", "label", "a", "a_bucket", *ACTIVITY_FEATURES} - set(frame.columns)
    if missing:
        raise SchemaError(f"{path}: examples file lacks columns {sorted(missing)}")
    examples = []
    for record in frame.to_dict("records"):
        fv = FeatureVector(
            a=int(record["a"]),
            a_bucket=int(record["a_bucket"]),
            static=tuple(float(record[c]) for c in static_columns),
            activity=tuple(float(record[name]) for name in ACTIVITY_FEATURES),
            activity_level=str(record.get("activity_level") or UNKNOWN),
            contribution_level=str(record.get("contribution_level") or UNKNOWN),
        )
        examples.append(TrainingExample(user_id=int(record["user_id"]), features=fv, label=int(record["label"])))
    return examples


def labels_of(examples: Sequence[TrainingExample]) -> np.ndarray:
    return np.array([e.label for e in examples], dtype=int)
