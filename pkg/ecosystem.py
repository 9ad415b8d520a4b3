"""Synthetic social graph, user population and ground-truth creator behavior."""
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import pandas as pd
from scipy.special import expit

from artifacts import PathLike, format_header, parse_header, check_schema_version, read_csv, write_csv
from errors import ConfigurationError, SchemaError
from logger import setup_logger

logger = setup_logger()

NO_ID = -1


class ActivityLevel(str, Enum):
    DAILY = "Daily"
    WEEKLY = "Weekly"
    MONTHLY = "Monthly"
    INACTIVE = "Inactive"


class ContributionLevel(str, Enum):
    DAILY = "DailyContrib"
    WEEKLY = "WeeklyContrib"
    MONTHLY = "MonthlyContrib"
    NONE = "NonContrib"


# Frequency rank shared by both enums: lower is more frequent.
_ACTIVITY_RANK = {ActivityLevel.DAILY: 0, ActivityLevel.WEEKLY: 1, ActivityLevel.MONTHLY: 2, ActivityLevel.INACTIVE: 3}
_CONTRIBUTION_RANK = {ContributionLevel.DAILY: 0, ContributionLevel.WEEKLY: 1, ContributionLevel.MONTHLY: 2, ContributionLevel.NONE: 3}


class EventKind(str, Enum):
    SESSION = "Session"
    IMPRESSION = "Impression"
    CLICK = "Click"
    FEEDBACK = "Feedback"
    CREATE = "Create"
    MESSAGE = "Message"


class FeedbackAction(str, Enum):
    LIKE = "like"
    COMMENT = "comment"
    SHARE = "share"


FEEDBACK_ACTION_PROBS = {FeedbackAction.LIKE: 0.6, FeedbackAction.COMMENT: 0.25, FeedbackAction.SHARE: 0.15}


@dataclass(frozen=True)
class UserProfile:
    user_id: int
    activity_level: ActivityLevel
    contribution_level: ContributionLevel
    static_features: Tuple[float, ...]

    def __post_init__(self):
        if _CONTRIBUTION_RANK[self.contribution_level] < _ACTIVITY_RANK[self.activity_level]:
            raise ConfigurationError(
                f"User {self.user_id}: {self.contribution_level.value} contributor cannot be "
                f"{self.activity_level.value}"
            )


@dataclass(frozen=True)
class GroundTruthBehavior:
    """Oracle creation response: sigmoid(base + gain * (1 - exp(-rho * a)))."""

    base: float
    gain: float
    rho: float

    def __post_init__(self):
        if self.gain < 0:
            raise ConfigurationError(f"gain must be >= 0, got {self.gain}")
        if not self.rho > 0:
            raise ConfigurationError(f"rho must be > 0, got {self.rho}")


Population = List[Tuple[UserProfile, GroundTruthBehavior]]


@dataclass
class SocialGraph:
    """Directed follow graph; an edge consumer -> creator means the consumer follows the creator."""

    n_users: int
    seed: int
    digraph: nx.DiGraph = field(repr=False)

    @property
    def edges(self) -> List[Tuple[int, int]]:
        return sorted(self.digraph.edges())

    def followees(self, user_id: int) -> List[int]:
        return sorted(self.digraph.successors(user_id))

    def followers(self, user_id: int) -> List[int]:
        return sorted(self.digraph.predecessors(user_id))

    def mean_out_degree(self) -> float:
        return self.digraph.number_of_edges() / self.n_users


def generate_graph(n_users: int, mean_degree: float, rewire_prob: float, seed: int) -> SocialGraph:
    """
    Build a directed small-world follow graph.

    Every user follows the next k_i users on a ring, where k_i is floor(mean_degree)
    plus one with probability equal to the fractional part of mean_degree; each
    follow is then rewired with probability rewire_prob to a uniformly drawn
    user that is neither the follower nor already followed. Out-degrees are
    preserved by rewiring.

    Raises:
        ConfigurationError: n_users < 2, mean_degree outside (0, n_users),
            rewire_prob outside [0, 1]
    """
    if n_users < 2:
        raise ConfigurationError(f"n_users must be >= 2, got {n_users}")
    if not 0 < mean_degree < n_users:
        raise ConfigurationError(f"mean_degree must be in (0, n_users), got {mean_degree}")
    if not 0.0 <= rewire_prob <= 1.0:
        raise ConfigurationError(f"rewire_prob must be in [0, 1], got {rewire_prob}")

    base_degree = int(np.floor(mean_degree))
    fraction = mean_degree - base_degree
    rng = np.random.default_rng(seed)

    digraph = nx.DiGraph()
    digraph.add_nodes_from(range(n_users))
    for i in range(n_users):
        k = base_degree + int(fraction > 0 and rng.random() < fraction)
        k = min(k, n_users - 1)
        targets = [(i + j) % n_users for j in range(1, k + 1)]
        followed = set(targets)
        for slot, target in enumerate(targets):
            if rng.random() >= rewire_prob or len(followed) >= n_users - 1:
                continue
            while True:
                candidate = int(rng.integers(n_users))
                if candidate != i and candidate not in followed:
                    break
            followed.discard(target)
            followed.add(candidate)
            targets[slot] = candidate
        digraph.add_edges_from((i, t) for t in targets)

    graph = SocialGraph(n_users=n_users, seed=seed, digraph=digraph)
    logger.info(f"Generated follow graph: {n_users} users, mean out-degree {graph.mean_out_degree():.2f}")
    return graph


def _quota_counts(fractions: Sequence[float], n: int) -> np.ndarray:
    """Largest-remainder allocation of n units to the given fractions."""
    raw = np.asarray(fractions, dtype=float) * n
    counts = np.floor(raw).astype(int)
    remainder = n - counts.sum()
    if remainder > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _check_fractions(mix: Mapping[str, float], what: str) -> None:
    total = float(sum(mix.values()))
    if abs(total - 1.0) > 1e-9:
        raise ConfigurationError(f"{what} fractions must sum to 1, got {total:.12g}")
    if any(v < 0 for v in mix.values()):
        raise ConfigurationError(f"{what} fractions must be nonnegative")


def assign_population(
    graph: SocialGraph,
    cohort_mix: Mapping[str, float],
    behavior_params: Mapping[str, Mapping[str, Sequence[float]]],
    seed: int,
    contribution_mix: Optional[Mapping[str, Mapping[str, float]]] = None,
    n_locales: int = 3,
) -> Population:
    """
    Assign cohorts, static features and ground-truth behavior to every user.

    Cohort sizes follow cohort_mix by largest-remainder quotas. Within a
    cohort, base/gain/rho are drawn uniformly from the cohort's ranges and
    contribution levels go to the highest-base users first, most frequent
    level first, so contributors are the users most likely to create.

    Raises:
        ConfigurationError: fractions not summing to 1, unknown cohorts,
            missing behavior ranges, inconsistent contribution levels
    """
    _check_fractions(cohort_mix, "cohort_mix")
    try:
        levels = [ActivityLevel(name) for name in cohort_mix]
    except ValueError as e:
        raise ConfigurationError(f"Unknown activity level in cohort_mix: {e}") from e

    rng = np.random.default_rng(seed)
    n = graph.n_users

    counts = _quota_counts(list(cohort_mix.values()), n)
    assignment = np.repeat(np.arange(len(levels)), counts)
    assignment = assignment[rng.permutation(n)]

    base = np.zeros(n)
    gain = np.zeros(n)
    rho = np.zeros(n)
    contribution: List[Optional[ContributionLevel]] = [None] * n

    for index, level in enumerate(levels):
        members = np.flatnonzero(assignment == index)
        if members.size == 0:
            continue
        ranges = behavior_params.get(level.value)
        if ranges is None:
            raise ConfigurationError(f"No behavior ranges configured for cohort {level.value}")
        for name, target in (("base", base), ("gain", gain), ("rho", rho)):
            lo, hi = ranges[name]
            if lo > hi:
                raise ConfigurationError(f"{level.value}.{name} range is empty: [{lo}, {hi}]")
            target[members] = rng.uniform(lo, hi, size=members.size)

        mix = (contribution_mix or {}).get(level.value, {ContributionLevel.NONE.value: 1.0})
        _check_fractions(mix, f"contribution_mix[{level.value}]")
        contrib_levels = sorted((ContributionLevel(name) for name in mix), key=_CONTRIBUTION_RANK.get)
        contrib_counts = _quota_counts([mix[c.value] for c in contrib_levels], members.size)
        by_base = members[np.argsort(-base[members], kind="stable")]
        start = 0
        for contrib, count in zip(contrib_levels, contrib_counts):
            for user in by_base[start:start + count]:
                contribution[user] = contrib
            start += count

    locales = rng.integers(n_locales, size=n)
    population: Population = []
    for user in range(n):
        locale_onehot = [1.0 if locales[user] == j else 0.0 for j in range(n_locales)]
        followers = graph.digraph.in_degree(user)
        followees = graph.digraph.out_degree(user)
        static = tuple(locale_onehot + [float(np.log1p(followers)), float(np.log1p(followees))])
        profile = UserProfile(
            user_id=user,
            activity_level=levels[assignment[user]],
            contribution_level=contribution[user],
            static_features=static,
        )
        behavior = GroundTruthBehavior(base=float(base[user]), gain=float(gain[user]), rho=float(rho[user]))
        population.append((profile, behavior))

    logger.info(f"Assigned population of {n} users across {len(levels)} cohorts")
    return population


def saturation(rho: np.ndarray, feedback: np.ndarray) -> np.ndarray:
    """1 - exp(-rho * a), defined as 0 at a = 0 even for rho = inf."""
    rho = np.asarray(rho, dtype=float)
    feedback = np.asarray(feedback, dtype=float)
    with np.errstate(invalid="ignore"):
        value = -np.expm1(-rho * feedback)
    return np.where(feedback == 0, 0.0, value)


def create_probs(base: np.ndarray, gain: np.ndarray, rho: np.ndarray, feedback: np.ndarray) -> np.ndarray:
    """Vectorized ground-truth create probability."""
    return expit(np.asarray(base) + np.asarray(gain) * saturation(rho, feedback))


def true_create_prob(behavior: GroundTruthBehavior, feedback_count: int) -> float:
    """Per-tick probability that a user with this behavior creates, given recent feedback."""
    if feedback_count < 0:
        raise ConfigurationError(f"feedback_count must be >= 0, got {feedback_count}")
    return float(create_probs(behavior.base, behavior.gain, behavior.rho, feedback_count))


def population_arrays(population: Population) -> Dict[str, np.ndarray]:
    """Column arrays of the ground-truth parameters, indexed by user_id."""
    ordered = sorted(population, key=lambda pair: pair[0].user_id)
    return {
        "base": np.array([b.base for _, b in ordered]),
        "gain": np.array([b.gain for _, b in ordered]),
        "rho": np.array([b.rho for _, b in ordered]),
        "activity": np.array([p.activity_level.value for p, _ in ordered]),
    }


# -- event log ---------------------------------------------------------------

EVENT_COLUMNS = ["tick", "kind", "actor", "target", "item", "action"]


class EventLog:
    """Ordered, tick-stamped record of everything that happened in a simulation."""

    def __init__(self, frame: pd.DataFrame, n_ticks: int, seed: int):
        self.frame = frame.reset_index(drop=True)
        self.n_ticks = n_ticks
        self.seed = seed

    @classmethod
    def empty(cls, n_ticks: int = 0, seed: int = 0) -> "EventLog":
        return cls(_frame_from_rows([]), n_ticks, seed)

    def __len__(self) -> int:
        return len(self.frame)

    def of_kind(self, kind: EventKind) -> pd.DataFrame:
        return self.frame[self.frame["kind"] == kind.value]

    def window(self, start: int, stop: int) -> pd.DataFrame:
        """Events with start <= tick < stop."""
        ticks = self.frame["tick"]
        return self.frame[(ticks >= start) & (ticks < stop)]

    def truncated(self, stop: int) -> "EventLog":
        return EventLog(self.frame[self.frame["tick"] < stop], min(self.n_ticks, stop), self.seed)

    def feedback_tallies(self) -> pd.Series:
        """Feedback count received per item."""
        return self.of_kind(EventKind.FEEDBACK).groupby("item").size()

    def iter_records(self) -> Iterator[Dict[str, object]]:
        for tick, kind, actor, target, item, action in self.frame[EVENT_COLUMNS].itertuples(index=False):
            record = {
                "tick": int(tick),
                "kind": kind,
                "actor": int(actor),
                "target": None if target == NO_ID else int(target),
                "item": None if item == NO_ID else int(item),
            }
            if action:
                record["action"] = action
            yield record


def _frame_from_rows(rows: List[Tuple[int, str, int, int, int, str]]) -> pd.DataFrame:
    frame = pd.DataFrame(rows, columns=EVENT_COLUMNS)
    return frame.astype({"tick": "int64", "actor": "int64", "target": "int64", "item": "int64",
                         "kind": "object", "action": "object"})


class EventLogBuilder:
    """Append-only collector that turns simulation output into an EventLog."""

    def __init__(self):
        self._rows: List[Tuple[int, str, int, int, int, str]] = []

    def add(self, tick: int, kind: EventKind, actor: int, target: int = NO_ID,
            item: int = NO_ID, action: str = "") -> None:
        self._rows.append((tick, kind.value, actor, target, item, action))

    def build(self, n_ticks: int, seed: int) -> EventLog:
        return EventLog(_frame_from_rows(self._rows), n_ticks, seed)


def validate_event_log(log: EventLog) -> List[str]:
    """Return a list of invariant violations (empty when the log is valid)."""
    problems = []
    ticks = log.frame["tick"].to_numpy()
    if ticks.size and np.any(np.diff(ticks) < 0):
        problems.append("ticks are not nondecreasing")

    created = set()
    impressed = set()
    for kind, actor, item in log.frame[["kind", "actor", "item"]].itertuples(index=False):
        if kind == EventKind.CREATE.value:
            created.add(item)
            continue
        if item != NO_ID and item not in created:
            problems.append(f"{kind} references item {item} before its Create")
        if kind == EventKind.IMPRESSION.value:
            impressed.add((actor, item))
        elif kind in (EventKind.FEEDBACK.value, EventKind.CLICK.value) and (actor, item) not in impressed:
            problems.append(f"{kind} by {actor} on item {item} without a prior Impression")
    return problems


def write_event_log(log: EventLog, path: PathLike) -> None:
    """Serialize the log as JSON lines preceded by a seed header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(format_header({"seed": log.seed, "n_ticks": log.n_ticks}))
        for record in log.iter_records():
            f.write(json.dumps(record, separators=(",", ":")) + "\n")


def read_event_log(path: PathLike) -> EventLog:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"Event log not found: {path}")
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        meta = parse_header(f.readline())
        check_schema_version(meta, path)
        for number, line in enumerate(f, start=2):
            try:
                record = json.loads(line)
                rows.append((
                    int(record["tick"]),
                    str(record["kind"]),
                    int(record["actor"]),
                    NO_ID if record.get("target") is None else int(record["target"]),
                    NO_ID if record.get("item") is None else int(record["item"]),
                    record.get("action", ""),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise SchemaError(f"{path}:{number}: malformed event ({e})") from e
    return EventLog(_frame_from_rows(rows), int(meta.get("n_ticks", 0)), int(meta.get("seed", 0)))


# -- population / graph files ------------------------------------------------

def population_frame(population: Population) -> pd.DataFrame:
    rows = []
    for profile, behavior in sorted(population, key=lambda pair: pair[0].user_id):
        row = {
            "user_id": profile.user_id,
            "activity_level": profile.activity_level.value,
            "contribution_level": profile.contribution_level.value,
            "base": behavior.base,
            "gain": behavior.gain,
            "rho": behavior.rho,
        }
        for j, value in enumerate(profile.static_features):
            row[f"static_{j}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def write_population(population: Population, path: PathLike, seed: int) -> None:
    write_csv(path, population_frame(population), {"seed": seed, "kind": "population"})


def read_population(path: PathLike) -> Population:
    frame, _ = read_csv(path)
    required = {"user_id", "activity_level", "contribution_level", "base", "gain", "rho"}
    missing = required - set(frame.columns)
    if missing:
        raise SchemaError(f"{path}: population file lacks columns {sorted(missing)}")
    static_columns = sorted((c for c in frame.columns if c.startswith("static_")),
                            key=lambda c: int(c.split("_")[1]))
    population: Population = []
    for row in frame.itertuples(index=False):
        values = row._asdict()
        profile = UserProfile(
            user_id=int(values["user_id"]),
            activity_level=ActivityLevel(values["activity_level"]),
            contribution_level=ContributionLevel(values["contribution_level"]),
            static_features=tuple(float(values[c]) for c in static_columns),
        )
        behavior = GroundTruthBehavior(base=float(values["base"]), gain=float(values["gain"]),
                                       rho=float(values["rho"]))
        population.append((profile, behavior))
    return population


def write_graph(graph: SocialGraph, path: PathLike) -> None:
    frame = pd.DataFrame(graph.edges, columns=["follower", "followee"])
    write_csv(path, frame, {"seed": graph.seed, "n_users": graph.n_users, "kind": "graph"})


def read_graph(path: PathLike) -> SocialGraph:
    frame, meta = read_csv(path)
    if list(frame.columns) != ["follower", "followee"]:
        raise SchemaError(f"{path}: graph file must have columns follower,followee")
    n_users = int(meta.get("n_users", 0))
    digraph = nx.DiGraph()
    digraph.add_nodes_from(range(n_users))
    digraph.add_edges_from((int(a), int(b)) for a, b in frame.itertuples(index=False, name=None))
    return SocialGraph(n_users=n_users, seed=int(meta.get("seed", 0)), digraph=digraph)
