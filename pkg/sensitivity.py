"""Per-user feedback sensitivity: level deltas and the exponential-decay fit."""
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from artifacts import PathLike, read_csv, write_csv
from datagen import BucketEdges, FeatureVector
from errors import ConfigurationError, SchemaError, SingularDesignError
from logger import setup_logger
from models import CreateModel, model_hash, predict, predict_many

logger = setup_logger()

DEFAULT_FLOOR = 1e-6


@dataclass(frozen=True)
class LevelGrid:
    """Representative feedback values v_1 < ... < v_K; v_0 = 0 is the zero-feedback level."""

    values: Tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if len(values) < 2:
            raise ConfigurationError("A level grid needs K >= 2 values")
        if values[0] <= 0:
            raise ConfigurationError(f"v_1 must be above the zero level, got {values[0]}")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ConfigurationError(f"Grid values must be strictly increasing: {values}")

    @classmethod
    def from_edges(cls, edges: BucketEdges) -> "LevelGrid":
        """
        Interval minima of every level above zero, the open top level included.

        With a single level above zero a second point at twice its edge is
        added inside that open level.
        """
        values = [float(v) for v in edges.edges[1:]]
        if len(values) < 2:
            values.append(2.0 * values[-1])
        return cls(tuple(values))

    @property
    def K(self) -> int:
        return len(self.values)

    @property
    def V(self) -> np.ndarray:
        return design_matrix(self.values)


def design_matrix(values: Sequence[float]) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.column_stack([np.ones_like(values), values])


@dataclass(frozen=True)
class SensitivityCurve:
    user_id: int
    deltas: Tuple[float, ...]
    b: float
    tau: float
    residual_rss: float
    clamped_levels: FrozenSet[int]

    @property
    def positive_tau(self) -> bool:
        return self.tau > 0

    def clamped_mask(self) -> str:
        return "".join("1" if k in self.clamped_levels else "0" for k in range(1, len(self.deltas) + 1))


def delta_at(model: CreateModel, features: FeatureVector, delta_a: int) -> float:
    """P(Y>0 | a + delta_a, X) - P(Y>0 | a, X), re-deriving the feedback features."""
    if delta_a < 1:
        raise ConfigurationError(f"delta_a must be >= 1, got {delta_a}")
    edges = model.schema.edges
    raised = features.with_feedback(features.a + delta_a, edges)
    return predict(model, raised) - predict(model, features)


def _level_inputs(features: FeatureVector, grid: LevelGrid, edges: BucketEdges) -> List[FeatureVector]:
    return [features.with_feedback(int(v), edges) for v in (0.0, *grid.values)]


def level_deltas(model: CreateModel, user_features: FeatureVector, grid: LevelGrid) -> np.ndarray:
    """
    Per-interval slopes [P(a=v_k) - P(a=v_{k-1})] / (v_k - v_{k-1}) for k = 1..K,
    all non-feedback features held fixed.
    """
    probs = predict_many(model, _level_inputs(user_features, grid, model.schema.edges))
    steps = np.diff(np.r_[0.0, grid.values])
    return np.diff(probs) / steps


def fit_exp_decay(grid: Union[LevelGrid, Sequence[float]], deltas: Sequence[float],
                  floor: float = DEFAULT_FLOOR) -> Tuple[float, float, float, FrozenSet[int]]:
    """
    Least-squares fit of log(delta_k) = b + tau * v_k.

    Deltas at or below floor are clamped to floor before the log transform;
    the clamped 1-based levels are returned.

    Returns:
        (b, tau, residual_rss, clamped_levels)

    Raises:
        SingularDesignError: grid values all equal
    """
    values = grid.values if isinstance(grid, LevelGrid) else tuple(float(v) for v in grid)
    deltas = np.asarray(deltas, dtype=float)
    if deltas.size != len(values):
        raise ConfigurationError(f"{deltas.size} deltas for a grid of {len(values)} values")
    V = design_matrix(values)
    if np.linalg.matrix_rank(V) < 2:
        raise SingularDesignError("Grid values are all equal; V^T V is singular")

    clamped = frozenset(int(k) + 1 for k in np.flatnonzero(~(deltas > floor)))
    log_deltas = np.log(np.where(deltas > floor, deltas, floor))
    b, tau = np.linalg.solve(V.T @ V, V.T @ log_deltas)
    residual = log_deltas - V @ np.array([b, tau])
    return float(b), float(tau), float(residual @ residual), clamped


def fit_curve(user_id: int, grid: LevelGrid, deltas: np.ndarray, floor: float = DEFAULT_FLOOR) -> SensitivityCurve:
    b, tau, rss, clamped = fit_exp_decay(grid, deltas, floor)
    return SensitivityCurve(user_id=user_id, deltas=tuple(float(d) for d in deltas), b=b, tau=tau,
                            residual_rss=rss, clamped_levels=clamped)


@dataclass
class Snapshot:
    """Offline utility table consumed by the online ranking step."""

    curves: Dict[int, SensitivityCurve]
    grid: LevelGrid
    model_hash: str
    floor: float = DEFAULT_FLOOR

    def __len__(self) -> int:
        return len(self.curves)

    def curve(self, user_id: int) -> Optional[SensitivityCurve]:
        return self.curves.get(user_id)

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for user_id in sorted(self.curves):
            curve = self.curves[user_id]
            row = {"user_id": user_id, "b": curve.b, "tau": curve.tau}
            row.update({f"delta_{k}": d for k, d in enumerate(curve.deltas, start=1)})
            row.update({"residual_rss": curve.residual_rss, "clamped_mask": curve.clamped_mask(),
                        "positive_tau": int(curve.positive_tau)})
            rows.append(row)
        return pd.DataFrame(rows)


def build_snapshot(model: CreateModel, features: Mapping[int, FeatureVector], grid: LevelGrid,
                   floor: float = DEFAULT_FLOOR) -> Snapshot:
    """
    Sensitivity curve for every user, in user_id order.

    Raises:
        SchemaError: features do not match the model's schema
    """
    users = sorted(features)
    edges = model.schema.edges
    inputs = [fv for user in users for fv in _level_inputs(features[user], grid, edges)]
    probs = predict_many(model, inputs).reshape(len(users), grid.K + 1) if users else np.zeros((0, grid.K + 1))
    steps = np.diff(np.r_[0.0, grid.values])

    curves = {}
    for row, user in enumerate(users):
        curves[user] = fit_curve(user, grid, np.diff(probs[row]) / steps, floor)

    positive = sum(c.positive_tau for c in curves.values())
    if positive:
        logger.warning(f"{positive} of {len(curves)} users have a positive fitted tau")
    logger.info(f"Built utility snapshot for {len(curves)} users")
    return Snapshot(curves=curves, grid=grid, model_hash=model_hash(model), floor=floor)


def write_snapshot(snapshot: Snapshot, path: PathLike) -> None:
    meta = {"kind": "snapshot", "grid": list(snapshot.grid.values), "model_hash": snapshot.model_hash,
            "floor": snapshot.floor}
    write_csv(path, snapshot.to_frame(), meta)


def read_snapshot(path: PathLike) -> Snapshot:
    """
    Raises:
        SchemaError: missing header fields or columns
    """
    frame, meta = read_csv(path, dtype={"clamped_mask": str})
    if meta.get("kind") != "snapshot" or "grid" not in meta:
        raise SchemaError(f"{path}: not a utility snapshot")
    grid = LevelGrid(tuple(float(v) for v in meta["grid"].split(",")))
    delta_columns = [f"delta_{k}" for k in range(1, grid.K + 1)]
    missing = {"user_id", "b", "tau", "residual_rss", "clamped_mask", *delta_columns} - set(frame.columns)
    if missing:
        raise SchemaError(f"{path}: snapshot lacks columns {sorted(missing)}")

    curves = {}
    for record in frame.to_dict("records"):
        mask = str(record["clamped_mask"]).zfill(grid.K)
        curve = SensitivityCurve(
            user_id=int(record["user_id"]),
            deltas=tuple(float(record[c]) for c in delta_columns),
            b=float(record["b"]),
            tau=float(record["tau"]),
            residual_rss=float(record["residual_rss"]),
            clamped_levels=frozenset(k + 1 for k, flag in enumerate(mask) if flag == "1"),
        )
        curves[curve.user_id] = curve
    return Snapshot(curves=curves, grid=grid, model_hash=meta.get("model_hash", ""),
                    floor=float(meta.get("floor", DEFAULT_FLOOR)))
