"""Gradient-boosted regression trees with logistic loss and second-order split gain."""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit, logit

from datagen import BucketEdges, FeatureSchema, TrainingExample, labels_of
from errors import DegenerateDataError, SchemaError
from logger import setup_logger
from metrics import auprc

logger = setup_logger()

LEAF = -1


@dataclass
class GbtParams:
    max_depth: int = 4
    learning_rate: float = 0.1
    n_trees: int = 200
    early_stopping_rounds: int = 20
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0


@dataclass
class RegressionTree:
    """Flat node arrays; node 0 is the root, feature == LEAF marks a leaf."""

    feature: List[int] = field(default_factory=list)
    threshold: List[float] = field(default_factory=list)
    left: List[int] = field(default_factory=list)
    right: List[int] = field(default_factory=list)
    value: List[float] = field(default_factory=list)

    @classmethod
    def leaf(cls, value: float) -> "RegressionTree":
        return cls(feature=[LEAF], threshold=[0.0], left=[LEAF], right=[LEAF], value=[value])

    def _add(self, feature: int, threshold: float, value: float) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(value)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feature = np.asarray(self.feature)
        threshold = np.asarray(self.threshold, dtype=float)
        left = np.asarray(self.left)
        right = np.asarray(self.right)
        node = np.zeros(X.shape[0], dtype=int)
        while True:
            split = feature[node]
            rows = np.flatnonzero(split != LEAF)
            if rows.size == 0:
                break
            at = node[rows]
            go_left = X[rows, split[rows]] < threshold[at]
            node[rows] = np.where(go_left, left[at], right[at])
        return np.asarray(self.value, dtype=float)[node]

    def to_dict(self) -> Dict[str, List]:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "value": self.value}

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "RegressionTree":
        tree = cls(feature=[int(v) for v in data["feature"]], threshold=[float(v) for v in data["threshold"]],
                   left=[int(v) for v in data["left"]], right=[int(v) for v in data["right"]],
                   value=[float(v) for v in data["value"]])
        sizes = {len(tree.feature), len(tree.threshold), len(tree.left), len(tree.right), len(tree.value)}
        if len(sizes) != 1 or not tree.feature:
            raise SchemaError("Tree node arrays are empty or of unequal length")
        if not np.all(np.isfinite(tree.value)):
            raise SchemaError("Tree leaf values must be finite")
        return tree


@dataclass
class GbtModel:
    trees: List[RegressionTree]
    base_score: float
    learning_rate: float
    max_depth: int
    n_trees: int
    schema: Optional[FeatureSchema] = None
    best_iteration: int = 0
    valid_history: List[float] = field(default_factory=list)

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        score = np.full(X.shape[0], self.base_score, dtype=float)
        for tree in self.trees:
            score += tree.predict(X)
        return score

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": "gbt",
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "n_trees": self.n_trees,
            "best_iteration": self.best_iteration,
            "valid_history": self.valid_history,
            "trees": [tree.to_dict() for tree in self.trees],
        }


def split_gain(grad_left: np.ndarray, hess_left: np.ndarray, grad_right: np.ndarray,
               hess_right: np.ndarray, reg_lambda: float) -> np.ndarray:
    """Second-order loss reduction of splitting a node into left/right children."""
    parent = (grad_left + grad_right) ** 2 / (hess_left + hess_right + reg_lambda)
    return 0.5 * (grad_left ** 2 / (hess_left + reg_lambda)
                  + grad_right ** 2 / (hess_right + reg_lambda) - parent)


def find_best_split(X: np.ndarray, grad: np.ndarray, hess: np.ndarray, rows: np.ndarray,
                    sorted_index: Sequence[np.ndarray], params: GbtParams) -> Optional[Tuple[int, float, float]]:
    """
    Exact greedy split search over all features.

    Candidate thresholds are midpoints between consecutive distinct values;
    rows with x < threshold go left. Ties go to the lowest feature index, then
    the lowest threshold.

    Returns:
        (feature, threshold, gain) or None when no split has positive gain
    """
    in_node = np.zeros(X.shape[0], dtype=bool)
    in_node[rows] = True
    grad_total = grad[rows].sum()
    hess_total = hess[rows].sum()

    best: Optional[Tuple[int, float, float]] = None
    for feature, order in enumerate(sorted_index):
        ordered = order[in_node[order]]
        if ordered.size < 2:
            continue
        x = X[ordered, feature]
        grad_left = np.cumsum(grad[ordered])[:-1]
        hess_left = np.cumsum(hess[ordered])[:-1]
        grad_right = grad_total - grad_left
        hess_right = hess_total - hess_left
        valid = ((x[:-1] < x[1:]) & (hess_left >= params.min_child_weight)
                 & (hess_right >= params.min_child_weight))
        if not valid.any():
            continue
        gain = np.where(valid, split_gain(grad_left, hess_left, grad_right, hess_right, params.reg_lambda), -np.inf)
        position = int(np.argmax(gain))
        if gain[position] > 0 and (best is None or gain[position] > best[2]):
            threshold = 0.5 * (x[position] + x[position + 1])
            best = (feature, float(threshold), float(gain[position]))
    return best


def _leaf_value(grad: np.ndarray, hess: np.ndarray, rows: np.ndarray, params: GbtParams) -> float:
    return float(-grad[rows].sum() / (hess[rows].sum() + params.reg_lambda) * params.learning_rate)


def build_tree(X: np.ndarray, grad: np.ndarray, hess: np.ndarray, sorted_index: Sequence[np.ndarray],
               params: GbtParams) -> RegressionTree:
    tree = RegressionTree()
    root_rows = np.arange(X.shape[0])
    stack = [(tree._add(LEAF, 0.0, _leaf_value(grad, hess, root_rows, params)), root_rows, 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= params.max_depth:
            continue
        split = find_best_split(X, grad, hess, rows, sorted_index, params)
        if split is None:
            continue
        feature, threshold, _ = split
        go_left = X[rows, feature] < threshold
        left_rows, right_rows = rows[go_left], rows[~go_left]
        tree.feature[node] = feature
        tree.threshold[node] = threshold
        tree.left[node] = tree._add(LEAF, 0.0, _leaf_value(grad, hess, left_rows, params))
        tree.right[node] = tree._add(LEAF, 0.0, _leaf_value(grad, hess, right_rows, params))
        stack.append((tree.right[node], right_rows, depth + 1))
        stack.append((tree.left[node], left_rows, depth + 1))
    return tree


def _check_labels(y: np.ndarray) -> None:
    if y.size == 0:
        raise DegenerateDataError("Training set is empty")
    if y.min() == y.max():
        raise DegenerateDataError("Training labels contain a single class")


def fit_gbt_matrix(X: np.ndarray, y: np.ndarray, X_valid: np.ndarray, y_valid: np.ndarray,
                   params: GbtParams) -> GbtModel:
    """Boost trees on a design matrix with early stopping on validation AUPRC."""
    _check_labels(y)
    base_score = float(logit(y.mean()))
    sorted_index = [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]
    score = np.full(X.shape[0], base_score)
    valid_score = np.full(X_valid.shape[0], base_score)
    can_stop = y_valid.size > 0 and y_valid.sum() > 0

    trees: List[RegressionTree] = []
    history: List[float] = []
    best_value, best_iteration = -np.inf, 0
    for round_index in range(params.n_trees):
        prob = expit(score)
        grad = prob - y
        hess = prob * (1.0 - prob)
        tree = build_tree(X, grad, hess, sorted_index, params)
        trees.append(tree)
        score += tree.predict(X)
        if X_valid.shape[0]:
            valid_score += tree.predict(X_valid)
        if not can_stop:
            best_iteration = len(trees)
            continue
        value = auprc(expit(valid_score), y_valid)
        history.append(value)
        logger.debug(f"boosting round {round_index + 1}: valid AUPRC {value:.5f}")
        if value > best_value:
            best_value, best_iteration = value, len(trees)
        elif len(trees) - best_iteration >= params.early_stopping_rounds:
            logger.debug(f"early stopping after {len(trees)} rounds")
            break

    return GbtModel(
        trees=trees[:best_iteration],
        base_score=base_score,
        learning_rate=params.learning_rate,
        max_depth=params.max_depth,
        n_trees=params.n_trees,
        best_iteration=best_iteration,
        valid_history=history,
    )


def train_gbt(train: Sequence[TrainingExample], valid: Sequence[TrainingExample],
              params: GbtParams, edges: BucketEdges) -> GbtModel:
    """
    Train the tree ensemble on raw feedback counts without interaction features.

    Raises:
        DegenerateDataError: empty or single-class training labels
    """
    if not train:
        raise DegenerateDataError("Training set is empty")
    schema = FeatureSchema("gbt", edges, n_static=len(train[0].features.static))
    X = schema.matrix([e.features for e in train])
    X_valid = schema.matrix([e.features for e in valid])
    model = fit_gbt_matrix(X, labels_of(train), X_valid, labels_of(valid), params)
    model.schema = schema
    logger.info(f"Trained GBT: {len(model.trees)} trees kept of {params.n_trees}")
    return model


def gbt_from_dict(data: Dict[str, Any], schema: FeatureSchema) -> GbtModel:
    try:
        return GbtModel(
            trees=[RegressionTree.from_dict(t) for t in data["trees"]],
            base_score=float(data["base_score"]),
            learning_rate=float(data["learning_rate"]),
            max_depth=int(data["max_depth"]),
            n_trees=int(data["n_trees"]),
            schema=schema,
            best_iteration=int(data.get("best_iteration", 0)),
            valid_history=[float(v) for v in data.get("valid_history", [])],
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"Malformed GBT model: {e}") from e
