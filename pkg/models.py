"""pCreate response models: L2 logistic regression, prediction, cohort evaluation and model files."""
import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from artifacts import PathLike, read_json, write_csv, write_json
from datagen import (ACTIVITY_CATEGORIES, CONTRIBUTION_CATEGORIES, BucketEdges, FeatureSchema, FeatureVector,
                     TrainingExample, labels_of)
from errors import ConfigurationError, DegenerateDataError, SchemaError, UndefinedMetricError
from logger import setup_logger
from metrics import auprc, auroc
from trees import GbtModel, gbt_from_dict

logger = setup_logger()

MODEL_FORMAT = "feedlab-model"
MODEL_VERSION = 1
PROB_EPS = 1e-15


@dataclass
class LogisticFit:
    theta: np.ndarray
    loss_history: List[float]
    converged: bool
    iterations: int


def logistic_objective(theta: np.ndarray, X: np.ndarray, y: np.ndarray,
                       l2: float) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    Regularized mean negative log-likelihood with gradient and Hessian.

    theta[0] is the unpenalized intercept; theta[1:] pairs with the columns of X.
    """
    n = X.shape[0]
    z = theta[0] + X @ theta[1:]
    p = expit(z)
    weights = theta[1:]
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * weights @ weights)

    residual = (p - y) / n
    grad = np.empty_like(theta)
    grad[0] = residual.sum()
    grad[1:] = X.T @ residual + l2 * weights

    curvature = p * (1.0 - p) / n
    hess = np.empty((theta.size, theta.size))
    hess[0, 0] = curvature.sum()
    hess[0, 1:] = hess[1:, 0] = X.T @ curvature
    hess[1:, 1:] = (X * curvature[:, None]).T @ X + l2 * np.eye(theta.size - 1)
    return loss, grad, hess


def _loss(theta: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> float:
    z = theta[0] + X @ theta[1:]
    return float(np.mean(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * theta[1:] @ theta[1:])


def fit_logistic(X: np.ndarray, y: np.ndarray, l2: float, max_iter: int = 500,
                 tol: float = 1e-6) -> LogisticFit:
    """
    Damped Newton on the regularized NLL.

    Starts at the intercept-only MLE; each step is backtracked until the
    Armijo condition holds, so the loss never increases across accepted steps.
    Stops when the gradient norm is <= tol, after max_iter steps, or when no
    step length decreases the loss.
    """
    positive_rate = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    theta = np.zeros(X.shape[1] + 1)
    theta[0] = logit(positive_rate)
    loss, grad, hess = logistic_objective(theta, X, y, l2)
    history = [loss]
    converged = False

    iterations = 0
    for iterations in range(1, max_iter + 1):
        if np.linalg.norm(grad) <= tol:
            converged = True
            break
        step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        slope = float(grad @ step)
        if not slope > 0:
            step, slope = grad, float(grad @ grad)

        length = 1.0
        accepted = False
        for _ in range(50):
            candidate = theta - length * step
            candidate_loss = _loss(candidate, X, y, l2)
            if candidate_loss <= loss - 1e-4 * length * slope:
                accepted = True
                break
            length *= 0.5
        if not accepted:
            logger.debug(f"Newton line search stalled at iteration {iterations}")
            converged = np.linalg.norm(grad) <= np.sqrt(tol)
            break

        theta = candidate
        loss, grad, hess = logistic_objective(theta, X, y, l2)
        history.append(loss)
        logger.debug(f"Newton step {iterations}: loss {loss:.8f}, |grad| {np.linalg.norm(grad):.3e}")
    else:
        converged = np.linalg.norm(grad) <= tol

    return LogisticFit(theta=theta, loss_history=history, converged=converged, iterations=iterations)


def _selection_score(X_valid: np.ndarray, y_valid: np.ndarray, theta: np.ndarray) -> float:
    """Validation AUPRC, or negative validation loss when AUPRC is undefined."""
    if y_valid.size and y_valid.sum() > 0:
        return auprc(expit(theta[0] + X_valid @ theta[1:]), y_valid)
    if y_valid.size:
        return -_loss(theta, X_valid, y_valid, 0.0)
    return 0.0


def select_l2(X: np.ndarray, y: np.ndarray, X_valid: np.ndarray, y_valid: np.ndarray,
              l2_grid: Sequence[float], max_iter: int = 500, tol: float = 1e-6) -> Tuple[LogisticFit, float]:
    """Fit one model per l2 value and keep the one with the best validation score."""
    if y.size == 0 or y.min() == y.max():
        raise DegenerateDataError("Training labels must contain both classes")
    if not l2_grid:
        raise ConfigurationError("l2_grid must not be empty")
    best: Optional[Tuple[float, LogisticFit, float]] = None
    for l2 in l2_grid:
        fit = fit_logistic(X, y, l2, max_iter, tol)
        score = _selection_score(X_valid, y_valid, fit.theta)
        logger.debug(f"l2={l2:g}: validation score {score:.5f} after {fit.iterations} iterations")
        if best is None or score > best[0]:
            best = (score, fit, float(l2))
    return best[1], best[2]


@dataclass
class LogisticModel:
    """Coefficient blocks: mu, gamma (static/activity/cohort), lambda_ (per bucket level, level 1 = 0), beta."""

    mu: float
    gamma: np.ndarray
    lambda_: np.ndarray
    beta: np.ndarray
    l2: float
    schema: FeatureSchema
    loss_history: List[float] = field(default_factory=list)
    converged: bool = True

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.lambda_ = np.asarray(self.lambda_, dtype=float)
        self.beta = np.asarray(self.beta, dtype=float)
        expected = (len(self.schema.gamma_names), self.schema.edges.levels, len(self.schema.interaction_names))
        actual = (self.gamma.size, self.lambda_.size, self.beta.size)
        if expected != actual:
            raise SchemaError(f"Coefficient block sizes {actual} do not match schema {expected}")

    @classmethod
    def from_theta(cls, theta: np.ndarray, schema: FeatureSchema, l2: float, **kwargs: Any) -> "LogisticModel":
        n_gamma = len(schema.gamma_names)
        n_bucket = len(schema.bucket_names)
        return cls(
            mu=float(theta[0]),
            gamma=theta[1:1 + n_gamma],
            lambda_=np.r_[0.0, theta[1 + n_gamma:1 + n_gamma + n_bucket]],
            beta=theta[1 + n_gamma + n_bucket:],
            l2=l2,
            schema=schema,
            **kwargs,
        )

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([self.gamma, self.lambda_[1:], self.beta])

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.mu + X @ self.weights

    def predict_matrix(self, X: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(X))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "family": "logistic",
            "mu": self.mu,
            "gamma": self.gamma.tolist(),
            "lambda": self.lambda_.tolist(),
            "beta": self.beta.tolist(),
            "l2": self.l2,
            "converged": self.converged,
            "loss_history": self.loss_history,
        }


CreateModel = Union[LogisticModel, GbtModel]


def train_logistic(train: Sequence[TrainingExample], valid: Sequence[TrainingExample],
                   l2_grid: Sequence[float], edges: BucketEdges, interactions: bool = True,
                   max_iter: int = 500, tol: float = 1e-6) -> LogisticModel:
    """
    Train the bucketized logistic pCreate model, picking l2 by validation AUPRC.

    Raises:
        DegenerateDataError: empty or single-class training labels
    """
    if not train:
        raise DegenerateDataError("Training set is empty")
    schema = FeatureSchema("logistic", edges, n_static=len(train[0].features.static), interactions=interactions)
    X = schema.matrix([e.features for e in train])
    X_valid = schema.matrix([e.features for e in valid])
    fit, l2 = select_l2(X, labels_of(train), X_valid, labels_of(valid), l2_grid, max_iter, tol)
    model = LogisticModel.from_theta(fit.theta, schema, l2, loss_history=fit.loss_history,
                                     converged=fit.converged)
    logger.info(f"Trained logistic model: l2={l2:g}, {fit.iterations} Newton iterations, "
                f"converged={fit.converged}")
    return model


def predict_many(model: CreateModel, features: Sequence[FeatureVector]) -> np.ndarray:
    if model.schema is None:
        raise SchemaError("Model carries no feature schema")
    probs = model.predict_matrix(model.schema.matrix(features))
    return np.clip(probs, PROB_EPS, 1.0 - PROB_EPS)


def predict(model: CreateModel, features: FeatureVector) -> float:
    """P(Y > 0 | X) for one feature vector."""
    return float(predict_many(model, [features])[0])


# -- evaluation ---------------------------------------------------------------

SEGMENTATIONS = ("activity", "contribution")
ALL_SEGMENT = "All"


@dataclass
class EvalRow:
    segmentation: str
    segment: str
    auroc: Optional[float]
    auprc: Optional[float]
    n: int
    positives: int


@dataclass
class EvalReport:
    rows: List[EvalRow]

    def segments(self) -> List[str]:
        return [row.segment for row in self.rows]

    def row(self, segment: str) -> EvalRow:
        for row in self.rows:
            if row.segment == segment:
                return row
        raise KeyError(segment)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.__dict__ for row in self.rows],
                            columns=["segmentation", "segment", "auroc", "auprc", "n", "positives"])


def _segment_metrics(scores: np.ndarray, labels: np.ndarray) -> Tuple[Optional[float], Optional[float]]:
    try:
        return auroc(scores, labels), auprc(scores, labels)
    except UndefinedMetricError:
        return None, None


def segment_eval(model: CreateModel, test: Sequence[TrainingExample], segmentation: str = "activity") -> EvalReport:
    """
    AUROC/AUPRC overall and per cohort segment.

    Segments missing a label class are reported with n and null metrics.
    """
    if segmentation not in SEGMENTATIONS:
        raise ConfigurationError(f"segmentation must be one of {SEGMENTATIONS}")
    if not test:
        raise DegenerateDataError("Test set is empty")
    scores = predict_many(model, [e.features for e in test])
    labels = labels_of(test)
    if segmentation == "activity":
        keys = np.array([e.features.activity_level for e in test])
        order = ACTIVITY_CATEGORIES
    else:
        keys = np.array([e.features.contribution_level for e in test])
        order = CONTRIBUTION_CATEGORIES

    rows = []
    auroc_all, auprc_all = _segment_metrics(scores, labels)
    rows.append(EvalRow(segmentation, ALL_SEGMENT, auroc_all, auprc_all, labels.size, int(labels.sum())))
    for segment in order:
        mask = keys == segment
        if not mask.any():
            continue
        seg_auroc, seg_auprc = _segment_metrics(scores[mask], labels[mask])
        if seg_auroc is None:
            logger.warning(f"Segment {segment} has a single label class; metrics reported as null")
        rows.append(EvalRow(segmentation, segment, seg_auroc, seg_auprc, int(mask.sum()), int(labels[mask].sum())))
    return EvalReport(rows)


def write_eval_report(reports: Sequence[EvalReport], path: PathLike, meta: Dict[str, Any]) -> None:
    frame = pd.concat([r.to_frame() for r in reports], ignore_index=True)
    write_csv(path, frame, {"kind": "eval_report", **meta})


# -- model files ----------------------------------------------------------------

def model_document(model: CreateModel) -> Dict[str, Any]:
    return {"format": MODEL_FORMAT, "version": MODEL_VERSION, "schema": model.schema.to_dict(), **model.to_dict()}


def model_hash(model: CreateModel) -> str:
    canonical = json.dumps(model_document(model), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def save_model(model: CreateModel, path: PathLike) -> None:
    write_json(path, model_document(model))


def load_model(path: PathLike) -> CreateModel:
    """
    Load a model file written by save_model.

    Raises:
        SchemaError: wrong format/version or malformed content
    """
    document = read_json(path)
    if document.get("format") != MODEL_FORMAT or document.get("version") != MODEL_VERSION:
        raise SchemaError(f"{path}: not a version {MODEL_VERSION} {MODEL_FORMAT} document")
    schema = FeatureSchema.from_dict(document.get("schema", {}))
    family = document.get("family")
    if family == "gbt":
        return gbt_from_dict(document, schema)
    if family != "logistic":
        raise SchemaError(f"{path}: unknown model family {family!r}")
    try:
        return LogisticModel(
            mu=float(document["mu"]),
            gamma=document["gamma"],
            lambda_=document["lambda"],
            beta=document["beta"],
            l2=float(document["l2"]),
            schema=schema,
            loss_history=[float(v) for v in document.get("loss_history", [])],
            converged=bool(document.get("converged", True)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise SchemaError(f"{path}: malformed logistic model ({e})") from e
