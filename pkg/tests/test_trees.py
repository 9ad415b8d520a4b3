import numpy as np
import pytest
from scipy.special import expit

from conftest import EDGES
from datagen import split_dataset
from errors import DegenerateDataError
from metrics import auroc
from models import fit_logistic
from trees import (GbtModel, GbtParams, RegressionTree, build_tree, find_best_split, fit_gbt_matrix, split_gain,
                   train_gbt)


def sorted_index(X):
    return [np.argsort(X[:, j], kind="stable") for j in range(X.shape[1])]


def test_split_gain_is_zero_for_identical_children():
    gain = split_gain(np.array(-2.0), np.array(3.0), np.array(-2.0), np.array(3.0), reg_lambda=0.0)
    assert gain == pytest.approx(0.0)


def test_best_split_separates_gradient_signs():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    grad = np.array([-1.0, -1.0, 1.0, 1.0])
    hess = np.ones(4)
    feature, threshold, gain = find_best_split(X, grad, hess, np.arange(4), sorted_index(X), GbtParams(reg_lambda=0.0))
    assert feature == 0
    assert threshold == pytest.approx(1.5)
    assert gain > 0


def test_tied_gain_prefers_lowest_feature():
    X = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]])
    grad = np.array([-1.0, -1.0, 1.0, 1.0])
    split = find_best_split(X, grad, np.ones(4), np.arange(4), sorted_index(X), GbtParams())
    assert split[0] == 0


def test_no_split_on_constant_feature():
    X = np.zeros((5, 1))
    split = find_best_split(X, np.arange(5.0) - 2, np.ones(5), np.arange(5), sorted_index(X), GbtParams())
    assert split is None


def test_min_child_weight_blocks_small_leaves():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    grad = np.array([-1.0, 1.0, 1.0, 1.0])
    split = find_best_split(X, grad, np.ones(4), np.arange(4), sorted_index(X), GbtParams(min_child_weight=2.0))
    assert split is None or split[1] == pytest.approx(1.5)


def test_build_tree_respects_depth():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(200, 3))
    grad = np.sign(X[:, 0]) * 0.5
    tree = build_tree(X, grad, np.full(200, 0.25), sorted_index(X), GbtParams(max_depth=2))

    def depth(node):
        if tree.feature[node] == -1:
            return 0
        return 1 + max(depth(tree.left[node]), depth(tree.right[node]))

    assert depth(0) <= 2
    assert tree.feature[0] == 0


def test_tree_dict_round_trip_predicts_identically():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(50, 2))
    tree = build_tree(X, X[:, 1], np.ones(50), sorted_index(X), GbtParams(max_depth=3))
    clone = RegressionTree.from_dict(tree.to_dict())
    assert np.array_equal(tree.predict(X), clone.predict(X))


def test_boosting_fits_step_function_and_stops_early():
    rng = np.random.default_rng(2)
    X = rng.random((400, 2))
    y = (X[:, 0] > 0.5).astype(float)
    Xv = rng.random((100, 2))
    yv = (Xv[:, 0] > 0.5).astype(float)
    model = fit_gbt_matrix(X, y, Xv, yv, GbtParams(n_trees=200, early_stopping_rounds=5))
    assert len(model.trees) == model.best_iteration < 200
    predictions = model.predict_matrix(Xv)
    assert np.mean((predictions > 0.5) == yv) > 0.95


def test_single_class_raises():
    X = np.zeros((10, 1))
    with pytest.raises(DegenerateDataError):
        fit_gbt_matrix(X, np.ones(10), X, np.ones(10), GbtParams())


def test_train_gbt_uses_raw_feedback_schema(examples):
    train, valid, _ = split_dataset(examples, [0.7, 0.15, 0.15], seed=0)
    model = train_gbt(train, valid, GbtParams(n_trees=20, max_depth=3), EDGES)
    assert model.schema.family == "gbt"
    assert model.schema.names[0] == "a"
    assert 1 <= len(model.trees) <= 20


def xor_data(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 2))
    y = ((X[:, 0] > 0.5) ^ (X[:, 1] > 0.5)).astype(float)
    return X, y


def test_trees_learn_xor_that_logistic_cannot():
    X, y = xor_data(1000, seed=3)
    X_test, y_test = xor_data(1000, seed=4)
    empty = np.empty((0, 2))
    model = fit_gbt_matrix(X, y, empty, np.empty(0), GbtParams(max_depth=3, learning_rate=0.3, n_trees=100))
    assert len(model.trees) == 100
    assert auroc(model.predict_matrix(X_test), y_test) >= 0.95

    theta = fit_logistic(X, y, l2=0.0).theta
    assert auroc(theta[0] + X_test @ theta[1:], y_test) <= 0.6


def test_zero_trees_predict_the_base_rate():
    X = np.arange(20.0).reshape(10, 2)
    y = np.array([1, 0, 0, 1, 0, 0, 0, 1, 0, 0], dtype=float)
    model = fit_gbt_matrix(X, y, X, y, GbtParams(n_trees=0))
    assert model.trees == []
    assert np.allclose(model.predict_matrix(X), 0.3)


def test_single_leaf_predicts_its_sigmoid():
    model = GbtModel(trees=[RegressionTree.leaf(0.3)], base_score=0.0, learning_rate=0.1, max_depth=1, n_trees=1)
    assert np.allclose(model.predict_matrix(np.zeros((4, 3))), expit(0.3))


def scanned_stump(X, grad, hess, reg_lambda):
    best = None
    for j in range(X.shape[1]):
        values = np.unique(X[:, j])
        for low, high in zip(values[:-1], values[1:]):
            threshold = 0.5 * (low + high)
            left = X[:, j] < threshold
            gl, hl = grad[left].sum(), hess[left].sum()
            gr, hr = grad[~left].sum(), hess[~left].sum()
            gain = 0.5 * (gl ** 2 / (hl + reg_lambda) + gr ** 2 / (hr + reg_lambda)
                          - (gl + gr) ** 2 / (hl + hr + reg_lambda))
            if best is None or gain > best[2]:
                best = (j, threshold, gain)
    return best


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_stump_matches_exhaustive_threshold_scan(seed):
    rng = np.random.default_rng(seed)
    X = np.round(rng.normal(size=(60, 3)), 2)
    grad = rng.normal(size=60)
    hess = rng.uniform(0.1, 0.25, size=60)
    params = GbtParams(max_depth=1, min_child_weight=0.0, reg_lambda=1.0, learning_rate=0.5)
    tree = build_tree(X, grad, hess, sorted_index(X), params)

    feature, threshold, _ = scanned_stump(X, grad, hess, params.reg_lambda)
    assert tree.feature[0] == feature
    assert tree.threshold[0] == pytest.approx(threshold)
    left = X[:, feature] < threshold
    expected = np.where(left,
                        -grad[left].sum() / (hess[left].sum() + 1.0) * 0.5,
                        -grad[~left].sum() / (hess[~left].sum() + 1.0) * 0.5)
    assert np.allclose(tree.predict(X), expected)
