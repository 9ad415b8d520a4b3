import numpy as np
import pytest

from conftest import EDGES, make_fv, small_ecosystem, synthetic_examples
from datagen import BucketEdges, FeatureSchema, TimelineConfig, collect_examples, collect_features, split_dataset
from errors import ConfigurationError, SchemaError, SingularDesignError
from models import LogisticModel, predict, train_logistic
from ranking import ConstantEngagement, PolicyKind, RankingPolicy, pcreate_utility_delta
from sensitivity import (DEFAULT_FLOOR, LevelGrid, build_snapshot, delta_at, fit_exp_decay, level_deltas,
                         read_snapshot, write_snapshot)
from simulation import Simulator, generate_world


def pinv_fit(values, deltas, floor=DEFAULT_FLOOR):
    V = np.column_stack([np.ones(len(values)), values])
    return np.linalg.pinv(V) @ np.log(np.maximum(deltas, floor))


def bucket_model(lambdas, mu=-2.0):
    schema = FeatureSchema("logistic", EDGES, n_static=2)
    return LogisticModel(mu=mu, gamma=np.zeros(len(schema.gamma_names)), lambda_=np.asarray(lambdas, dtype=float),
                         beta=np.zeros(len(schema.interaction_names)), l2=0.0, schema=schema)


def test_grid_from_edges_uses_levels_above_zero():
    grid = LevelGrid.from_edges(EDGES)
    assert grid.values == (1.0, 2.0, 5.0, 10.0, 25.0)
    assert grid.V.shape == (5, 2)
    assert np.all(grid.V[:, 0] == 1.0)


def test_grid_validation():
    with pytest.raises(ConfigurationError):
        LevelGrid((1.0,))
    with pytest.raises(ConfigurationError):
        LevelGrid((2.0, 2.0))
    with pytest.raises(ConfigurationError):
        LevelGrid((0.0, 1.0))


def test_two_level_edges_still_give_a_fittable_grid():
    edges = BucketEdges((0, 1))
    grid = LevelGrid.from_edges(edges)
    assert grid.values == (1.0, 2.0)

    examples = synthetic_examples(400, seed=5, edges=edges)
    train, valid, _ = split_dataset(examples, [0.7, 0.15, 0.15], seed=0)
    model = train_logistic(train, valid, [1e-2], edges)
    snapshot = build_snapshot(model, {e.user_id: e.features for e in examples[:10]}, grid)
    curve = snapshot.curve(examples[0].user_id)
    assert len(curve.deltas) == 2
    assert curve.deltas[1] == pytest.approx(0.0, abs=1e-12)


def test_fit_recovers_exact_exponential():
    deltas = np.exp(-2 - 0.5 * np.array([1.0, 5.0]))
    b, tau, rss, clamped = fit_exp_decay([1, 5], deltas)
    assert b == pytest.approx(-2.0, abs=1e-9)
    assert tau == pytest.approx(-0.5, abs=1e-9)
    assert rss == pytest.approx(0.0, abs=1e-18)
    assert clamped == frozenset()


def test_fit_matches_pseudo_inverse_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        K = int(rng.integers(2, 8))
        values = np.cumsum(rng.uniform(0.5, 3.0, size=K))
        deltas = np.exp(rng.normal(-3, 1, size=K))
        b, tau, _, _ = fit_exp_decay(values, deltas)
        expected = pinv_fit(values, deltas)
        assert b == pytest.approx(expected[0], abs=1e-9)
        assert tau == pytest.approx(expected[1], abs=1e-9)


def test_fit_clamps_nonpositive_deltas():
    b, tau, _, clamped = fit_exp_decay([1, 2, 5], [0.1, 0.0, -0.02])
    assert clamped == frozenset({2, 3})
    expected = pinv_fit([1, 2, 5], np.array([0.1, DEFAULT_FLOOR, DEFAULT_FLOOR]))
    assert (b, tau) == pytest.approx(tuple(expected), abs=1e-9)


def test_constant_deltas_give_zero_tau():
    _, tau, rss, _ = fit_exp_decay([1, 2, 5, 10], [0.01] * 4)
    assert tau == pytest.approx(0.0, abs=1e-12)
    assert rss == pytest.approx(0.0, abs=1e-18)


def test_equal_grid_values_are_singular():
    with pytest.raises(SingularDesignError):
        fit_exp_decay([3.0, 3.0], [0.1, 0.2])


def test_delta_at_rederives_bucket():
    model = bucket_model([0.0, 0.5, 0.8, 1.0, 1.1, 1.15])
    fv = make_fv(0)
    expected = predict(model, make_fv(1)) - predict(model, fv)
    assert delta_at(model, fv, 1) == pytest.approx(expected)
    assert delta_at(model, fv, 1) > 0


def test_feedback_blind_model_has_zero_delta():
    model = bucket_model(np.zeros(EDGES.levels))
    assert delta_at(model, make_fv(3), 1) == 0.0
    assert np.all(level_deltas(model, make_fv(0), LevelGrid.from_edges(EDGES)) == 0.0)


def test_level_deltas_are_slopes():
    model = bucket_model([0.0, 0.5, 0.8, 1.0, 1.1, 1.15])
    grid = LevelGrid.from_edges(EDGES)
    deltas = level_deltas(model, make_fv(4), grid)
    p = [predict(model, make_fv(v)) for v in (0, 1, 2, 5, 10, 25)]
    expected = [(p[k] - p[k - 1]) / (grid.values[k - 1] - (grid.values[k - 2] if k > 1 else 0))
                for k in range(1, 6)]
    assert deltas == pytest.approx(expected)


def test_snapshot_of_blind_model_clamps_everything():
    model = bucket_model(np.zeros(EDGES.levels))
    snapshot = build_snapshot(model, {0: make_fv(2)}, LevelGrid.from_edges(EDGES))
    curve = snapshot.curve(0)
    assert curve.clamped_levels == frozenset(range(1, 6))
    assert curve.tau == pytest.approx(0.0, abs=1e-12)
    assert curve.b == pytest.approx(np.log(DEFAULT_FLOOR))


def test_snapshot_rows_match_independent_refit(tmp_path):
    examples = synthetic_examples(800, seed=5)
    train, valid, _ = split_dataset(examples, [0.7, 0.15, 0.15], seed=5)
    model = train_logistic(train, valid, [1e-2], EDGES)
    grid = LevelGrid.from_edges(EDGES)
    features = {e.user_id: e.features for e in examples[:40]}
    snapshot = build_snapshot(model, features, grid)
    assert len(snapshot) == 40
    for user in list(features)[::4]:
        deltas = level_deltas(model, features[user], grid)
        b, tau, _, _ = fit_exp_decay(grid, deltas)
        assert snapshot.curve(user).b == pytest.approx(b, abs=1e-12)
        assert snapshot.curve(user).tau == pytest.approx(tau, abs=1e-12)

    path = tmp_path / "snapshot.csv"
    write_snapshot(snapshot, path)
    loaded = read_snapshot(path)
    assert loaded.grid == grid
    assert loaded.model_hash == snapshot.model_hash
    for user, curve in snapshot.curves.items():
        assert loaded.curve(user).clamped_levels == curve.clamped_levels
        assert loaded.curve(user).tau == pytest.approx(curve.tau, rel=1e-11)


def test_snapshot_rejects_schema_mismatch():
    model = bucket_model(np.zeros(EDGES.levels))
    with pytest.raises(SchemaError):
        build_snapshot(model, {0: make_fv(1, static=(1.0,))}, LevelGrid.from_edges(EDGES))


def test_read_snapshot_rejects_other_artifacts(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("# schema_version=1 kind=examples\nuser_id\n1\n", encoding="utf-8")
    with pytest.raises(SchemaError):
        read_snapshot(path)


def test_two_point_fit_by_hand():
    b, tau, rss, _ = fit_exp_decay([1, 5], [0.1, 0.02])
    assert tau == pytest.approx(-0.402359, abs=1e-6)
    assert b == pytest.approx(-1.900226, abs=1e-6)
    assert rss == pytest.approx(0.0, abs=1e-18)


def test_delta_at_closed_form():
    lambdas = np.full(EDGES.levels, 0.5)
    lambdas[0] = 0.0
    model = bucket_model(lambdas, mu=0.0)
    assert delta_at(model, make_fv(0), 1) == pytest.approx(0.122459, abs=1e-6)


@pytest.mark.slow
def test_median_first_level_delta_recovers_cohort_ordering():
    gains = {"Monthly": 3.0, "Daily": 1.5, "Weekly": 0.5}
    grid = LevelGrid.from_edges(EDGES)
    recovered = 0
    for seed in range(10):
        examples = synthetic_examples(10000, seed=seed, cohort_gain=gains, feedback_mean=1.0)
        train, valid, _ = split_dataset(examples, [0.7, 0.15, 0.15], seed=seed)
        model = train_logistic(train, valid, [1e-3], EDGES)
        snapshot = build_snapshot(model, {e.user_id: e.features for e in examples}, grid)
        medians = {}
        for cohort in gains:
            deltas = [snapshot.curves[e.user_id].deltas[0] for e in examples if e.features.activity_level == cohort]
            medians[cohort] = np.median(deltas)
        recovered += medians["Monthly"] > medians["Daily"] > medians["Weekly"]
    assert recovered >= 9


@pytest.mark.slow
def test_simulated_pipeline_recovers_cohort_ordering():
    gains = {"Monthly": [2.8, 3.2], "Daily": [1.3, 1.7], "Weekly": [0.2, 0.4], "Inactive": [0.2, 0.4]}
    cfg = small_ecosystem(
        n_users=1500, n_ticks=49,
        visit_prob={level: 0.6 for level in gains},
        behavior={level: {"base": [-3.8, -3.2], "gain": gain, "rho": [0.3, 0.3]} for level, gain in gains.items()},
    )
    simulator = Simulator(generate_world(cfg, seed=12), ConstantEngagement(0.5, 0.2), expected_window=7, horizon=7)
    log = simulator.run(RankingPolicy(PolicyKind.CONSUMER_ONLY), cfg.n_ticks, seed=3)
    population = simulator.world.population

    examples = [e for t in range(7, 43, 7) for e in collect_examples(log, population, TimelineConfig(t, 7, 7), EDGES)]
    train, valid, _ = split_dataset(examples, [0.7, 0.15, 0.15], seed=0)
    model = train_logistic(train, valid, [1e-3], EDGES)
    features = collect_features(log, population, log.n_ticks, 7, EDGES)
    snapshot = build_snapshot(model, features, LevelGrid.from_edges(EDGES))

    medians = {}
    for cohort in ("Monthly", "Daily", "Weekly"):
        users = [u for u, fv in features.items() if fv.activity_level == cohort]
        medians[cohort] = np.median([snapshot.curves[u].deltas[0] for u in users])
    assert medians["Monthly"] > medians["Daily"] > medians["Weekly"]


def test_delta_utility_is_the_first_unit_delta_of_the_model(examples):
    train, valid, _ = split_dataset(examples, [0.7, 0.15, 0.15], seed=0)
    model = train_logistic(train, valid, [1e-2], EDGES)
    features = {e.user_id: e.features for e in examples[:60]}
    snapshot = build_snapshot(model, features, LevelGrid.from_edges(EDGES))
    for user, fv in features.items():
        expected = max(delta_at(model, fv.with_feedback(0, EDGES), 1), 0.0)
        assert pcreate_utility_delta(snapshot.curve(user)) == pytest.approx(expected, abs=1e-12)
