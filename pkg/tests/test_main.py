import json

import pytest

from artifacts import read_csv
from main import main

TINY = {
    "seed": 3,
    "ecosystem": {"n_users": 150, "mean_degree": 6, "n_ticks": 21, "warmup_ticks": 4, "slate_size": 4},
    "timeline": {"u": 7, "w": 7},
    "model": {"l2_grid": [0.01, 0.1]},
    "experiment": {"ticks": 10, "measure_window": 5, "n_egos": 4, "min_alters": 3,
                   "alpha_grid": [1.0, 0.5], "sweep_seeds": 2},
}


def write_config(directory, document=TINY):
    path = directory / "run.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    return str(path)


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("run")
    config = write_config(directory)
    for command in ("simulate", "train", "estimate"):
        assert main(["--config", config, "--out", str(directory), command]) == 0
    return directory


def test_simulate_writes_consistent_artifacts(run_dir):
    population, _ = read_csv(run_dir / "population.csv")
    graph, meta = read_csv(run_dir / "graph.csv")
    assert len(population) == 150
    assert int(meta["n_users"]) == 150
    assert graph["follower"].max() < 150
    first = (run_dir / "events.jsonl").read_text(encoding="utf-8").splitlines()[0]
    assert "seed=3" in first and "n_ticks=21" in first


def test_rerun_with_same_seed_is_identical(run_dir, tmp_path):
    config = write_config(tmp_path)
    assert main(["--config", config, "--out", str(tmp_path / "again"), "simulate"]) == 0
    for name in ("events.jsonl", "population.csv", "graph.csv"):
        assert (tmp_path / "again" / name).read_bytes() == (run_dir / name).read_bytes()


def test_train_reports_cohorts(run_dir):
    report, meta = read_csv(run_dir / "eval_report.csv")
    assert meta["family"] == "logistic"
    activity = set(report.loc[report["segmentation"] == "activity", "segment"])
    assert "All" in activity
    assert activity <= {"All", "Daily", "Weekly", "Monthly", "Inactive"}


def test_estimate_writes_one_row_per_user(run_dir):
    snapshot, meta = read_csv(run_dir / "snapshot.csv", dtype={"clamped_mask": str})
    assert len(snapshot) == 150
    assert snapshot["user_id"].is_monotonic_increasing
    assert meta["grid"] == "1.0,2.0,5.0,10.0,25.0"


def test_experiment_and_report(run_dir):
    config = write_config(run_dir)
    assert main(["--config", config, "--out", str(run_dir), "experiment", "--mode", "consumer"]) == 0
    effects, meta = read_csv(run_dir / "experiment_consumer.csv")
    assert {"metric", "label"} <= set(effects.columns)
    assert meta["treatment"].startswith("PCreateParam")

    assert main(["--config", config, "--out", str(run_dir), "experiment", "--mode", "sweep"]) == 0
    sweep, _ = read_csv(run_dir / "alpha_sweep.csv")
    assert sweep["alpha"].tolist() == [1.0, 0.5]

    assert main(["--config", config, "--out", str(run_dir), "report"]) == 0
    curve, _ = read_csv(run_dir / "creation_curve.csv")
    assert {"feedback_level", "mean_p", "ci_lo", "ci_hi"} <= set(curve.columns)
    assert (curve["ci_lo"] <= curve["mean_p"]).all() and (curve["mean_p"] <= curve["ci_hi"]).all()
    tradeoff, _ = read_csv(run_dir / "alpha_tradeoff.csv")
    assert tradeoff.loc[tradeoff["alpha"] == 1.0, "consumer_ctr_change_pct"].iloc[0] == pytest.approx(0.0)


def test_existing_output_needs_overwrite(run_dir):
    config = write_config(run_dir)
    assert main(["--config", config, "--out", str(run_dir), "simulate"]) == 2


def test_missing_required_key_is_config_error(tmp_path, capsys):
    config = write_config(tmp_path, {"seed": 1})
    assert main(["--config", config, "--out", str(tmp_path), "simulate"]) == 2
    assert "ecosystem" in capsys.readouterr().err


def test_unknown_key_is_config_error(tmp_path):
    config = write_config(tmp_path, {**TINY, "colour": "blue"})
    assert main(["--config", config, "--out", str(tmp_path), "simulate"]) == 2


def test_mistyped_config_value_is_config_error(tmp_path, capsys):
    config = write_config(tmp_path, {**TINY, "ecosystem": {**TINY["ecosystem"], "n_users": "many"}})
    assert main(["--config", config, "--out", str(tmp_path), "simulate"]) == 2
    assert "ecosystem.n_users" in capsys.readouterr().err


def test_missing_input_is_data_error(tmp_path):
    config = write_config(tmp_path)
    assert main(["--config", config, "--out", str(tmp_path / "empty"), "train"]) == 3


def test_corrupt_model_is_contract_error(run_dir, tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "corrupt"
    out.mkdir()
    for name in ("events.jsonl", "population.csv"):
        (out / name).write_bytes((run_dir / name).read_bytes())
    (out / "model.json").write_text("{broken", encoding="utf-8")
    assert main(["--config", config, "--out", str(out), "estimate"]) == 4
    assert not (out / "snapshot.csv").exists()


def test_gbt_family_override(run_dir, tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "gbt"
    out.mkdir()
    for name in ("events.jsonl", "population.csv"):
        (out / name).write_bytes((run_dir / name).read_bytes())
    assert main(["--config", config, "--out", str(out), "train", "--family", "gbt"]) == 0
    model = json.loads((out / "model.json").read_text(encoding="utf-8"))
    assert model["family"] == "gbt"
    report, _ = read_csv(out / "eval_report.csv")
    assert "All" in set(report["segment"])


def test_estimate_rerun_is_byte_identical(run_dir):
    config = write_config(run_dir)
    before = (run_dir / "snapshot.csv").read_bytes()
    assert main(["--config", config, "--out", str(run_dir), "--overwrite", "estimate"]) == 0
    assert (run_dir / "snapshot.csv").read_bytes() == before


def test_ego_experiment_writes_effects(run_dir):
    config = write_config(run_dir)
    assert main(["--config", config, "--out", str(run_dir), "experiment", "--mode", "ego"]) == 0
    effects, meta = read_csv(run_dir / "experiment_ego.csv")
    assert meta["kind"] == "experiment_ego"
    assert {"metric", "label"} <= set(effects.columns)
    document = json.loads((run_dir / "experiment_ego.json").read_text(encoding="utf-8"))
    assert len(document["effects"]) == len(effects)
