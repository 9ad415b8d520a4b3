"""Main entry point for the creator feedback lab."""
import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

from artifacts import read_csv, write_csv, write_json
from config import RunConfig, load_run_config
from datagen import (BucketEdges, TimelineConfig, collect_examples, collect_features, read_examples,
                     split_dataset, write_examples)
from ecosystem import read_event_log, read_population, write_event_log, write_graph, write_population
from errors import ConfigurationError, ContractError, DataError
from experiments import (assign_treatments, run_consumer_ab, run_ego_experiment, select_ego_clusters,
                         sutva_bias_demo, sweep_alpha, write_effects)
from logger import setup_logger
from models import SEGMENTATIONS, load_model, save_model, segment_eval, train_logistic, write_eval_report
from ranking import PolicyKind, RankingPolicy, parse_policy_kind
from reporting import alpha_tradeoff, creation_curve, sensitivity_boxplots
from sensitivity import LevelGrid, build_snapshot, read_snapshot, write_snapshot
from simulation import Simulator, build_simulator, child_seeds
from trees import GbtParams, train_gbt

# Initialize logger
logger = setup_logger()

EVENTS = "events.jsonl"
POPULATION = "population.csv"
GRAPH = "graph.csv"
EXAMPLES = "examples.csv"
MODEL = "model.json"
EVAL_REPORT = "eval_report.csv"
SNAPSHOT = "snapshot.csv"
SWEEP = "alpha_sweep.csv"

EXPERIMENT_MODES = ("consumer", "ego", "sutva", "sweep")


class Stage:
    """Paths and settings shared by one command invocation."""

    def __init__(self, rc: RunConfig, out_dir: str, overwrite: bool = False):
        self.rc = rc
        self.out = Path(out_dir)
        self.overwrite = overwrite

    def input(self, name: str) -> Path:
        path = self.out / name
        if not path.exists():
            raise DataError(f"Missing input artifact {path}; run the earlier stage first")
        return path

    def outputs(self, *names: str) -> List[Path]:
        """
        Output paths for this stage.

        Raises:
            ConfigurationError: an output exists and --overwrite was not given
        """
        paths = [self.out / name for name in names]
        existing = [str(p) for p in paths if p.exists()]
        if existing and not self.overwrite:
            raise ConfigurationError(f"Output already exists: {', '.join(existing)} (use --overwrite)")
        self.out.mkdir(parents=True, exist_ok=True)
        return paths

    def meta(self, kind: str, **extra: object) -> Dict[str, object]:
        return {"kind": kind, "seed": self.rc.seed, **extra}

    def simulator(self) -> Simulator:
        rc = self.rc
        return build_simulator(rc.ecosystem, rc.stage_seed("world"), rc.policy.expected_feedback_window,
                               rc.timeline.w)


def run_simulate(stage: Stage) -> List[Path]:
    """Simulate the ecosystem under consumer-only ranking and write the log, population and graph."""
    events, population, graph = stage.outputs(EVENTS, POPULATION, GRAPH)
    rc = stage.rc
    simulator = stage.simulator()
    log = simulator.run(RankingPolicy(PolicyKind.CONSUMER_ONLY), rc.ecosystem.n_ticks, rc.stage_seed("simulate"))
    log.seed = rc.seed
    write_event_log(log, events)
    write_population(simulator.world.population, population, rc.seed)
    write_graph(simulator.world.graph, graph)
    logger.info(f"Wrote {len(log)} events for {rc.ecosystem.n_users} users")
    return [events, population, graph]


def _timeline(rc: RunConfig, n_ticks: int) -> TimelineConfig:
    t = rc.timeline.t if rc.timeline.t is not None else n_ticks - rc.timeline.w
    return TimelineConfig(t=t, u=rc.timeline.u, w=rc.timeline.w)


def run_train(stage: Stage) -> List[Path]:
    """Build examples from the log, train the configured model family and evaluate it per cohort."""
    examples_path, model_path, report_path = stage.outputs(EXAMPLES, MODEL, EVAL_REPORT)
    rc = stage.rc
    log = read_event_log(stage.input(EVENTS))
    population = read_population(stage.input(POPULATION))
    edges = BucketEdges(tuple(rc.buckets.edges))
    timeline = _timeline(rc, log.n_ticks)

    examples = collect_examples(log, population, timeline, edges)
    write_examples(examples, examples_path, rc.seed, timeline, edges)
    train, valid, test = split_dataset(examples, rc.model.split, rc.stage_seed("split"))

    settings = rc.model
    if settings.family == "logistic":
        model = train_logistic(train, valid, settings.l2_grid, edges, settings.interactions,
                               settings.max_iter, settings.tol)
    elif settings.family == "gbt":
        model = train_gbt(train, valid, GbtParams(**dataclasses.asdict(settings.gbt)), edges)
    else:
        raise ConfigurationError(f"Unknown model family '{settings.family}' (expected logistic or gbt)")

    save_model(model, model_path)
    reports = [segment_eval(model, test, segmentation) for segmentation in SEGMENTATIONS]
    write_eval_report(reports, report_path, stage.meta("eval_report", family=settings.family))
    overall = reports[0].row("All")
    logger.info(f"Test AUROC {overall.auroc}, AUPRC {overall.auprc} on {overall.n} examples")
    return [examples_path, model_path, report_path]


def run_estimate(stage: Stage) -> List[Path]:
    """Compute every user's sensitivity curve at the end of the log."""
    (snapshot_path,) = stage.outputs(SNAPSHOT)
    rc = stage.rc
    model = load_model(stage.input(MODEL))
    log = read_event_log(stage.input(EVENTS))
    population = read_population(stage.input(POPULATION))
    edges = model.schema.edges
    features = collect_features(log, population, log.n_ticks, rc.timeline.u, edges)
    snapshot = build_snapshot(model, features, LevelGrid.from_edges(edges), rc.policy.delta_floor)
    write_snapshot(snapshot, snapshot_path)
    return [snapshot_path]


def _policy(stage: Stage, kind: str, snapshot_path: Optional[str]) -> RankingPolicy:
    kind = parse_policy_kind(kind)
    snapshot = None
    if kind in (PolicyKind.PCREATE_DELTA, PolicyKind.PCREATE_PARAM):
        snapshot = read_snapshot(snapshot_path or stage.input(SNAPSHOT))
    return RankingPolicy(kind, stage.rc.policy.alpha, snapshot)


def run_experiment(stage: Stage, mode: str, snapshot_path: Optional[str] = None) -> List[Path]:
    """Run one online experiment design on a freshly simulated copy of the configured world."""
    if mode not in EXPERIMENT_MODES:
        raise ConfigurationError(f"Unknown experiment mode '{mode}' (expected one of {', '.join(EXPERIMENT_MODES)})")
    rc = stage.rc
    design = rc.experiment
    seed = rc.stage_seed(f"experiment-{mode}")

    if mode == "sweep":
        (sweep_path,) = stage.outputs(SWEEP)
        policy = _policy(stage, rc.policy.kind, snapshot_path)
        table = sweep_alpha(stage.simulator(), policy.kind, design.alpha_grid, child_seeds(seed, design.sweep_seeds),
                            design.ticks, policy.snapshot)
        write_csv(sweep_path, table, stage.meta("alpha_sweep", policy=policy.kind.value))
        return [sweep_path]

    if mode == "sutva":
        replicates_path, summary_path = stage.outputs("sutva_replicates.csv", "sutva_summary.json")
        report = sutva_bias_demo(stage.simulator(), design.effect_multiplier, design.replicates, design.n_egos,
                                 design.min_alters, design.max_overlap, design.ticks, design.measure_window, seed,
                                 split=design.split, response_horizon=design.response_horizon)
        write_csv(replicates_path, report.replicates, stage.meta("sutva", metric=report.metric))
        write_json(summary_path, {**stage.meta("sutva"), **report.summary()})
        logger.info(f"SUTVA demo: {report.summary()}")
        return [replicates_path, summary_path]

    csv_path, json_path = stage.outputs(f"experiment_{mode}.csv", f"experiment_{mode}.json")
    control = _policy(stage, design.control_kind, snapshot_path)
    treatment = _policy(stage, design.treatment_kind, snapshot_path)
    simulator = stage.simulator()
    if mode == "consumer":
        result = run_consumer_ab(simulator, control, treatment, design.split, design.ticks, seed,
                                 design.measure_window, design.response_horizon)
    else:
        select_seed, assign_seed, run_seed = child_seeds(seed, 3)
        clusters = select_ego_clusters(simulator.world.graph, design.n_egos, design.min_alters,
                                       design.max_overlap, select_seed)
        result = run_ego_experiment(simulator, assign_treatments(clusters, assign_seed), control, treatment,
                                    design.ticks, run_seed, design.measure_window, design.response_horizon)
    meta = stage.meta(f"experiment_{mode}", control=control.name, treatment=treatment.name)
    write_effects(result.effects(), csv_path, json_path, meta)
    return [csv_path, json_path]


def run_report(stage: Stage) -> List[Path]:
    """Turn the run directory's artifacts into plot-ready tables."""
    curve_path, box_path = stage.outputs("creation_curve.csv", "sensitivity_boxplot.csv")
    examples = read_examples(stage.input(EXAMPLES))
    write_csv(curve_path, creation_curve(examples), stage.meta("creation_curve"))
    snapshot = read_snapshot(stage.input(SNAPSHOT))
    population = read_population(stage.input(POPULATION))
    write_csv(box_path, sensitivity_boxplots(snapshot, population), stage.meta("sensitivity_boxplot"))
    written = [curve_path, box_path]

    if (stage.out / SWEEP).exists():
        (tradeoff_path,) = stage.outputs("alpha_tradeoff.csv")
        sweep, _ = read_csv(stage.out / SWEEP)
        write_csv(tradeoff_path, alpha_tradeoff(sweep), stage.meta("alpha_tradeoff"))
        written.append(tradeoff_path)
    else:
        logger.warning(f"No {SWEEP} in {stage.out}; skipping the alpha trade-off table")
    return written


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Creator feedback lab - simulate, model and re-rank a creator/consumer ecosystem",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  feedlab --config configs/small.json simulate
  feedlab --config configs/small.json train
  feedlab --config configs/small.json estimate
  feedlab --config configs/small.json experiment --mode ego
  feedlab --config configs/small.json report
        """
    )
    parser.add_argument("--config", "-c", type=str, default=None, help="Run config JSON (default: $FEEDLAB_CONFIG)")
    parser.add_argument("--out", "-o", type=str, default=None, help="Run directory (overrides output_dir)")
    parser.add_argument("--seed", type=int, default=None, help="Root seed (overrides seed)")
    parser.add_argument("--overwrite", action="store_true", help="Replace existing output artifacts")
    parser.add_argument("--verbose", "-v", action="store_true", help="Enable verbose logging")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", help="Write events, population and graph")
    train = commands.add_parser("train", help="Train and evaluate the pCreate model")
    train.add_argument("--family", choices=("logistic", "gbt"), default=None, help="Override model.family")
    commands.add_parser("estimate", help="Write the per-user utility snapshot")
    experiment = commands.add_parser("experiment", help="Run an online experiment")
    experiment.add_argument("--mode", choices=EXPERIMENT_MODES, default=None, help="Override experiment.mode")
    experiment.add_argument("--snapshot", type=str, default=None, help="Snapshot CSV (default: run directory)")
    commands.add_parser("report", help="Write plot-data tables from a run directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point."""
    args = build_parser().parse_args(argv)

    # Configure logging level
    if args.verbose:
        logger.setLevel(logging.DEBUG)
        for handler in logger.handlers:
            handler.setLevel(logging.DEBUG)
        logger.debug("Verbose logging enabled")

    try:
        rc = load_run_config(args.config, {"seed": args.seed, "output_dir": args.out})
        if getattr(args, "family", None):
            rc.model.family = args.family
        stage = Stage(rc, rc.output_dir, args.overwrite)
        logger.info(f"Running {args.command} (seed {rc.seed}) in {stage.out}")

        if args.command == "simulate":
            written = run_simulate(stage)
        elif args.command == "train":
            written = run_train(stage)
        elif args.command == "estimate":
            written = run_estimate(stage)
        elif args.command == "experiment":
            written = run_experiment(stage, args.mode or rc.experiment.mode, args.snapshot)
        else:
            written = run_report(stage)

        print("\n" + "=" * 60)
        print(f"✅ {args.command.upper()} COMPLETE")
        for path in written:
            print(f"📄 {path}")
        print("=" * 60)
        return 0

    except ConfigurationError as e:
        logger.error(f"Configuration error: {e}")
        print(f"❌ Configuration error: {e}", file=sys.stderr)
        return 2

    except DataError as e:
        logger.error(f"Data error: {e}")
        print(f"❌ Data error: {e}", file=sys.stderr)
        return 3

    except ContractError as e:
        logger.error(f"Contract error: {e}")
        print(f"❌ Contract error: {e}", file=sys.stderr)
        return 4

    except KeyboardInterrupt:
        logger.warning("Run interrupted by user")
        print("\n⚠️  Run interrupted by user", file=sys.stderr)
        return 130

    except Exception as e:
        logger.error(f"Unexpected error: {e}", exc_info=True)
        print(f"❌ Unexpected error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
