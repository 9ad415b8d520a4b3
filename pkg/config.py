"""Configuration management for the feedback lab."""
import dataclasses
import json
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
from dotenv import load_dotenv

from errors import ConfigurationError

# Load environment variables
load_dotenv()


class Config:
    """Process-level settings taken from the environment."""

    # Logging Configuration
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: Optional[str] = os.getenv("LOG_FILE")

    # Output Configuration
    OUTPUT_DIR: str = os.getenv("OUTPUT_DIR", "runs")
    DEFAULT_CONFIG: Optional[str] = os.getenv("FEEDLAB_CONFIG")

    @classmethod
    def get_output_path(cls, name: str, output_dir: Optional[str] = None) -> str:
        """Create the output directory and return the path of an artifact in it."""
        directory = output_dir or cls.OUTPUT_DIR
        os.makedirs(directory, exist_ok=True)
        return os.path.join(directory, name)


ACTIVITY_LEVELS = ("Daily", "Weekly", "Monthly", "Inactive")


def _default_cohort_mix() -> Dict[str, float]:
    return {"Daily": 0.3, "Weekly": 0.3, "Monthly": 0.3, "Inactive": 0.1}


def _default_contribution_mix() -> Dict[str, Dict[str, float]]:
    # a contributor never contributes more often than they visit
    return {
        "Daily": {"DailyContrib": 0.2, "WeeklyContrib": 0.3, "MonthlyContrib": 0.2, "NonContrib": 0.3},
        "Weekly": {"WeeklyContrib": 0.3, "MonthlyContrib": 0.3, "NonContrib": 0.4},
        "Monthly": {"MonthlyContrib": 0.4, "NonContrib": 0.6},
        "Inactive": {"NonContrib": 1.0},
    }


def _default_behavior() -> Dict[str, Dict[str, List[float]]]:
    return {
        "Daily": {"base": [-3.2, -2.4], "gain": [0.8, 1.2], "rho": [0.2, 0.4]},
        "Weekly": {"base": [-3.6, -2.8], "gain": [0.3, 0.6], "rho": [0.2, 0.4]},
        "Monthly": {"base": [-4.2, -3.4], "gain": [2.0, 2.6], "rho": [0.2, 0.4]},
        "Inactive": {"base": [-5.0, -4.2], "gain": [0.4, 0.8], "rho": [0.2, 0.4]},
    }


def _default_visit_prob() -> Dict[str, float]:
    return {"Daily": 0.9, "Weekly": 0.25, "Monthly": 0.05, "Inactive": 0.01}


@dataclass
class EcosystemConfig:
    n_users: int
    mean_degree: float = 20.0
    rewire_prob: float = 0.1
    n_ticks: int = 49
    cohort_mix: Dict[str, float] = field(default_factory=_default_cohort_mix)
    contribution_mix: Dict[str, Dict[str, float]] = field(default_factory=_default_contribution_mix)
    behavior: Dict[str, Dict[str, List[float]]] = field(default_factory=_default_behavior)
    visit_prob: Dict[str, float] = field(default_factory=_default_visit_prob)
    n_locales: int = 3
    slate_size: int = 5
    position_decay: float = 0.85
    item_lifetime: int = 3
    feedback_memory: int = 7
    affinity_mean: float = -1.5
    affinity_sd: float = 1.0
    quality_sd: float = 0.5
    click_shift: float = 0.5
    message_prob: float = 0.05
    warmup_ticks: int = 7


@dataclass
class TimelineSettings:
    u: int = 28
    w: int = 7
    # None places t so the label window ends with the log
    t: Optional[int] = None


@dataclass
class BucketSettings:
    edges: List[int] = field(default_factory=lambda: [0, 1, 2, 5, 10, 25])


@dataclass
class GbtSettings:
    max_depth: int = 4
    learning_rate: float = 0.1
    n_trees: int = 200
    early_stopping_rounds: int = 20
    min_child_weight: float = 1.0
    reg_lambda: float = 1.0


@dataclass
class ModelSettings:
    family: str = "logistic"
    l2_grid: List[float] = field(default_factory=lambda: [0.0, 1e-4, 1e-3, 1e-2, 1e-1])
    interactions: bool = True
    max_iter: int = 500
    tol: float = 1e-6
    split: List[float] = field(default_factory=lambda: [0.7, 0.15, 0.15])
    gbt: GbtSettings = field(default_factory=GbtSettings)


@dataclass
class PolicySettings:
    kind: str = "PCreateParam"
    alpha: float = 0.5
    expected_feedback_window: int = 14
    delta_floor: float = 1e-6


@dataclass
class ExperimentSettings:
    mode: str = "consumer"
    control_kind: str = "Heuristic"
    treatment_kind: str = "PCreateParam"
    split: float = 0.5
    n_egos: int = 100
    min_alters: int = 5
    max_overlap: float = 0.2
    ticks: int = 28
    measure_window: int = 7
    response_horizon: int = 2
    replicates: int = 30
    effect_multiplier: float = 1.5
    alpha_grid: List[float] = field(default_factory=lambda: [1.0, 0.75, 0.5, 0.25])
    sweep_seeds: int = 5


@dataclass
class RunConfig:
    """Complete configuration of one pipeline run."""

    seed: int
    ecosystem: EcosystemConfig
    timeline: TimelineSettings = field(default_factory=TimelineSettings)
    buckets: BucketSettings = field(default_factory=BucketSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    policy: PolicySettings = field(default_factory=PolicySettings)
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    output_dir: str = Config.OUTPUT_DIR

    def stage_seed(self, stage: str) -> int:
        """Deterministic per-stage seed split from the root seed."""
        stage_key = [ord(c) for c in stage]
        sequence = np.random.SeedSequence([self.seed, *stage_key])
        return int(sequence.generate_state(1)[0])

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


def _type_name(hint: Any) -> str:
    return getattr(hint, "__name__", str(hint))


def _coerce(value: Any, hint: Any, key_path: str) -> Any:
    """Check a JSON value against a type hint; ints are accepted where floats are expected."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        options = [a for a in args if a is not type(None)]
        return _coerce(value, options[0], key_path)
    if origin is list:
        if not isinstance(value, list):
            raise ConfigurationError(f"Config key {key_path} must be a list, got {type(value).__name__}")
        return [_coerce(v, args[0], f"{key_path}[{i}]") for i, v in enumerate(value)] if args else value
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigurationError(f"Config key {key_path} must be a mapping, got {type(value).__name__}")
        return {k: _coerce(v, args[1], f"{key_path}.{k}") for k, v in value.items()} if args else value

    if hint is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if hint in (bool, int, float, str):
        if not isinstance(value, hint) or (hint is not bool and isinstance(value, bool)):
            raise ConfigurationError(
                f"Config key {key_path} must be {_type_name(hint)}, got {type(value).__name__} {value!r}")
    return value


def _build(cls: type, data: Any, path: str) -> Any:
    """Instantiate a config dataclass from a mapping, rejecting unknown keys and mistyped values."""
    if not isinstance(data, dict):
        raise ConfigurationError(f"'{path or 'root'}' must be a mapping")

    hints = typing.get_type_hints(cls)
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigurationError(f"Unknown config key: {where}{unknown[0]}")

    kwargs = {}
    for name, spec in known.items():
        key_path = f"{path}.{name}" if path else name
        required = spec.default is dataclasses.MISSING and spec.default_factory is dataclasses.MISSING
        if name not in data:
            if required:
                raise ConfigurationError(f"Missing required config key: {key_path}")
            continue
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, data[name], key_path)
        else:
            kwargs[name] = _coerce(data[name], hint, key_path)
    return cls(**kwargs)


def run_config_from_dict(data: Dict[str, Any]) -> RunConfig:
    return _build(RunConfig, data, "")


def load_run_config(path: Optional[str], overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Load a run configuration file and apply command-line overrides.

    Args:
        path: JSON config file; falls back to FEEDLAB_CONFIG
        overrides: flat mapping of top-level keys (seed, output_dir) to values

    Returns:
        Validated RunConfig

    Raises:
        ConfigurationError: unreadable file, unknown, missing or mistyped keys
    """
    path = path or Config.DEFAULT_CONFIG
    if not path:
        raise ConfigurationError("No config file given (use --config or FEEDLAB_CONFIG)")
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigurationError(f"Config file not found: {config_path}")
    try:
        data = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"Config file is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigurationError("Config file must hold a JSON object")

    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return run_config_from_dict(data)
