"""Error types shared by every stage of the feedback lab."""
from typing import Optional


class LabError(Exception):
    """Base class for all expected failures."""


class ConfigurationError(LabError, ValueError):
    """Invalid sizes, mixes, policies or config keys."""


class DataError(LabError):
    """The data handed to a stage cannot support the requested computation."""


class WindowingError(DataError):
    """The event log does not span the requested feature/label windows."""


class DegenerateDataError(DataError):
    """Training data with a single label class."""


class UndefinedMetricError(DataError):
    """A metric that is undefined for the given labels."""


class SingularDesignError(DataError):
    """Rank-deficient design matrix in a closed-form fit."""


class SelectionError(DataError):
    """Not enough ego candidates satisfy the selection rules."""

    def __init__(self, message: str, achievable: int):
        super().__init__(message)
        self.achievable = achievable


class UndefinedEffectError(DataError):
    """Relative effect undefined because the control mean is zero."""

    def __init__(self, message: str, absolute_effect: Optional[float] = None):
        super().__init__(message)
        self.absolute_effect = absolute_effect


class ContractError(LabError):
    """A caller broke an interface contract."""


class SchemaError(ContractError):
    """Feature schema mismatch or a corrupt model/snapshot file."""
