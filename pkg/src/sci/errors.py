"""Error taxonomy shared across the package.

Exit-code mapping used by the command-line layer: configuration, data, and
usage problems are exit code 2; numeric failures discovered at run time are
exit code 3.
"""

from __future__ import annotations


class SCIError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(SCIError):
    """Tensor shapes are inconsistent with the operation's contract."""


class ParameterError(SCIError):
    """An argument value violates a precondition (ranges, batch sizes)."""


class ConfigError(SCIError):
    """A configuration object or file is invalid."""


class DatasetError(SCIError):
    """A dataset file cannot be parsed or violates the record schema."""


class NumericFailureError(SCIError):
    """A NaN or infinity appeared where the contract requires finite values."""


class DeterminismError(SCIError):
    """Two evaluations that must agree produced different results."""


class DegenerateComponentError(SCIError):
    """A metric input column has zero variance and the metric is undefined."""


class UndefinedMetricError(SCIError):
    """A metric is undefined for the given inputs (e.g. single-class AUC)."""


class LockError(SCIError):
    """An output directory is locked by another (or a crashed) run."""
