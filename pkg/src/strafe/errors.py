"""Exception types shared across the package."""


class StrafeError(Exception):
    """Base class for all package errors."""


class ShapeError(StrafeError):
    """Tensor dimensions do not satisfy an operation's contract."""


class NonFiniteError(StrafeError):
    """A primitive produced NaN or Inf."""


class DegenerateRowError(StrafeError):
    """Softmax row (or attention query) with every entry masked."""


class ParameterError(StrafeError):
    """An argument is outside its allowed range."""


class ConfigError(StrafeError):
    """Invalid or inconsistent configuration."""


class ValidationError(StrafeError):
    """Cohort record violates a data invariant."""


class CohortParseError(StrafeError):
    """Cohort file is not parseable."""


class UndefinedMetricError(StrafeError):
    """Metric has no defined value on the given input (e.g. no comparable pairs)."""


class DivergenceError(StrafeError):
    """Training loss became non-finite."""


class UnsupportedVariantError(StrafeError):
    """Requested operation is not available for this model variant."""


class DeterminismError(StrafeError):
    """A closure expected to be deterministic returned different values."""


class CheckpointError(StrafeError):
    """Checkpoint file is malformed or inconsistent."""
