"""Exception types shared across the pipeline."""


class ConfigError(Exception):
    """Bad configuration: missing column, degenerate statistics, mismatched checkpoints."""


class DataError(Exception):
    """Input data that cannot be used (empty test set, unsortable stream)."""


class NumericFault(ArithmeticError):
    """A forward op or the loss produced NaN or Inf."""


class StateError(RuntimeError):
    """An operation was called out of order (e.g. backward before forward)."""
