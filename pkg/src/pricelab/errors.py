"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid inputs or configuration (dimension mismatch, empty box, bad keys)."""


class SchemaError(ConfigurationError):
    """A table is missing declared columns or has no usable rows."""


class AssumptionViolation(ValueError):
    """A modelling assumption (nonnegative elasticities, PSD similarity) does not hold."""


class NumericError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""
