"""Exception types shared across the package.

The CLI maps these onto exit codes: config/usage problems exit 2,
data/artifact integrity problems exit 3, numeric failures exit 4.
"""


class StdclError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(StdclError):
    """Invalid configuration value, unknown key, or unparsable config file."""


class DimensionError(StdclError):
    """Tensor shapes are incompatible for the requested operation."""


class NumericError(StdclError):
    """A numeric invariant failed (non-finite value, gradient check failure)."""


class DomainError(NumericError):
    """An input left the mathematical domain of an operation (e.g. log of <= 0)."""


class DegenerateVectorError(NumericError):
    """A vector with (near-)zero norm was passed where a direction is required."""


class DataFormatError(StdclError):
    """A dataset or artifact file is malformed, truncated, or inconsistent."""


class BankIntegrityError(StdclError):
    """A memory-bank invariant was violated (label rewrite, bad index)."""
