"""Exception taxonomy shared across the package.

The CLI maps these onto exit codes: DataError -> 2, ConfigError -> 3,
anything else -> 1.
"""


class OrdvoteError(Exception):
    """Base class for all package-specific failures."""


class DataError(OrdvoteError):
    """Malformed, inconsistent, or missing input data."""


class ConfigError(OrdvoteError):
    """Invalid configuration: flags, config-file entries, or field values."""


class InvariantViolation(OrdvoteError):
    """A model-state or dataset invariant does not hold."""


class DegenerateTraceError(OrdvoteError):
    """A diagnostic was asked for on a constant (zero-variance) trace."""


class DegenerateDrawError(OrdvoteError):
    """A per-draw analysis hit a draw with no usable dispersion."""


class DegenerateLikelihoodWarning(UserWarning):
    """A record's category probability underflowed to an exact zero."""
