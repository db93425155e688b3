"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 2, DataError (and its
subclasses) -> 3, IdentificationError -> 4.  Plain ValueError is used for
programming/argument errors and also exits with code 2 when raised while
reading a config.
"""


class DmlError(Exception):
    """Base class for package-specific errors."""


class ConfigError(DmlError):
    """Invalid or inconsistent run configuration."""


class DataError(DmlError):
    """Problem with input data."""


class SchemaError(DataError):
    """A required column or role is missing."""


class ParseError(DataError):
    """A cell could not be parsed as a number."""


class ValidationError(DataError):
    """Data violates an invariant required by a score."""


class IdentificationError(DmlError):
    """The moment equation is (numerically) unidentified."""
