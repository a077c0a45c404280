"""Exception types shared across the package.

The CLI maps these onto its exit codes: configuration/validation problems
exit with 2, numerical aborts with 3.
"""


class FFPError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(FFPError, ValueError):
    """Shapes, widths, or settings that cannot be wired together."""


class UsageError(FFPError, ValueError):
    """An API was called with arguments outside its contract."""


class DegenerateInputError(FFPError, ValueError):
    """Input statistics make the requested operation undefined
    (zero variance, a single-element batch in training mode, ...)."""


class ParseError(FFPError, ValueError):
    """A file on disk does not match the expected format."""


class NumericalError(FFPError, ArithmeticError):
    """A non-finite value appeared where finite values are required."""


class OracleFailure(FFPError, ArithmeticError):
    """The finite-difference oracle could not produce a reference value."""
