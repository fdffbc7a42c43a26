"""Exception types shared across the package.

The CLI maps each class to a distinct exit code, so raising the right
type matters more than the message wording.
"""


class ConfigError(ValueError):
    """Invalid configuration document, generator spec, or malformed input file."""


class NumericError(ArithmeticError):
    """Numeric precondition failed: degenerate window, empty score buffer, blow-up."""


class AlignmentError(ValueError):
    """An external forecast trace does not line up with the target series."""
