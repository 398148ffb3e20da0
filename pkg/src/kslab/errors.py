"""Exception types shared across the package.

Two families matter for the command line tool: configuration problems
(exit code 1) and numerical failures (exit code 2).  Everything else is a
plain ValueError and indicates misuse of the library API.
"""


class ConfigError(ValueError):
    """Malformed or out-of-range configuration input."""


class NumericalError(RuntimeError):
    """A solver left its admissible region (e.g. density turned negative)."""
