# GraphicalMTPOptimizer/src/errors.py
"""
Exception types raised by the package.

Each class derives from a built-in exception type. The CLI maps them onto
exit codes (see ``EXIT_CODES``).
"""


class GraphError(ValueError):
    """Malformed graph, p-value vector or decision input."""


class ConfigError(ValueError):
    """Inconsistent or unreadable configuration."""


class NumericalError(ArithmeticError):
    """A numerical step cannot proceed (non-PSD correlation, degenerate targets, empty estimates)."""


class InfeasibleError(ValueError):
    """A point or start violates the constraints of its parameter space."""


# Exit codes used by the command-line interface.
EXIT_CODES = {
    ConfigError: 2,
    GraphError: 2,
    NumericalError: 3,
    InfeasibleError: 4,
}
