"""Exception types shared across the package.

The CLI maps these onto exit codes: configuration and input-contract problems
exit with 2, runtime numeric failures exit with 3.
"""


class OdecastError(Exception):
    """Base class for all package-specific errors."""


class ContractViolation(OdecastError, ValueError):
    """An input violated a documented precondition (shape, dtype, range)."""


class DegenerateInputError(ContractViolation):
    """Input is technically well-formed but carries no usable information,
    e.g. an all-zero distance matrix or a zero-variance channel."""


class ConfigError(OdecastError, ValueError):
    """A run configuration could not be parsed or validated."""


class NumericFailure(OdecastError, RuntimeError):
    """A computation produced non-finite values or failed to converge."""


class IntegrationFailure(NumericFailure):
    """The ODE integrator exceeded its step budget before reaching the
    requested time."""
