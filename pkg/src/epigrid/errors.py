"""Exception types shared across the package.

The CLI maps these onto process exit codes, so solver and validation code
should raise the most specific type that applies.
"""


class ValidationError(ValueError):
    """A config, parameter set, or input field violates a stated assumption."""

    exit_code = 1


class NumericalError(RuntimeError):
    """A solver could not meet its accuracy or stability contract."""

    exit_code = 2


class InvariantViolation(AssertionError):
    """A runtime invariant (conservation, positivity, stochasticity) failed."""

    exit_code = 3
