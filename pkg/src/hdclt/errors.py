"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument or configuration value violates a documented precondition."""


class NotPositiveSemidefiniteError(ArithmeticError):
    """A matrix could not be factored even after the jitter escalation."""
