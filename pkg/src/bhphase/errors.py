"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid run configuration. Carries a list of field-level messages."""

    def __init__(self, errors):
        if isinstance(errors, str):
            errors = [errors]
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class NumericalError(RuntimeError):
    """A solver detected instability, stiffness or a broken invariant."""


class VerificationError(AssertionError):
    """A verification task finished but its criterion was not met."""
