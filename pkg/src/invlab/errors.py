"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Rejected input: a precondition or schema check failed."""


class NumericalError(RuntimeError):
    """A numerical routine failed (singular system, divergence, residual too large)."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics
