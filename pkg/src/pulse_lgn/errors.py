"""Exception hierarchy shared by every module."""


class PulseLgnError(Exception):
    """Base class for all library errors."""


class ValidationError(PulseLgnError, ValueError):
    """Input violates a documented invariant or precondition."""


class DomainError(PulseLgnError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class DegenerateBasisError(PulseLgnError, ValueError):
    """Exponential basis is rank deficient (colliding time constants)."""

    def __init__(self, indices):
        self.indices = tuple(indices)
        super().__init__(
            f"degenerate exponential basis: time constants at indices {self.indices} collide"
        )


class IngestError(ValidationError):
    """Malformed input file. Carries the offending path, line and rule."""

    def __init__(self, path, rule, line=None):
        self.path = str(path)
        self.line = line
        self.rule = rule
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {rule}")
