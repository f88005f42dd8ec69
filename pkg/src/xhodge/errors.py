"""Exception types shared across the package."""


class GeometryError(ValueError):
    """Invalid domain specification or malformed geometry input."""


class SolverError(RuntimeError):
    """Iterative solve failed to reach its tolerance contract."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class ContractViolation(RuntimeError):
    """An internal invariant (symmetry, orthogonality, shape) was broken."""


class FieldFormatError(ValueError):
    """Malformed field file; carries the name of the offending header field."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field
