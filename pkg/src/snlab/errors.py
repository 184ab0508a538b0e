"""Exception types shared across the package."""


class SnlabError(Exception):
    """Base class for all package errors."""


class SizeError(SnlabError, ValueError):
    pass


class DomainError(SnlabError, ValueError):
    pass


class ShapeError(SnlabError, ValueError):
    pass


class GeometryError(SnlabError, ValueError):
    pass


class NumericalError(SnlabError, ArithmeticError):
    """Singular or unstable linear algebra; carries diagnostics."""

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class SolverError(SnlabError, RuntimeError):
    """Iterative solver failed to converge; carries the residual history."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class CouplingError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class ConfigError(SnlabError, ValueError):
    """Scenario parse or validation failure."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])
