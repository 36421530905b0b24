"""Exception hierarchy shared by the solver modules."""


class MFRBSDEError(Exception):
    """Base class for all package errors."""


class InfeasibleError(MFRBSDEError):
    """Lipschitz constants admit no contraction window."""


class ConvergenceError(MFRBSDEError):
    """An iterative procedure did not reach its tolerance."""

    def __init__(self, message, last_distance=None):
        super().__init__(message)
        self.last_distance = last_distance


class GridError(MFRBSDEError):
    """Time grid too coarse for the implicit step."""


class BoundViolation(MFRBSDEError):
    """An empirical coefficient exceeded its declared Lipschitz bound."""

    def __init__(self, message, coefficient=None, value=None):
        super().__init__(message)
        self.coefficient = coefficient
        self.value = value


class DominationError(MFRBSDEError):
    """Domination function missing or violated."""

    def __init__(self, message, witness=None):
        super().__init__(message)
        self.witness = witness


class ConfigError(MFRBSDEError):
    """Malformed or incomplete configuration document."""

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{path}: {message}")
        self.path = path


class ProblemError(MFRBSDEError):
    """Well-formed input describing a problem that fails the model's standing assumptions."""
