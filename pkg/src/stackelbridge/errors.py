"""Exception hierarchy shared by every module."""


class StackelbridgeError(Exception):
    """Base class for all library errors."""


class DimensionError(StackelbridgeError, ValueError):
    pass


class NumericalError(StackelbridgeError, ArithmeticError):
    def __init__(self, message, **inputs):
        super().__init__(message)
        self.inputs = inputs


class AdmissibilityError(StackelbridgeError, ValueError):
    """Step size violates r < 2*gamma/L_y**2."""


class NormalizationError(StackelbridgeError, ValueError):
    """Bound formulas are stated for gamma = 1; the caller must rescale."""


class ConvergenceError(StackelbridgeError, RuntimeError):
    def __init__(self, message, last_iterate=None, residual=None, history=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.history = history if history is not None else []


class DegenerateSupportError(StackelbridgeError, ValueError):
    """Mirror step asked to move mass onto a coordinate outside the support."""


class SingularSystemError(StackelbridgeError, ArithmeticError):
    pass


class DomainError(StackelbridgeError, ValueError):
    pass


class ParseError(StackelbridgeError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConnectivityError(StackelbridgeError, ValueError):
    def __init__(self, origin, destination, message=None):
        super().__init__(message or f"no path from node {origin} to node {destination}")
        self.pair = (origin, destination)
