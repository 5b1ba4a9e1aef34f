"""Exception types raised by the solver."""


class InvalidParameterError(ValueError):
    pass


class OutOfDomainError(ValueError):
    pass


class MissingGuessError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    """Non-finite values appeared during integration."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"integration diverged at t = {self.time:.6g}")


class SingularJacobianError(ArithmeticError):
    pass


class ConfigError(ValueError):
    """Invalid run configuration; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
