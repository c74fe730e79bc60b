from typing import List, Optional


class SeistomoError(Exception):
    """Base class for all errors raised by seistomo"""


class InvalidArgumentError(SeistomoError, ValueError):
    """A precondition on an argument or configuration value was violated"""


class ConfigError(InvalidArgumentError):
    """Configuration document failed validation"""

    def __init__(self, message: str, suggestion: Optional[str] = None):
        if suggestion:
            message = f"{message} (did you mean '{suggestion}'?)"
        super().__init__(message)
        self.suggestion = suggestion


class ConvergenceError(SeistomoError, RuntimeError):
    """An iterative solve missed its tolerance within the iteration cap"""

    def __init__(self, message: str, residual_history: Optional[List[float]] = None):
        super().__init__(message)
        self.residual_history = list(residual_history or [])


class BreakdownError(ConvergenceError):
    """Block Krylov recursion hit a singular block inner product"""

    def __init__(self, message: str, iteration: int, residual_history: Optional[List[float]] = None):
        super().__init__(f"{message} at iteration {iteration}", residual_history)
        self.iteration = iteration


class StateError(SeistomoError, RuntimeError):
    """An operation needed cached state that is not available"""


class FactorizationError(SeistomoError, RuntimeError):
    """A direct factorization failed"""


class ParseError(SeistomoError, ValueError):
    """A file did not match its declared format"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset
