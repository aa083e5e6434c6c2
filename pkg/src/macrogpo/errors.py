"""Exception types shared across the package."""

from __future__ import annotations


class MacroGPOError(Exception):
    """Base class for all errors raised by macrogpo."""


class InvalidInputError(MacroGPOError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(MacroGPOError, ArithmeticError):
    """A factorization or log-determinant failed numerically."""


class CapabilityError(MacroGPOError, RuntimeError):
    """The requested problem exceeds a configured size cap."""


class ParseError(MacroGPOError, ValueError):
    """A data or config file is malformed."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path
