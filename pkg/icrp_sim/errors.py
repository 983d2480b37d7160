from __future__ import annotations

from typing import Optional


class ScenarioError(ValueError):
    """Invalid scenario content, optionally pinned to a file line."""

    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.source = source

    def __str__(self) -> str:
        where = self.source or ""
        if self.line is not None:
            where = f"{where}:{self.line}" if where else f"line {self.line}"
        return f"{where}: {self.message}" if where else self.message


class ContractViolation(RuntimeError):
    """A caller broke an operation's precondition."""


class UndefinedMetricError(ArithmeticError):
    """Ratio requested with a zero denominator."""
