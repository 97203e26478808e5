"""Exception types raised by the laboratory."""

from __future__ import annotations


class VblError(Exception):
    """Base class for all errors raised by this package."""


class PaddingError(VblError, ValueError):
    """A field does not decay at the velocity boundary."""

    def __init__(self, magnitude: float, threshold: float):
        self.magnitude = magnitude
        self.threshold = threshold
        super().__init__(
            f"decay padding violated: boundary magnitude {magnitude:.3e} "
            f"exceeds threshold {threshold:.3e}"
        )


class CorruptFieldError(VblError, FloatingPointError):
    """Non-finite values appeared in a field or moment."""


class DivergentSeriesError(VblError, ArithmeticError):
    """A truncated analytic norm shows no geometric decay (lambda at or past the radius)."""


class CharacteristicEscapeError(VblError, RuntimeError):
    """A characteristic foot left the velocity box by more than the margin."""


class UnderResolvedError(VblError, RuntimeError):
    """Spectral content of a drift or state is not decaying."""


class BreakdownError(VblError, RuntimeError):
    """Smooth Euler solution is approaching gradient blow-up."""


class GateError(VblError):
    """Existence conditions fail and the run was not forced."""


class ConfigError(VblError, ValueError):
    """Configuration text could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None, section: str | None = None):
        self.line = line
        self.section = section
        where = []
        if section is not None:
            where.append(f"[{section}]")
        if line is not None:
            where.append(f"line {line}")
        prefix = " ".join(where)
        super().__init__(f"{prefix}: {message}" if prefix else message)
