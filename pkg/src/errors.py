"""Exceptions raised by the reservoir-gradient toolkit."""

from typing import Optional


class ResgradError(Exception):
    """Base class for all errors raised by this package."""


class NonFiniteStateError(ResgradError, ValueError):
    """A phase point contains NaN or Inf."""


class UnknownSystemError(ResgradError, LookupError):
    """Requested system name is not in the catalog."""

    def __init__(self, name: str, known: Optional[list] = None):
        self.name = name
        self.known = sorted(known or [])
        message = f"Unknown system '{name}'"
        if self.known:
            message += f" (known: {', '.join(self.known)})"
        super().__init__(message)


class UnsupportedSystemError(ResgradError):
    """A scheme or correction was used with a system it is not defined for."""


class RegimeError(ResgradError, ValueError):
    """Oscillator parameters outside the underdamped regime."""


class ConvergenceError(ResgradError):
    """Fixed-point iteration did not contract within the iteration cap."""

    def __init__(
        self,
        residual: float,
        iterations: int,
        step_index: Optional[int] = None,
        t: Optional[float] = None,
    ):
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index
        self.t = t
        super().__init__(self._message())

    def _message(self) -> str:
        where = ""
        if self.step_index is not None:
            where += f" at step {self.step_index}"
        if self.t is not None:
            where += f" (t={self.t:.6g})"
        return (
            f"Fixed-point iteration did not converge{where}: "
            f"residual {self.residual:.3e} after {self.iterations} iterations"
        )

    def tagged(self, step_index: int, t: float) -> "ConvergenceError":
        """Return a copy carrying the trajectory position."""
        return ConvergenceError(self.residual, self.iterations, step_index, t)


class DivergenceError(ResgradError):
    """Non-finite values appeared while solving a step."""

    def __init__(self, detail: str, step_index: Optional[int] = None, t: Optional[float] = None):
        self.detail = detail
        self.step_index = step_index
        self.t = t
        where = ""
        if step_index is not None:
            where += f" at step {step_index}"
        if t is not None:
            where += f" (t={t:.6g})"
        super().__init__(f"Iteration diverged{where}: {detail}")

    def tagged(self, step_index: int, t: float) -> "DivergenceError":
        """Return a copy carrying the trajectory position."""
        return DivergenceError(self.detail, step_index, t)


class DegenerateDataError(ResgradError, ValueError):
    """Regression input cannot be fitted on a log-log scale."""


class DivisionGuardError(ResgradError, ZeroDivisionError):
    """Energy ratio requested where the energy vanishes."""

    def __init__(self, index: int):
        self.index = index
        super().__init__(f"Energy is zero at index {index}; ratio undefined")


class ConfigError(ResgradError, ValueError):
    """Invalid run configuration."""

    def __init__(self, message: str, token: Optional[str] = None):
        self.token = token
        super().__init__(message)
