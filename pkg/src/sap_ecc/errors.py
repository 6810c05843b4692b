"""Exception types shared across the package.

The CLI maps each family to an exit code, so new errors should subclass
one of the three categories below rather than ``Exception`` directly.
"""

from __future__ import annotations


class SapError(Exception):
    """Base class for every error raised by this package."""

    exit_code = 1


class ValidationError(SapError, ValueError):
    """Bad input: wrong shapes, out-of-range parameters, malformed config."""

    exit_code = 2


class FormatError(ValidationError):
    """A file on disk could not be parsed or has an unexpected version."""

    exit_code = 4


class AlistParseError(FormatError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class RankDeficiencyError(ValidationError):
    def __init__(self, rank: int, expected: int):
        self.rank = rank
        self.expected = expected
        super().__init__(f"parity-check matrix has GF(2) rank {rank}, expected {expected}")


class ComputationError(SapError, RuntimeError):
    """A numerical procedure failed at run time."""

    exit_code = 3


class ConvergenceError(ComputationError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class DivergenceError(ComputationError):
    def __init__(self, step: int, loss: float):
        self.step = step
        self.loss = loss
        super().__init__(f"training diverged at step {step} (loss={loss})")


class NonFiniteError(ComputationError):
    pass


class BudgetError(ComputationError):
    pass


class LoraStateError(SapError):
    exit_code = 3
