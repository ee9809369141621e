"""
Exception hierarchy shared by every package, plus the CLI exit-code mapping.
"""
from typing import Optional

import numpy as np

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_INPUT = 3


class BtgError(Exception):
    """Base class for all toolkit errors."""
    exit_code = 1


class InputError(BtgError):
    """Malformed case file, CSV or run manifest."""
    exit_code = EXIT_INPUT


class CaseSyntaxError(InputError):
    """Case file that does not parse; carries the offending line number."""

    def __init__(self, message: str, lineno: Optional[int] = None):
        self.lineno = lineno
        where = f"line {lineno}: " if lineno is not None else ""
        super().__init__(f"{where}{message}")


class CaseValidationError(InputError):
    """Case file that parses but describes an invalid network."""


class DimensionError(BtgError, ValueError):
    """Vector or matrix with the wrong shape for the model it is applied to."""


class SingularPencilError(BtgError):
    """E - h*beta0*A is singular for the requested step size."""

    def __init__(self, step: float, detail: str = ""):
        self.step = step
        msg = f"singular pencil E - h*beta0*A at h={step:g}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class InfeasibleError(BtgError):
    """An optimization problem had no feasible point."""
    exit_code = EXIT_INFEASIBLE

    def __init__(self, message: str, instant: Optional[float] = None, constraint: Optional[str] = None):
        self.instant = instant
        self.constraint = constraint
        parts = [message]
        if instant is not None:
            parts.append(f"t={instant:g}s")
        if constraint:
            parts.append(f"most violated: {constraint}")
        super().__init__(" | ".join(parts))


class SolverLimitError(BtgError):
    """QP solver stopped at its iteration limit without meeting tolerances."""
    exit_code = EXIT_INFEASIBLE


class NewtonDivergenceError(BtgError):
    """Newton iteration of the nonlinear replay failed to converge."""

    def __init__(self, step: int, state: np.ndarray, residual: float):
        self.step = step
        self.state = np.array(state, copy=True)
        self.residual = residual
        super().__init__(f"Newton diverged at replay step {step} (|residual|={residual:.3e})")


def check_shape(name: str, value: np.ndarray, expected: tuple) -> np.ndarray:
    """Return `value` as a float array, raising DimensionError on shape mismatch."""
    arr = np.asarray(value, dtype=float)
    if arr.shape != tuple(expected):
        raise DimensionError(f"{name}: expected shape {tuple(expected)}, got {arr.shape}")
    return arr
