"""Error hierarchy shared by every module of the toolkit.

Each error carries a human message plus a list of detail strings, and a
stable process exit code used by the command-line interface.
"""

from typing import List, Optional


class DSJError(Exception):
    """Base exception for all toolkit failures."""

    exit_code: int = 1

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.message = message
        self.errors = list(errors or [])
        super().__init__(self.message)

    def __str__(self) -> str:
        if not self.errors:
            return self.message
        return f'{self.message}: {"; ".join(self.errors)}'


# Configuration and model validation (exit 2)


class ConfigError(DSJError):
    """Raised when a configuration document cannot be used."""

    exit_code = 2


class ConfigParseError(ConfigError):
    """Raised when a configuration file is not valid JSON."""

    def __init__(self, message: str, line: int, column: int):
        self.line = line
        self.column = column
        super().__init__(message, [f'line {line}, column {column}'])


class UnknownKeyError(ConfigError):
    """Raised when a configuration names keys the schema does not know."""

    def __init__(self, message: str, keys: List[str]):
        self.keys = list(keys)
        super().__init__(message, self.keys)


class ConfigValidationError(ConfigError):
    """Raised when configuration values violate the schema."""


class ModelValidationError(DSJError):
    """Raised when a domain type invariant does not hold."""

    exit_code = 2


class ShapeError(ModelValidationError):
    """Raised on non-square matrices or mismatched vector lengths."""


class DomainError(ModelValidationError):
    """Raised when a value lies outside its admissible range."""


class GridError(ModelValidationError):
    """Raised when a sample grid is empty or too coarse."""


# Infeasible designs (exit 3)


class InfeasibleTargetError(DSJError):
    """Raised when a stiffness target lies outside (0, K_max)."""

    exit_code = 3

    def __init__(
        self,
        message: str,
        eigenvalue: float,
        q_s: Optional[float] = None,
    ):
        self.eigenvalue = eigenvalue
        self.q_s = q_s
        errors = [f'violating eigenvalue {eigenvalue:.6g}']
        if q_s is not None:
            errors.append(f'q_s = {q_s:.6g} rad')
        super().__init__(message, errors)


class StructureError(DSJError):
    """Raised when a target cannot be realized by the spiral structure."""

    exit_code = 3

    def __init__(
        self, message: str, residual: float, q_s: Optional[float] = None
    ):
        self.residual = residual
        self.q_s = q_s
        errors = [f'structure residual {residual:.6g}']
        if q_s is not None:
            errors.append(f'q_s = {q_s:.6g} rad')
        super().__init__(message, errors)


class AssumptionError(DSJError):
    """Raised when a profile violates the small-slope assumptions."""

    exit_code = 3


# Numerical failures (exit 4)


class NumericalError(DSJError):
    """Raised when a numerical kernel produces unusable values."""

    exit_code = 4


class SingularityError(NumericalError):
    """Raised when a matrix that must be inverted is singular."""

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(message, [f'path {path}'])


class ConvergenceError(NumericalError):
    """Raised when an iterative solve does not converge."""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            message,
            [f'residual {residual:.6g}', f'iterations {iterations}'],
        )


class StepSizeError(NumericalError):
    """Raised when fixed-step integration becomes unstable."""


class RegressionError(NumericalError):
    """Raised when a least-squares fit is rank deficient."""


class ProfileStateError(NumericalError):
    """Raised when a profile is used before the required stage ran."""


# Storage (exit 5)


class StorageError(DSJError):
    """Raised when reading or writing a file fails."""

    exit_code = 5

    def __init__(self, message: str, path: str):
        self.path = path
        super().__init__(message, [f'path {path}'])
