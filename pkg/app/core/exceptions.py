"""
Error hierarchy shared by every stage of the MPDAE pipeline.

Each error carries a ``stage`` tag; the CLI prints it in front of the message
and maps the class to an exit code.
"""
from typing import Optional


class MpdaeError(Exception):
    """Base class for all pipeline errors."""
    stage: str = "general"


class ModelError(MpdaeError):
    stage = "model"


class StencilError(MpdaeError):
    stage = "stencil"


class CouplingError(MpdaeError):
    stage = "coupling"


class ConsistencyError(MpdaeError):
    """Consistent initialisation failed (e.g. Newton on g did not converge)."""
    stage = "init"


class ConditionViolation(ConsistencyError):
    """
    The frequency closure is degenerate at the discrete level.

    Attributes:
        condition (int): 1 for the phase-differential guard (D_{1,l} ~ 0),
            2 for the optimality guard (nu-coefficient ~ 0),
            0 for the phase-algebraic guard.
    """

    def __init__(self, message: str, condition: int) -> None:
        super().__init__(message)
        self.condition = condition


class PeriodicSeedError(MpdaeError):
    stage = "seed"


class NewtonConvergenceError(MpdaeError):
    stage = "integrate"

    def __init__(self, message: str, final_residual: float, iterations: int) -> None:
        super().__init__(message)
        self.final_residual = final_residual
        self.iterations = iterations


class SingularIterationMatrixError(MpdaeError):
    stage = "integrate"

    def __init__(self, message: str, rcond: float) -> None:
        super().__init__(message)
        self.rcond = rcond


class IntegrationError(MpdaeError):
    stage = "integrate"

    def __init__(self, message: str, step_index: int, cause: Optional[Exception] = None) -> None:
        super().__init__(message)
        self.step_index = step_index
        self.cause = cause


class InconsistentPointError(MpdaeError):
    stage = "index"

    def __init__(self, message: str, residual: float) -> None:
        super().__init__(message)
        self.residual = residual


class NotLinearConstraintError(MpdaeError):
    stage = "index"


class GridMismatchError(MpdaeError):
    stage = "postproc"


class TrajectoryFormatError(MpdaeError):
    stage = "reconstruct"

    def __init__(self, message: str, line_number: int) -> None:
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class ScenarioConfigError(MpdaeError):
    stage = "config"
