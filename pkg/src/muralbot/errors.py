"""Exception hierarchy shared across the package.

The CLI maps these onto distinct exit codes (see cli.EXIT_*), so new
exception types should subclass one of the three roots below.
"""


class MuralbotError(Exception):
    """Base class for all package errors."""


class PreconditionError(MuralbotError):
    """Bad inputs, missing artifacts, violated preconditions."""


class NumericalError(MuralbotError):
    """Solver divergence, conditioning loss, non-convergence."""


class SessionAborted(MuralbotError):
    """A painting session ended via the hard-limit abort path."""


class SingularConfigurationError(PreconditionError):
    """Platform coincides with an anchor; cable direction undefined."""


class WorkspaceError(PreconditionError):
    """Target or state outside the admissible workspace."""


class SimulationEscapeError(MuralbotError):
    """Platform left the frame rectangle; test-harness failure signal."""


class EstimationError(NumericalError):
    """Forward-kinematics least squares failed to converge."""

    def __init__(self, msg: str, residual: float | None = None):
        super().__init__(msg)
        self.residual = residual


class SynthesisError(NumericalError):
    """Gain synthesis failed (Riccati blow-up, iLQG divergence)."""


class ConditioningError(NumericalError):
    """A covariance or normal-equation matrix lost positive definiteness."""


class ScheduleExhaustedError(PreconditionError):
    """online_step called with a timestep index outside the schedule."""


class InfeasibleError(NumericalError):
    """Constraints cannot be satisfied (tension limits, wrench)."""


class CalibrationError(NumericalError):
    """Calibration solve failed."""


class UnderdeterminedError(CalibrationError):
    """Insufficient excitation; reports the null directions."""

    def __init__(self, msg: str, null_directions=None):
        super().__init__(msg)
        self.null_directions = null_directions


class DegenerateConfigurationError(PreconditionError):
    """Collinear correspondence points; homography undefined."""


class OutOfMapError(PreconditionError):
    """Waypoint outside every homography section by more than epsilon."""


class ReachabilityError(PreconditionError):
    """Arm target beyond reach; carries the distance deficit."""

    def __init__(self, msg: str, deficit: float = 0.0):
        super().__init__(msg)
        self.deficit = deficit


class SchemaError(PreconditionError):
    """Configuration file missing or with a wrong/unsupported schema tag."""
