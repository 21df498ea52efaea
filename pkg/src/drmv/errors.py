"""Exception hierarchy shared by every module.

Each error may carry a ``stage`` tag that the pipeline fills in when it
re-raises, so CLI messages name where a run failed.
"""


class DRMVError(Exception):
    """Base class for all package errors."""

    exit_code = 1

    def __init__(self, message, *, stage=None):
        super().__init__(message)
        self.message = message
        self.stage = stage

    def __str__(self):
        if self.stage:
            return f"[{self.stage}] {self.message}"
        return self.message


class InvalidInputError(DRMVError, ValueError):
    """Malformed arguments: wrong shapes, out-of-range parameters."""

    exit_code = 2


class ParseError(InvalidInputError):
    """A returns file or config file could not be parsed."""

    def __init__(self, message, *, row=None, column=None, stage=None):
        if row is not None:
            loc = f"row {row}" + (f", column {column}" if column is not None else "")
            message = f"{message} ({loc})"
        super().__init__(message, stage=stage)
        self.row = row
        self.column = column


class DegenerateInputError(DRMVError, ValueError):
    """Moments are singular or the target makes a multiplier vanish."""

    exit_code = 4


class InfeasibleProblemError(DRMVError):
    """The robust feasible region is empty.

    ``max_robust_mean`` is the supremum of the worst-case mean over the
    budget hyperplane, i.e. the largest floor that could be met.
    """

    exit_code = 3

    def __init__(self, message, *, max_robust_mean=None, stage=None):
        super().__init__(message, stage=stage)
        self.max_robust_mean = max_robust_mean


class NonConvergenceError(DRMVError):
    """Iteration budget exhausted before the KKT tolerance was met."""

    exit_code = 5

    def __init__(self, message, *, best_phi=None, residual=None, stage=None):
        super().__init__(message, stage=stage)
        self.best_phi = best_phi
        self.residual = residual
