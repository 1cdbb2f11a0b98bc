"""Exception hierarchy.

Each class carries the process exit code the command line maps it to.
"""


class RepdimError(Exception):
    exit_code = 1


class UsageError(RepdimError, ValueError):
    """Bad arguments or a violated precondition."""

    exit_code = 1


class DataFormatError(RepdimError, ValueError):
    """Input file could not be parsed (IDX, CSV, JSON config)."""

    exit_code = 2


class EstimationError(RepdimError, ArithmeticError):
    """An estimator could not produce a value from the data it was given."""

    exit_code = 3


class DegenerateDataError(EstimationError):
    pass


class TrainingError(EstimationError):
    """Training diverged (non-finite loss)."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
