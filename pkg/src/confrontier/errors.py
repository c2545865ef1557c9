"""Exception types, split by how the CLI maps them to exit codes.

DataError / PreconditionError are caller mistakes (exit code 2); SolverError
marks an internal numerical failure (exit code 1).
"""


class DataError(ValueError):
    """Malformed input data (parse failures, shape/ordering violations)."""


class PreconditionError(ValueError):
    """A documented operation precondition does not hold."""


class CalibrationError(PreconditionError):
    """Critical-value lookup outside the calibrated lattice or gamma set."""


class SolverError(RuntimeError):
    """An optimizer failed where the contract does not allow a fallback."""
