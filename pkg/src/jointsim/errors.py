"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An argument breaks a documented precondition (dimension mismatch, bad range)."""


class ConfigurationError(ValueError):
    """A model/run configuration is incomplete or inconsistent."""


class DegenerateWindowError(RuntimeError):
    """A conditional density window contains no usable simulated samples."""

    def __init__(self, message, window=None):
        super().__init__(message)
        self.window = window


class NonConvergenceError(RuntimeError):
    """Optimization exhausted its budget without any accepted improvement."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class IngestError(ValueError):
    """Input files failed validation; carries per-row diagnostics."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows or []


class SimulationError(RuntimeError):
    """A trajectory produced a non-finite state."""


class DegenerateCellWarning(UserWarning):
    """A partition cell was skipped while building the mean log-likelihood."""
