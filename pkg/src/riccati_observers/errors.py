"""Exception types shared across the package."""


class NumericError(RuntimeError):
    """Non-finite values or numerical breakdown during integration.

    Carries the time ``t`` at which the failure occurred when known.
    """

    def __init__(self, message: str, t: float | None = None):
        if t is not None:
            message = f"{message} (at t={t:.6g} s)"
        super().__init__(message)
        self.t = t


class PdViolationError(NumericError):
    """A Riccati matrix lost positive definiteness after a step.

    Usually signals a timestep too coarse for the current gain magnitudes.
    """


class InvalidInputError(ValueError):
    """An operation was called with arguments violating its preconditions."""


class InvalidConfigError(ValueError):
    """A configuration file or observer configuration is inconsistent.

    ``line`` is the 1-based line number in the config text when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientSamplesError(ValueError):
    """A windowed metric was requested beyond the available trajectory data."""


class BoundUnavailableError(ValueError):
    """A conditioning-bound formula degenerates for the given constants.

    Raised when the smallest-eigenvalue bound is requested with a zero
    state-matrix norm (use the Lyapunov value directly instead) or when
    the largest-eigenvalue bound is requested without a positive
    excitation floor.
    """
