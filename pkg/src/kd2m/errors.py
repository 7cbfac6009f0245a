"""Exception hierarchy shared across the package."""


class KD2MError(Exception):
    """Base class for all errors raised by kd2m."""


class InputError(KD2MError, ValueError):
    """Rejected input: non-finite entries, bad ranges."""


class ShapeError(KD2MError, ValueError):
    """Array dimensions do not agree."""


class NotPSDError(KD2MError, ValueError):
    def __init__(self, min_eigenvalue: float):
        super().__init__(f"matrix is not positive semi-definite (most negative eigenvalue {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class MarginalMismatchError(KD2MError, ValueError):
    """Source and target masses differ."""


class DegenerateBatchError(KD2MError, ValueError):
    """A batch cannot support the requested metric (e.g. no shared class)."""


class ConfigError(KD2MError, ValueError):
    """Invalid configuration or incompatible models."""


class ConditioningError(KD2MError, ValueError):
    """Covariance too close to singular."""


class TraceMismatchError(KD2MError, ValueError):
    """A forward trace does not belong to the given parameters."""


class ParseError(KD2MError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DivergenceError(KD2MError, RuntimeError):
    """Training produced a non-finite loss.

    ``model`` holds the last parameters with a finite loss and ``log`` the
    epochs completed before the failure.
    """

    def __init__(self, message: str, model=None, log=None):
        super().__init__(message)
        self.model = model
        self.log = log
