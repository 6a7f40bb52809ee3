"""
Exception hierarchy for the chi-extremes laboratory.

Every error carries the process exit code the CLI maps it to and can render
itself as a single machine-parsable JSON line.
"""

import json
from typing import Any, Dict, Optional


class ChiExtremesError(Exception):
    """Base class for all laboratory errors"""

    code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.message = message
        self.details = details

    def to_record(self) -> str:
        record: Dict[str, Any] = {"error": type(self).__name__, "message": self.message}
        record.update({key: _jsonable(value) for key, value in self.details.items()})
        return json.dumps(record, sort_keys=True)


class ConfigError(ChiExtremesError):
    """Parameter range, schema or shape violations"""

    code = 2


class OutOfRangeError(ConfigError):
    """A tabulated correlation was queried outside its lag range"""


class DegenerateModelError(ConfigError):
    """A correlation model that cannot support the requested operation"""


class DegenerateConfigurationError(ConfigError):
    """The limit process is degenerate for this (k, kappa) combination"""


class NumericError(ChiExtremesError):
    code = 3


class QuadratureError(NumericError):
    """Adaptive quadrature failed to certify its tolerance"""


class NonEmbeddableError(NumericError):
    """The circulant embedding has too much negative spectral mass"""

    def __init__(self, min_eigenvalue: float, clip_mass: float, tolerance: float):
        super().__init__(
            f"covariance is not embeddable on this grid: min eigenvalue {min_eigenvalue:.3e}, "
            f"negative mass {clip_mass:.3e} > tolerance {tolerance:.1e}",
            min_eigenvalue=min_eigenvalue,
            clip_mass=clip_mass,
            tolerance=tolerance,
        )
        self.min_eigenvalue = min_eigenvalue
        self.clip_mass = clip_mass


class InfeasibleError(ChiExtremesError):
    code = 3


class InfeasibleThresholdError(InfeasibleError):
    """The threshold is too deep in the tail for desk-scale rejection sampling"""


class BermanConditionError(InfeasibleError):
    """The Gumbel experiment refuses to run when the Berman check fails"""

    def __init__(self, message: str, report: Optional[Any] = None):
        super().__init__(message, c=getattr(report, "c", None))
        self.report = report


class ReplicationError(ChiExtremesError):
    """A Monte Carlo task failed; the replication index is attached"""

    def __init__(self, index: int, cause: BaseException):
        super().__init__(f"replication {index} failed: {cause}", index=index)
        self.index = index
        self.code = getattr(cause, "code", 1)


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)
