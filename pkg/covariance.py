"""
Stationary correlation models r(t) = 1 - C|t|^alpha + o(|t|^alpha) and
their numerical validation (local expansion fit, Berman-type decay check).
"""

import logging
from typing import List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from errors import ConfigError, DegenerateModelError, OutOfRangeError

logger = logging.getLogger(__name__)

Family = Literal["power_exponential", "generalized_cauchy", "tabulated"]

DEFAULT_BERMAN_TOLERANCE = 1e-3


class CovarianceModel(BaseModel):
    """Correlation model of one Gaussian component"""

    model_config = ConfigDict(frozen=True)

    family: Family = Field(default="power_exponential", description="Closed-form family or tabulated values")
    C: Optional[float] = Field(default=None, gt=0, description="Scale constant C > 0")
    alpha: Optional[float] = Field(default=None, gt=0, le=2, description="Local exponent in (0, 2]")
    gamma: Optional[float] = Field(default=None, gt=0, description="Generalized Cauchy tail exponent")
    lags: Optional[Tuple[float, ...]] = Field(default=None, description="Tabulated lags, starting at 0")
    values: Optional[Tuple[float, ...]] = Field(default=None, description="Tabulated correlations r(lag)")

    @model_validator(mode="after")
    def _check_family(self):
        if self.family in ("power_exponential", "generalized_cauchy"):
            if self.C is None or self.alpha is None:
                raise ValueError(f"{self.family} needs both C and alpha")
            if self.family == "generalized_cauchy" and self.gamma is None:
                raise ValueError("generalized_cauchy needs gamma")
        else:
            if not self.lags or not self.values or len(self.lags) != len(self.values):
                raise ValueError("tabulated model needs lags and values of equal length")
            lags = np.asarray(self.lags)
            if lags[0] != 0.0 or np.any(np.diff(lags) <= 0):
                raise ValueError("tabulated lags must start at 0 and increase strictly")
            if self.values[0] != 1.0:
                raise ValueError("tabulated correlation must equal 1 at lag 0")
            if any(abs(v) > 1.0 for v in self.values):
                raise ValueError("tabulated correlations must lie in [-1, 1]")
        return self

    @property
    def local_constant(self) -> float:
        """Coefficient of |t|^alpha in 1 - r(t) as t -> 0"""
        if self.family == "generalized_cauchy":
            return self.gamma * self.C
        if self.C is None:
            raise ConfigError("tabulated model must declare C to enter a model spec")
        return self.C

    @property
    def max_lag(self) -> float:
        return self.lags[-1] if self.family == "tabulated" else np.inf


class LocalExpansion(BaseModel):
    model_config = ConfigDict(frozen=True)

    C_local: float = Field(description="Fitted coefficient of |t|^alpha")
    alpha_local: float = Field(description="Fitted local exponent")
    fit_residual: float = Field(ge=0, description="Max relative deviation of (1-r)/(C t^alpha) from 1")


class BermanReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    c: float = Field(ge=0, description="Berman exponent for (kappa, k)")
    satisfied: bool
    tolerance: float
    evidence: List[Tuple[float, float]] = Field(description="(t, max_l |r_l(t)| (ln t)^c) pairs")


def eval_correlation(model: CovarianceModel, t: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """Evaluate r(t); accepts scalars or arrays of nonnegative lags"""
    lag = np.asarray(t, dtype=float)
    if np.any(lag < 0):
        raise ConfigError("correlation lags must be nonnegative")

    if model.family == "power_exponential":
        value = np.exp(-model.C * lag ** model.alpha)
    elif model.family == "generalized_cauchy":
        value = (1.0 + model.C * lag ** model.alpha) ** (-model.gamma)
    else:
        if np.any(lag > model.max_lag):
            raise OutOfRangeError(
                f"tabulated model queried at lag {float(np.max(lag))} beyond {model.max_lag}",
                lag=float(np.max(lag)),
            )
        value = np.interp(lag, model.lags, model.values)

    return float(value) if np.ndim(value) == 0 else value


def one_minus_correlation(model: CovarianceModel, t: Union[float, np.ndarray]) -> np.ndarray:
    """1 - r(t) computed without cancellation at small lags"""
    lag = np.asarray(t, dtype=float)
    if model.family == "power_exponential":
        return -np.expm1(-model.C * lag ** model.alpha)
    if model.family == "generalized_cauchy":
        return -np.expm1(-model.gamma * np.log1p(model.C * lag ** model.alpha))
    return 1.0 - np.asarray(eval_correlation(model, lag))


def fit_local_expansion(model: CovarianceModel, lags: Sequence[float]) -> LocalExpansion:
    """Least-squares fit of log(1 - r(t)) against log t"""
    t = np.asarray(lags, dtype=float)
    if t.size < 4:
        raise ConfigError(f"local expansion needs at least 4 lags, got {t.size}")
    if np.any(t <= 0) or np.any(t >= 1) or np.any(np.diff(t) >= 0):
        raise ConfigError("fit lags must lie in (0, 1) and decrease strictly")

    gap = one_minus_correlation(model, t)
    if np.any(gap <= 0):
        bad = float(t[np.argmax(gap <= 0)])
        raise DegenerateModelError(f"1 - r(t) <= 0 at lag {bad}", lag=bad)

    slope, intercept = np.polyfit(np.log(t), np.log(gap), 1)
    C_local = float(np.exp(intercept))
    alpha_local = float(slope)
    residual = float(np.max(np.abs(gap / (C_local * t ** alpha_local) - 1.0)))
    logger.debug("local fit: C=%.6g alpha=%.6g residual=%.3g", C_local, alpha_local, residual)
    return LocalExpansion(C_local=C_local, alpha_local=alpha_local, fit_residual=residual)


def berman_exponent(kappa: float, k: int) -> float:
    if kappa <= 0:
        raise ConfigError("kappa must be positive")
    if kappa < 1:
        return 2.0 / kappa - 1.0
    if kappa <= 2:
        return 1.0
    return k + 1.0 - 2.0 * k / kappa


def berman_check(
    models: Sequence[CovarianceModel],
    kappa: float,
    k: int,
    horizon: float,
    tolerance: float = DEFAULT_BERMAN_TOLERANCE,
    points: int = 200,
) -> BermanReport:
    """Empirical check of max_l |r_l(t)| (ln t)^c -> 0 on a log grid up to the horizon"""
    if k < 0:
        raise ConfigError("k must be nonnegative")
    if horizon < np.e:
        raise ConfigError(f"Berman horizon must be at least e, got {horizon}")
    if not models:
        raise ConfigError("Berman check needs at least one model")

    c = berman_exponent(kappa, k)
    t = np.geomspace(np.e, horizon, points)
    r_max = np.max([np.abs(eval_correlation(model, t)) for model in models], axis=0)
    decay = r_max * np.log(t) ** c

    last_decade = t >= horizon / 10.0
    monotone = bool(np.all(np.diff(decay[last_decade]) <= 0))
    satisfied = monotone and bool(decay[-1] < tolerance)
    if not satisfied:
        logger.warning("Berman check failed: c=%.4g final value %.3g (tolerance %.1e)", c, decay[-1], tolerance)

    return BermanReport(
        c=c,
        satisfied=satisfied,
        tolerance=tolerance,
        evidence=[(float(a), float(b)) for a, b in zip(t, decay)],
    )
