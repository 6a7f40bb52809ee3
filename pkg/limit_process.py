"""
Limit process eta(t) = Z~(t) + E of high excursions of zeta, and Monte Carlo
estimators of its Pickands-type constant and its sojourn tail Upsilon.

    L1(t) = sum_{i<=m} sqrt(2 C_i) O_i Z_i(t) - (sum_{i<=m} C_i O_i^2) t^alpha
    L2(t) = W - (sum_{i>m} (W^(1/kappa) O_i + kappa^(-1/kappa) sqrt(2 C_i) Z_i(t))^2)^(kappa/2)
    Z~ = L1 (kappa > 1), L1 + L2 (kappa = 1), L2 (kappa < 1)

The L2 bracket is the expanded square W^(2/kappa) + 2 (W/kappa)^(1/kappa) sum sqrt(2C_i) O_i Z_i
+ 2 kappa^(-2/kappa) sum C_i Z_i^2, evaluated as a squared norm so it stays nonnegative.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from chi_process import ModelSpec, sojourn_lengths
from errors import ConfigError, DegenerateConfigurationError, NumericError
from gaussian_sim import RngStream, sample_fbm

logger = logging.getLogger(__name__)

DEFAULT_BATCH = 4096
TRUNCATION_WARNING = 0.01


class LimitConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    spec: ModelSpec
    a: float = Field(gt=0, lt=1, description="Grid step")
    J: int = Field(ge=1, description="Grid horizon; time horizon is a*J")

    @property
    def horizon(self) -> float:
        return self.a * self.J

    @property
    def drift_scale(self) -> float:
        return float(np.min(self.spec.C)) ** (1.0 / self.spec.alpha)

    @property
    def horizon_ok(self) -> bool:
        return self.horizon >= 10.0 / self.drift_scale

    @property
    def times(self) -> np.ndarray:
        return self.a * np.arange(1, self.J + 1)


class LimitPathSample(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    O1: np.ndarray = Field(description="Uniform point on the unit sphere of R^m")
    O2: np.ndarray = Field(description="Uniform point on the unit sphere of R^k (empty for k=0)")
    W: float = Field(ge=0, description="Gamma(k/kappa, 1) variate, 0 for k=0")
    E: float = Field(gt=0, description="Unit-mean exponential")
    Z: np.ndarray = Field(description="fBm paths, shape (m+k, J)")
    eta: np.ndarray = Field(description="eta(a j), j = 1..J")


class PickandsTally(BaseModel):
    """Associative merge unit for Pickands estimation"""

    model_config = ConfigDict(frozen=True)

    successes: int = 0
    count: int = 0
    tail_hits: int = Field(default=0, description="Replications whose second-half maximum exceeds -1")

    def merge(self, other: "PickandsTally") -> "PickandsTally":
        return PickandsTally(
            successes=self.successes + other.successes,
            count=self.count + other.count,
            tail_hits=self.tail_hits + other.tail_hits,
        )

    def estimate(self, config: LimitConfig) -> "PickandsEstimate":
        if self.count == 0:
            raise ConfigError("cannot estimate from an empty tally")
        a = config.a
        p_hat = self.successes / self.count
        tail_fraction = self.tail_hits / self.count
        if tail_fraction > TRUNCATION_WARNING:
            logger.warning(
                "%.2f%% of replications exceed -1 on the second half of the grid (a=%g, J=%d): truncation bias likely",
                100 * tail_fraction,
                a,
                config.J,
            )
        zero = self.successes == 0
        if zero:
            logger.warning("no replication stayed below 0 (a=%g, J=%d, reps=%d); only an upper bound is reported", a, config.J, self.count)
        return PickandsEstimate(
            h_hat=p_hat / a,
            stderr=math.sqrt(p_hat * (1 - p_hat) / self.count) / a,
            a=a,
            J=config.J,
            reps=self.count,
            p_hat=p_hat,
            tail_fraction=tail_fraction,
            zero_successes=zero,
            h_upper=3.0 / (self.count * a) if zero else None,
        )


class PickandsEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    h_hat: float = Field(ge=0)
    stderr: float = Field(ge=0)
    a: float
    J: int
    reps: int
    p_hat: float = Field(ge=0, le=1, description="Proportion with max_j eta(a j) <= 0")
    tail_fraction: float = Field(ge=0, le=1, description="Truncation-bias diagnostic")
    zero_successes: bool = False
    h_upper: Optional[float] = Field(default=None, description="95% upper bound when no success was seen")


class PickandsExtrapolation(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimates: List[PickandsEstimate]
    h_extrapolated: float
    stderr: float = Field(ge=0)


class UpsilonCurve(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: List[float]
    upsilon: List[float] = Field(description="Isotonic (nonincreasing) estimates")
    upsilon_raw: List[float]
    stderr: List[float]
    reps: int


def _check_config(spec: ModelSpec):
    if spec.k == 0 and spec.kappa < 1:
        raise DegenerateConfigurationError(
            f"limit process is degenerate for k=0 and kappa={spec.kappa} < 1",
            k=spec.k,
            kappa=spec.kappa,
        )


def _sphere(dim: int, count: int, stream: RngStream) -> np.ndarray:
    if dim == 0:
        return np.zeros((count, 0))
    points = stream.standard_normal((count, dim))
    return points / np.linalg.norm(points, axis=1, keepdims=True)


def _assemble(spec: ModelSpec, O1, O2, W, E, Z, times) -> np.ndarray:
    """eta on `times` for a batch; Z has shape (m+k, count, len(times))"""
    m, kappa = spec.m, spec.kappa
    C = spec.C
    drift = times ** spec.alpha

    def L1():
        noise = np.einsum("ci,ict->ct", np.sqrt(2 * C[:m]) * O1, Z[:m])
        return noise - np.sum(C[:m] * O1 ** 2, axis=1)[:, None] * drift

    def L2():
        if spec.k == 0:
            return np.zeros_like(Z[0])
        radius = (W ** (1.0 / kappa))[None, :, None] * O2.T[:, :, None]
        shift = kappa ** (-1.0 / kappa) * np.sqrt(2 * C[m:])[:, None, None] * Z[m:]
        inner = np.sum((radius + shift) ** 2, axis=0)
        return W[:, None] - inner ** (kappa / 2)

    if kappa > 1:
        tilde = L1()
    elif kappa == 1:
        tilde = L1() + L2()
    else:
        tilde = L2()
    return tilde + E[:, None]


def _draw_factors(spec: ModelSpec, count: int, stream: RngStream):
    O1 = _sphere(spec.m, count, stream)
    O2 = _sphere(spec.k, count, stream)
    W = stream.standard_gamma(spec.k / spec.kappa, count) if spec.k else np.zeros(count)
    E = stream.standard_exponential(count)
    return O1, O2, W, E


def _draw_batch(config: LimitConfig, count: int, stream: RngStream) -> Dict[str, np.ndarray]:
    spec = config.spec
    _check_config(spec)
    O1, O2, W, E = _draw_factors(spec, count, stream)
    hurst = spec.alpha / 2
    Z = np.stack([sample_fbm(hurst, config.a, config.J, stream, count=count) for _ in range(spec.m + spec.k)])
    eta = _assemble(spec, O1, O2, W, E, Z, config.times)
    return {"O1": O1, "O2": O2, "W": W, "E": E, "Z": Z, "eta": eta}


def sample_eta(config: LimitConfig, stream: RngStream) -> LimitPathSample:
    draw = _draw_batch(config, 1, stream)
    return LimitPathSample(
        O1=draw["O1"][0],
        O2=draw["O2"][0],
        W=float(draw["W"][0]),
        E=float(draw["E"][0]),
        Z=draw["Z"][:, 0, :],
        eta=draw["eta"][0],
    )


def sample_eta_batch(config: LimitConfig, count: int, stream: RngStream) -> np.ndarray:
    """eta(a j), j = 1..J, for `count` independent replications, shape (count, J)"""
    return _draw_batch(config, count, stream)["eta"]


def sample_eta_batch_with_origin(config: LimitConfig, count: int, stream: RngStream) -> np.ndarray:
    """eta on {0, a, ..., aJ}; eta(0) = E"""
    draw = _draw_batch(config, count, stream)
    return np.concatenate([draw["E"][:, None], draw["eta"]], axis=1)


def sample_eta_marginal(spec: ModelSpec, t: float, count: int, stream: RngStream) -> np.ndarray:
    """Exact draws of eta(t) at one time, using Z_i(t) = t^(alpha/2) N"""
    _check_config(spec)
    if t <= 0:
        raise ConfigError("marginal time must be positive")
    O1, O2, W, E = _draw_factors(spec, count, stream)
    Z = t ** (spec.alpha / 2) * stream.standard_normal((spec.m + spec.k, count, 1))
    return _assemble(spec, O1, O2, W, E, Z, np.array([t]))[:, 0]


def non_exceedance(eta: np.ndarray, J: Optional[int] = None) -> np.ndarray:
    """max_{1<=j<=J} eta(a j) <= 0 per replication"""
    window = eta if J is None else eta[:, :J]
    return np.max(window, axis=1) <= 0


def pickands_tally(config: LimitConfig, reps: int, stream: RngStream, batch_size: int = DEFAULT_BATCH) -> PickandsTally:
    if reps < 1:
        raise ConfigError("reps must be positive")
    if not config.horizon_ok:
        logger.warning("horizon a*J=%.3g is short for drift scale %.3g", config.horizon, config.drift_scale)
    tally = PickandsTally()
    half = config.J // 2
    done = 0
    while done < reps:
        count = min(batch_size, reps - done)
        eta = sample_eta_batch(config, count, stream)
        tally = tally.merge(
            PickandsTally(
                successes=int(non_exceedance(eta).sum()),
                count=count,
                tail_hits=int((np.max(eta[:, half:], axis=1) > -1).sum()),
            )
        )
        done += count
    return tally


def estimate_pickands(config: LimitConfig, reps: int, stream: RngStream, batch_size: int = DEFAULT_BATCH) -> PickandsEstimate:
    """(1/a) P(max_{1<=j<=J} eta(a j) <= 0); j starts at 1 since eta(0) = E > 0"""
    estimate = pickands_tally(config, reps, stream, batch_size).estimate(config)
    logger.debug("Pickands a=%g J=%d: h=%.4g +- %.2g", config.a, config.J, estimate.h_hat, estimate.stderr)
    return estimate


def extrapolate_pickands(estimates: Sequence[PickandsEstimate]) -> PickandsExtrapolation:
    """Weighted linear-in-a extrapolation of h_hat(a) to a -> 0"""
    if not estimates:
        raise ConfigError("extrapolation needs at least one estimate")
    if len(estimates) == 1:
        only = estimates[0]
        return PickandsExtrapolation(estimates=list(estimates), h_extrapolated=only.h_hat, stderr=only.stderr)

    a = np.array([e.a for e in estimates])
    if np.unique(a).size != a.size:
        raise ConfigError(f"extrapolation needs distinct grid steps, got {a.tolist()}")
    h = np.array([e.h_hat for e in estimates])
    floor = np.array([1.0 / (e.reps * e.a) for e in estimates])
    sigma = np.maximum([e.stderr for e in estimates], floor)
    try:
        coefficients, covariance = np.polyfit(a, h, 1, w=1.0 / sigma, cov="unscaled")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NumericError(f"Pickands extrapolation fit failed: {exc}", a=str(a.tolist())) from exc
    return PickandsExtrapolation(
        estimates=list(estimates),
        h_extrapolated=float(coefficients[1]),
        stderr=float(math.sqrt(covariance[1, 1])),
    )


def upsilon_grid(config: LimitConfig, x_grid: Sequence[float]) -> np.ndarray:
    x = np.asarray(x_grid, dtype=float)
    if x.size == 0 or np.any(x < 0):
        raise ConfigError("x_grid must be a nonempty list of nonnegative values")
    if np.max(x) >= config.horizon / 2:
        raise ConfigError(f"max x {np.max(x):g} must stay below half the horizon {config.horizon / 2:g}")
    return x


def upsilon_exceedances(
    config: LimitConfig,
    x: np.ndarray,
    reps: int,
    stream: RngStream,
    batch_size: int = DEFAULT_BATCH,
) -> np.ndarray:
    """Per-x count of replications whose sojourn above 0 exceeds x"""
    exceed = np.zeros(x.size, dtype=np.int64)
    done = 0
    while done < reps:
        count = min(batch_size, reps - done)
        path = sample_eta_batch_with_origin(config, count, stream)
        sojourn = sojourn_lengths(path, config.a, 0.0)
        exceed += np.sum(sojourn[:, None] > x[None, :], axis=0)
        done += count
    return exceed


def upsilon_curve(x: np.ndarray, exceed: np.ndarray, reps: int) -> UpsilonCurve:
    raw = exceed / reps
    isotonic = np.minimum.accumulate(raw)
    return UpsilonCurve(
        x=x.tolist(),
        upsilon=isotonic.tolist(),
        upsilon_raw=raw.tolist(),
        stderr=np.sqrt(raw * (1 - raw) / reps).tolist(),
        reps=reps,
    )


def estimate_upsilon(
    config: LimitConfig,
    x_grid: Sequence[float],
    reps: int,
    stream: RngStream,
    batch_size: int = DEFAULT_BATCH,
) -> UpsilonCurve:
    """Tail of the total sojourn of eta above 0, estimated on the truncated grid"""
    x = upsilon_grid(config, x_grid)
    if reps < 1:
        raise ConfigError("reps must be positive")
    return upsilon_curve(x, upsilon_exceedances(config, x, reps, stream, batch_size), reps)
