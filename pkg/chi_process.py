"""
Difference of chi-type processes zeta(t) = |X1(t)|^kappa - |X2(t)|^kappa and
its path functionals: supremum, sojourn time and conditional excursions.
"""

import logging
import math
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

import analytics
from covariance import CovarianceModel, eval_correlation
from errors import ConfigError, DegenerateModelError, InfeasibleThresholdError
from gaussian_sim import Grid, PathBundle, RngStream

logger = logging.getLogger(__name__)

FEASIBILITY_FLOOR = 1e-6
DEFAULT_MESH_DELTA = 0.1


class ModelSpec(BaseModel):
    """The full problem instance (m, k, kappa, alpha, component models)"""

    model_config = ConfigDict(frozen=True)

    m: int = Field(ge=1, description="Components in the positive block")
    k: int = Field(ge=0, description="Components in the subtracted block")
    kappa: float = Field(gt=0, description="Power applied to both norms")
    alpha: float = Field(gt=0, le=2, description="Common local exponent")
    models: List[CovarianceModel] = Field(description="One model per component, or one broadcast to all")

    @model_validator(mode="before")
    @classmethod
    def _broadcast(cls, data):
        if isinstance(data, dict):
            models = data.get("models")
            if models is not None and len(models) == 1:
                total = int(data.get("m", 1)) + int(data.get("k", 0))
                data = {**data, "models": list(models) * total}
        return data

    @field_validator("models")
    @classmethod
    def _non_empty(cls, models):
        if not models:
            raise ValueError("at least one covariance model is required")
        return models

    @model_validator(mode="after")
    def _check_components(self):
        if len(self.models) != self.m + self.k:
            raise ValueError(f"expected {self.m + self.k} component models, got {len(self.models)}")
        for model in self.models:
            if model.alpha is not None and not math.isclose(model.alpha, self.alpha):
                raise ValueError(f"component alpha {model.alpha} differs from spec alpha {self.alpha}")
            if model.family == "tabulated" and model.C is None:
                raise ValueError("tabulated components must declare their local constant C")
        return self

    @property
    def C(self) -> np.ndarray:
        return np.array([model.local_constant for model in self.models])


class ChiPath(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    grid: Grid
    zeta: np.ndarray
    norms1: np.ndarray
    norms2: np.ndarray


class SojournSample(BaseModel):
    model_config = ConfigDict(frozen=True)

    u: float
    t: float = Field(description="Window length")
    sojourn: float = Field(ge=0, description="Time spent above u")


class ExcursionSample(BaseModel):
    """Rescaled conditional excursions w(u)(zeta(q t) - u) given zeta(0) > u"""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    u: float
    t_values: List[float]
    origin: np.ndarray = Field(description="w(u)(zeta(0) - u) for accepted draws")
    samples: np.ndarray = Field(description="Shape (len(t_values), count)")
    acceptance_rate: float
    draws: int


def _zeta(components: np.ndarray, spec: ModelSpec):
    norms1 = np.sqrt(np.sum(components[: spec.m] ** 2, axis=0))
    if spec.k:
        norms2 = np.sqrt(np.sum(components[spec.m :] ** 2, axis=0))
    else:
        norms2 = np.zeros_like(norms1)
    return norms1 ** spec.kappa - norms2 ** spec.kappa, norms1, norms2


def build_zeta(bundle: PathBundle, spec: ModelSpec) -> ChiPath:
    if bundle.components.shape[0] != spec.m + spec.k:
        raise ConfigError(
            f"bundle has {bundle.components.shape[0]} components, spec needs {spec.m + spec.k}"
        )
    zeta, norms1, norms2 = _zeta(bundle.components, spec)
    return ChiPath(grid=bundle.grid, zeta=zeta, norms1=norms1, norms2=norms2)


def path_supremum(path: ChiPath):
    """Grid maximum of zeta; vectorised over leading batch axes"""
    return np.max(path.zeta, axis=-1)


def sojourn_lengths(values: np.ndarray, h: float, u: float) -> np.ndarray:
    """
    Time above u on a uniform grid of spacing h, trailing axis is time.

    Cells with both endpoints above u count fully; a cell with exactly one
    endpoint above u contributes the linearly interpolated fraction.
    """
    values = np.asarray(values, dtype=float)
    left, right = values[..., :-1], values[..., 1:]
    above_left, above_right = left > u, right > u
    crossing = above_left ^ above_right
    spread = np.where(crossing, np.abs(right - left), 1.0)
    fraction = np.where(crossing, (np.maximum(left, right) - u) / spread, 0.0)
    fraction = np.where(above_left & above_right, 1.0, fraction)
    return h * np.sum(fraction, axis=-1)


def sojourn_time(path: ChiPath, u: float) -> SojournSample:
    length = float(sojourn_lengths(path.zeta, path.grid.h, u))
    return SojournSample(u=u, t=path.grid.t_max, sojourn=min(length, path.grid.t_max))


def mesh_for_threshold(spec: ModelSpec, u: float, t_max: float, delta: float = DEFAULT_MESH_DELTA) -> Grid:
    """Grid on [0, t_max] with h <= delta * q_kappa(u)"""
    if delta <= 0:
        raise ConfigError("mesh delta must be positive")
    q = analytics.scaling(spec.kappa, spec.alpha, u, k=spec.k).q
    n = int(math.ceil(t_max / (delta * q))) + 1
    return Grid(t_max=t_max, n=max(n, 2))


def _lag_correlations(spec: ModelSpec, lag: float) -> np.ndarray:
    if lag <= 0:
        raise ConfigError(f"lag must be positive, got {lag}")
    r = np.array([eval_correlation(model, lag) for model in spec.models])
    if np.any(np.abs(r) >= 1):
        raise DegenerateModelError(f"|r_i(lag)| >= 1 at lag {lag}", lag=lag)
    return r


def _advance(x0: np.ndarray, r: np.ndarray, stream: RngStream) -> np.ndarray:
    """X(lag) given X(0) for independent components with correlations r"""
    r = r.reshape((-1,) + (1,) * (x0.ndim - 1))
    return r * x0 + np.sqrt(1.0 - r ** 2) * stream.standard_normal(x0.shape)


def sample_two_point(spec: ModelSpec, lag: float, count: int, stream: RngStream):
    """Exact draws of (zeta(0), zeta(lag)), each of shape (count,)"""
    r = _lag_correlations(spec, lag)
    x0 = stream.standard_normal((spec.m + spec.k, count))
    x1 = _advance(x0, r, stream)
    return _zeta(x0, spec)[0], _zeta(x1, spec)[0]


def conditional_excursion(
    spec: ModelSpec,
    u: float,
    t_values: Sequence[float],
    count: int,
    stream: RngStream,
    batch_size: int = 1 << 16,
    max_draws: int = 200_000_000,
    quadrature_tol: float = 1e-9,
) -> ExcursionSample:
    """Rejection sampling of the origin state given zeta(0) > u, then exact advance to each q t"""
    t_values = [float(t) for t in t_values]
    if not t_values or any(t <= 0 for t in t_values):
        raise ConfigError("t_values must be a nonempty list of positive times")
    if count < 1:
        raise ConfigError("count must be positive")

    tail = analytics.tail_oracle(spec.m, spec.k, spec.kappa, u, quadrature_tol)
    if tail < FEASIBILITY_FLOOR:
        raise InfeasibleThresholdError(
            f"P(zeta(0) > {u}) = {tail:.3g} is below the desk floor {FEASIBILITY_FLOOR:g}",
            u=u,
            tail=tail,
        )
    expected_draws = count / tail
    if expected_draws > max_draws:
        raise InfeasibleThresholdError(
            f"P(zeta(0) > {u}) = {tail:.3g} needs about {expected_draws:.3g} draws for {count} acceptances, "
            f"above the budget of {max_draws}",
            u=u,
            tail=tail,
            max_draws=max_draws,
        )
    scales = analytics.scaling(spec.kappa, spec.alpha, u, k=spec.k)
    correlations = [_lag_correlations(spec, scales.q * t) for t in t_values]

    accepted: List[np.ndarray] = []
    kept = draws = 0
    while kept < count:
        if draws >= max_draws:
            raise InfeasibleThresholdError(
                f"rejection sampler starved: {kept} of {count} accepted after {draws} draws",
                u=u,
                acceptance_rate=kept / draws,
            )
        x0 = stream.standard_normal((spec.m + spec.k, batch_size))
        draws += batch_size
        hit = _zeta(x0, spec)[0] > u
        if hit.any():
            accepted.append(x0[:, hit])
            kept += int(hit.sum())

    rate = kept / draws
    if rate < FEASIBILITY_FLOOR:
        raise InfeasibleThresholdError(f"acceptance rate {rate:.3g} below the desk floor", u=u)
    logger.debug("conditional excursion u=%.4g: %d accepted of %d (rate %.3g)", u, kept, draws, rate)

    x0 = np.concatenate(accepted, axis=1)[:, :count]
    origin = scales.w * (_zeta(x0, spec)[0] - u)
    samples = np.stack([scales.w * (_zeta(_advance(x0, r, stream), spec)[0] - u) for r in correlations])
    return ExcursionSample(
        u=u,
        t_values=t_values,
        origin=origin,
        samples=samples,
        acceptance_rate=rate,
        draws=draws,
    )
