"""
Reproducible replication engine and the experiments checking each limit statement.

Every replication owns a counter-based stream keyed by
(master_seed, experiment id, replication index), and results are reduced
sequentially in index order, so outputs do not depend on the worker count.
"""

import logging
import math
import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from functools import reduce
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats

import analytics
from chi_process import (
    DEFAULT_MESH_DELTA,
    ChiPath,
    ModelSpec,
    build_zeta,
    conditional_excursion,
    mesh_for_threshold,
    path_supremum,
    sojourn_lengths,
)
from covariance import DEFAULT_BERMAN_TOLERANCE, CovarianceModel, berman_check
from errors import (
    BermanConditionError,
    ChiExtremesError,
    ConfigError,
    InfeasibleError,
    ReplicationError,
)
from gaussian_sim import (
    DEFAULT_EMBEDDING_TOLERANCE,
    CirculantEmbedding,
    Grid,
    RngStream,
    build_embedding,
    sample_bundle,
)
from limit_process import (
    LimitConfig,
    PickandsEstimate,
    PickandsExtrapolation,
    PickandsTally,
    UpsilonCurve,
    extrapolate_pickands,
    pickands_tally,
    sample_eta_marginal,
    upsilon_curve,
    upsilon_exceedances,
    upsilon_grid,
)

logger = logging.getLogger(__name__)

THREADS_ENV = "CHI_EXTREMES_THREADS"
Z_95 = 1.959963984540054
DEFAULT_A_LADDER = (0.2, 0.1, 0.05)
DEFAULT_HORIZON = 30.0
PICKANDS_BLOCK = 4096
PATHS_PER_TASK = 2


class RngPolicy(BaseModel):
    model_config = ConfigDict(frozen=True)

    master_seed: int = Field(ge=0, lt=2 ** 64, description="64-bit master seed")

    def stream(self, experiment_id: str, index: int) -> RngStream:
        """Philox substream for one replication of one experiment"""
        key = np.random.SeedSequence([self.master_seed, zlib.crc32(experiment_id.encode()), index])
        return np.random.Generator(np.random.Philox(key))


class SummaryStats(BaseModel):
    model_config = ConfigDict(frozen=True)

    n: int = Field(ge=0)
    mean: float
    stderr: float = Field(ge=0)
    ci_low: float
    ci_high: float
    proportion: bool = Field(default=False, description="Wilson interval instead of the normal one")
    total: float = Field(description="Sum of values, kept for merging")
    total_sq: float = Field(description="Sum of squared values, kept for merging")
    extras: Dict[str, float] = Field(default_factory=dict)

    @classmethod
    def from_sums(cls, n: int, total: float, total_sq: float, proportion: bool = False, extras=None) -> "SummaryStats":
        if n == 0:
            return cls(n=0, mean=math.nan, stderr=0.0, ci_low=math.nan, ci_high=math.nan,
                       proportion=proportion, total=0.0, total_sq=0.0, extras=extras or {})
        mean = total / n
        variance = max(total_sq - n * mean * mean, 0.0) / (n - 1) if n > 1 else 0.0
        stderr = math.sqrt(variance / n)
        if proportion:
            interval = stats.binomtest(int(round(total)), n).proportion_ci(0.95, method="wilson")
            low, high = float(interval.low), float(interval.high)
        else:
            low, high = mean - Z_95 * stderr, mean + Z_95 * stderr
        return cls(n=n, mean=mean, stderr=stderr, ci_low=min(low, mean), ci_high=max(high, mean),
                   proportion=proportion, total=total, total_sq=total_sq, extras=extras or {})

    @classmethod
    def from_values(cls, values: Sequence[float], proportion: bool = False) -> "SummaryStats":
        values = np.asarray(values, dtype=float)
        if proportion and np.any((values != 0) & (values != 1)):
            raise ConfigError("proportion statistics need 0/1 values")
        return cls.from_sums(values.size, math.fsum(values), math.fsum(values * values), proportion)

    def merge(self, other: "SummaryStats") -> "SummaryStats":
        if self.proportion != other.proportion:
            raise ConfigError("cannot merge a proportion with a mean statistic")
        return SummaryStats.from_sums(
            self.n + other.n,
            self.total + other.total,
            self.total_sq + other.total_sq,
            self.proportion,
            {**self.extras, **other.extras},
        )


def worker_count(parallelism: int) -> int:
    if parallelism < 1:
        raise ConfigError("parallelism must be positive")
    cap = os.getenv(THREADS_ENV)
    if cap:
        try:
            parallelism = min(parallelism, max(int(cap), 1))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}")
    return parallelism


def replicate(
    task: Callable[[int, RngStream], Any],
    reps: int,
    policy: RngPolicy,
    experiment_id: str,
    parallelism: int = 1,
    start: int = 0,
) -> List[Any]:
    """task(i, stream_i) for i in start..start+reps-1, returned in index order"""
    if reps < 1:
        raise ConfigError("reps must be positive")

    def run(index: int):
        try:
            return task(index, policy.stream(experiment_id, index))
        except ReplicationError:
            raise
        except Exception as exc:
            raise ReplicationError(index, exc) from exc

    indices = range(start, start + reps)
    workers = worker_count(parallelism)
    logger.debug("%s: %d replications on %d worker(s)", experiment_id, reps, workers)
    if workers == 1:
        return [run(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, indices))


def run_replications(
    task: Callable[[int, RngStream], float],
    reps: int,
    policy: RngPolicy,
    parallelism: int = 1,
    experiment_id: str = "run",
    start: int = 0,
    proportion: bool = False,
) -> SummaryStats:
    values = replicate(task, reps, policy, experiment_id, parallelism, start)
    return SummaryStats.from_values([float(v) for v in values], proportion=proportion)


def unwrap(error: ChiExtremesError) -> ChiExtremesError:
    """The domain error behind a replication failure, when there is one"""
    cause = error.__cause__
    if isinstance(error, ReplicationError) and isinstance(cause, ChiExtremesError):
        return cause
    return error


# Pickands ladder


class PickandsReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    estimates: List[PickandsEstimate]
    extrapolation: PickandsExtrapolation
    horizon: float


def _pickands_at(config: LimitConfig, reps: int, policy: RngPolicy, parallelism: int, block: int) -> PickandsEstimate:
    blocks = math.ceil(reps / block)

    def task(index: int, stream: RngStream) -> PickandsTally:
        count = min(block, reps - index * block)
        return pickands_tally(config, count, stream, batch_size=block)

    tallies = replicate(task, blocks, policy, f"pickands-a{config.a!r}-J{config.J}", parallelism)
    return reduce(PickandsTally.merge, tallies, PickandsTally()).estimate(config)


def experiment_pickands(
    spec: ModelSpec,
    a_list: Sequence[float],
    horizon: float,
    reps: int,
    policy: RngPolicy,
    parallelism: int = 1,
    block: int = PICKANDS_BLOCK,
) -> PickandsReport:
    """Raw h_hat on each a with J = ceil(horizon / a), plus the extrapolation a -> 0"""
    if not a_list:
        raise ConfigError("a list must not be empty")
    if len(set(a_list)) != len(a_list):
        raise ConfigError(f"a list must not repeat a value, got {list(a_list)}")
    if horizon <= 0:
        raise ConfigError("horizon must be positive")
    estimates = []
    for a in a_list:
        config = LimitConfig(spec=spec, a=a, J=max(int(math.ceil(horizon / a)), 1))
        estimates.append(_pickands_at(config, reps, policy, parallelism, block))
    return PickandsReport(estimates=estimates, extrapolation=extrapolate_pickands(estimates), horizon=horizon)


def resolve_H(
    spec: ModelSpec,
    policy: RngPolicy,
    H: Optional[float] = None,
    a_list: Sequence[float] = DEFAULT_A_LADDER,
    horizon: float = DEFAULT_HORIZON,
    reps: int = 100_000,
    parallelism: int = 1,
) -> float:
    """Supplied H, else the extrapolated Pickands estimate for this model"""
    if H is not None:
        if H <= 0:
            raise ConfigError("H must be positive")
        return H
    report = experiment_pickands(spec, a_list, horizon, reps, policy, parallelism)
    value = report.extrapolation.h_extrapolated
    if value <= 0:
        raise InfeasibleError("Pickands extrapolation is not positive; supply H or raise reps", value=value)
    logger.info("estimated H = %.4g +- %.2g", value, report.extrapolation.stderr)
    return value


# sup-probabilities


class SupProbRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    T: float
    u: float
    tail_oracle: Optional[float] = None
    empirical: Optional[float] = None
    stderr: Optional[float] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    asymptotic: Optional[float] = None
    ratio: Optional[float] = None
    piterbarg: Optional[float] = None
    out_of_regime: Optional[bool] = None
    skipped: Optional[str] = Field(default=None, description="Reason when u was not simulated")


class SupProbReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: List[SupProbRow]
    H_used: float
    grids: Dict[str, int] = Field(description="Grid size per T")


def _component_embeddings(spec: ModelSpec, grid: Grid, tolerance: float):
    """One embedding per distinct model, shared by every component using it"""
    built: Dict[CovarianceModel, CirculantEmbedding] = {}
    for model in spec.models:
        if model not in built:
            built[model] = build_embedding(model, grid, tolerance)
    return [built[model] for model in spec.models]


def replicate_paths(
    spec: ModelSpec,
    grid: Grid,
    reduce_path: Callable[[ChiPath], np.ndarray],
    reps: int,
    policy: RngPolicy,
    experiment_id: str,
    parallelism: int = 1,
    embedding_tol: float = DEFAULT_EMBEDDING_TOLERANCE,
) -> np.ndarray:
    """
    reduce_path over `reps` independent zeta paths.

    Each task simulates PATHS_PER_TASK replications, so every complex
    transform contributes both of its paths; stream i feeds replications
    PATHS_PER_TASK*i onwards.
    """
    if reps < 1:
        raise ConfigError("reps must be positive")
    embeddings = _component_embeddings(spec, grid, embedding_tol)

    def task(index: int, stream: RngStream) -> np.ndarray:
        bundle = sample_bundle(embeddings, stream, count=PATHS_PER_TASK)
        return np.asarray(reduce_path(build_zeta(bundle, spec)), dtype=float)

    tasks = math.ceil(reps / PATHS_PER_TASK)
    return np.concatenate(replicate(task, tasks, policy, experiment_id, parallelism))[:reps]


def simulate_suprema(
    spec: ModelSpec,
    grid: Grid,
    reps: int,
    policy: RngPolicy,
    experiment_id: str,
    parallelism: int = 1,
    embedding_tol: float = DEFAULT_EMBEDDING_TOLERANCE,
) -> np.ndarray:
    """Grid maxima of zeta over independent replications"""
    return replicate_paths(spec, grid, path_supremum, reps, policy, experiment_id, parallelism, embedding_tol)


def experiment_sup_prob(
    spec: ModelSpec,
    T: float,
    u_list: Sequence[float],
    reps: int,
    policy: RngPolicy,
    H: Optional[float] = None,
    parallelism: int = 1,
    mesh_delta: float = DEFAULT_MESH_DELTA,
    min_tail: float = 1e-6,
    piterbarg_K: float = 10.0,
    piterbarg_beta: Optional[float] = None,
    quadrature_tol: float = analytics.DEFAULT_QUADRATURE_TOL,
    embedding_tol: float = DEFAULT_EMBEDDING_TOLERANCE,
) -> SupProbReport:
    """Empirical P(sup_[0,T] zeta > u) against the sup asymptotic and the Piterbarg ceiling"""
    if not u_list:
        raise ConfigError("u list must not be empty")
    if T <= 0:
        raise ConfigError("T must be positive")
    beta = piterbarg_beta if piterbarg_beta is not None else 2 / spec.kappa + 1

    rows: Dict[float, SupProbRow] = {}
    feasible = []
    for u in u_list:
        if u <= 1:
            rows[u] = SupProbRow(T=T, u=u, skipped="u must exceed 1")
            continue
        tail = analytics.tail_oracle(spec.m, spec.k, spec.kappa, u, quadrature_tol)
        if tail < min_tail:
            logger.warning("skipping u=%g: P(zeta(0) > u) = %.3g below %.1e", u, tail, min_tail)
            rows[u] = SupProbRow(T=T, u=u, tail_oracle=tail, skipped=f"tail {tail:.3g} below {min_tail:g}")
            continue
        feasible.append((u, tail))

    H_used = H if H is not None else math.nan
    grids = {}
    if feasible:
        H_used = resolve_H(spec, policy, H, parallelism=parallelism)
        grid = mesh_for_threshold(spec, max(u for u, _ in feasible), T, mesh_delta)
        grids[repr(T)] = grid.n
        maxima = simulate_suprema(spec, grid, reps, policy, f"sup-prob-T{T!r}", parallelism, embedding_tol)
        for u, tail in feasible:
            summary = SummaryStats.from_values((maxima > u).astype(float), proportion=True)
            asymptotic = analytics.sup_prob_asymptotic(T, u, H_used, spec)
            rows[u] = SupProbRow(
                T=T,
                u=u,
                tail_oracle=tail,
                empirical=summary.mean,
                stderr=summary.stderr,
                ci_low=summary.ci_low,
                ci_high=summary.ci_high,
                asymptotic=asymptotic.value,
                ratio=summary.mean / asymptotic.value if asymptotic.value > 0 else math.nan,
                piterbarg=analytics.piterbarg_bound(T, u, spec, piterbarg_K, beta),
                out_of_regime=asymptotic.out_of_regime,
            )
    return SupProbReport(rows=[rows[u] for u in u_list], H_used=H_used, grids=grids)


# sojourn times


class SojournRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    lhs: float = Field(description="E[(vL - x)+] / (v E[L])")
    lhs_stderr: float
    upsilon: float
    upsilon_stderr: float
    ratio: float
    overlap: bool = Field(description="95% intervals of both sides overlap")


class SojournReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    u: float
    t_window: float
    v: float
    mean_sojourn: float
    mean_sojourn_stderr: float
    rows: List[SojournRow]
    upsilon: UpsilonCurve


def sojourn_ratio(scaled: np.ndarray, x: float):
    """E[(V - x)+] / E[V] and its delta-method standard error"""
    excess = np.maximum(scaled - x, 0.0)
    ratio = float(excess.mean() / scaled.mean())
    n = scaled.size
    residual = excess - ratio * scaled
    stderr = float(residual.std(ddof=1) / math.sqrt(n) / scaled.mean()) if n > 1 else 0.0
    return ratio, stderr


def experiment_upsilon(
    config: LimitConfig,
    x_grid: Sequence[float],
    reps: int,
    policy: RngPolicy,
    parallelism: int = 1,
    block: int = PICKANDS_BLOCK,
) -> UpsilonCurve:
    """Upsilon on (a, J), replicated blockwise so the worker count leaves it unchanged"""
    x = upsilon_grid(config, x_grid)
    if reps < 1:
        raise ConfigError("reps must be positive")

    def task(index: int, stream: RngStream) -> np.ndarray:
        return upsilon_exceedances(config, x, min(block, reps - index * block), stream, batch_size=block)

    counts = replicate(task, math.ceil(reps / block), policy, f"upsilon-a{config.a!r}-J{config.J}", parallelism)
    return upsilon_curve(x, np.sum(counts, axis=0), reps)


def experiment_sojourn(
    spec: ModelSpec,
    u: float,
    t_window: float,
    x_grid: Sequence[float],
    reps: int,
    policy: RngPolicy,
    a: float = 0.05,
    horizon: float = DEFAULT_HORIZON,
    limit_reps: Optional[int] = None,
    parallelism: int = 1,
    mesh_delta: float = DEFAULT_MESH_DELTA,
    embedding_tol: float = DEFAULT_EMBEDDING_TOLERANCE,
) -> SojournReport:
    if not x_grid:
        raise ConfigError("x grid must not be empty")
    grid = mesh_for_threshold(spec, u, t_window, mesh_delta)

    def time_above(path: ChiPath) -> np.ndarray:
        return sojourn_lengths(path.zeta, grid.h, u)

    lengths = replicate_paths(spec, grid, time_above, reps, policy, f"sojourn-u{u!r}", parallelism, embedding_tol)
    if not np.any(lengths > 0):
        raise InfeasibleError(f"no replication spent time above u={u}; mean sojourn is indistinguishable from 0", u=u)

    scales = analytics.scaling(spec.kappa, spec.alpha, u, k=spec.k)
    v = u ** (2 * scales.tau / (spec.alpha * spec.kappa))
    scaled = v * lengths

    config = LimitConfig(spec=spec, a=a, J=max(int(math.ceil(horizon / a)), 1))
    curve = experiment_upsilon(config, x_grid, limit_reps or reps, policy, parallelism)

    rows = []
    for x, upsilon, upsilon_se in zip(curve.x, curve.upsilon, curve.stderr):
        lhs, lhs_se = sojourn_ratio(scaled, x)
        rows.append(
            SojournRow(
                x=x,
                lhs=lhs,
                lhs_stderr=lhs_se,
                upsilon=upsilon,
                upsilon_stderr=upsilon_se,
                ratio=lhs / upsilon if upsilon > 0 else math.nan,
                overlap=abs(lhs - upsilon) <= Z_95 * (lhs_se + upsilon_se),
            )
        )
    return SojournReport(
        u=u,
        t_window=t_window,
        v=v,
        mean_sojourn=float(lengths.mean()),
        mean_sojourn_stderr=float(lengths.std(ddof=1) / math.sqrt(lengths.size)) if lengths.size > 1 else 0.0,
        rows=rows,
        upsilon=curve,
    )


# Gumbel limit


class GumbelRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    T: float
    reps: int
    grid_n: Optional[int] = None
    a_T: float
    b_T: float
    K0: float
    D0: float
    D0_tail_consistent: float
    D0_literal: float
    ks: float
    ks_null_scale: float = Field(description="1.63 / sqrt(reps)")
    mean: float
    mean_stderr: float
    variance: float
    seleznjev_p1: float
    seleznjev_p2: float


class GumbelReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: List[GumbelRow]
    H_used: float
    berman_c: float


def gumbel_report(maxima: Sequence[float], norming: analytics.GumbelNorming, kappa: float, grid_n: Optional[int] = None) -> GumbelRow:
    """Normalise maxima with (a_T, b_T) and compare them with the standard Gumbel law"""
    maxima = np.asarray(maxima, dtype=float)
    if maxima.size < 2:
        raise ConfigError("Gumbel diagnostics need at least two maxima")
    normalized = norming.a_T * (maxima - norming.b_T)
    return GumbelRow(
        T=norming.T,
        reps=int(maxima.size),
        grid_n=grid_n,
        a_T=norming.a_T,
        b_T=norming.b_T,
        K0=norming.K0,
        D0=norming.D0,
        D0_tail_consistent=norming.D0_tail_consistent,
        D0_literal=norming.D0_literal,
        ks=analytics.ks_distance(normalized),
        ks_null_scale=1.63 / math.sqrt(maxima.size),
        mean=float(normalized.mean()),
        mean_stderr=float(normalized.std(ddof=1) / math.sqrt(maxima.size)),
        variance=float(normalized.var(ddof=1)),
        seleznjev_p1=analytics.seleznjev_moment(maxima, norming.T, kappa, 1).value,
        seleznjev_p2=analytics.seleznjev_moment(maxima, norming.T, kappa, 2).value,
    )


def experiment_gumbel(
    spec: ModelSpec,
    T_list: Sequence[float],
    reps: int,
    policy: RngPolicy,
    H: Optional[float] = None,
    parallelism: int = 1,
    mesh_delta: float = DEFAULT_MESH_DELTA,
    berman_horizon: Optional[float] = None,
    berman_tolerance: float = DEFAULT_BERMAN_TOLERANCE,
    embedding_tol: float = DEFAULT_EMBEDDING_TOLERANCE,
) -> GumbelReport:
    if not T_list:
        raise ConfigError("T list must not be empty")
    if any(b <= a for a, b in zip(T_list, T_list[1:])):
        raise ConfigError("T list must increase strictly")

    report = berman_check(spec.models, spec.kappa, spec.k, berman_horizon or max(T_list), berman_tolerance)
    if not report.satisfied:
        raise BermanConditionError(
            f"Berman condition not met (c={report.c:.4g}); refusing to run the Gumbel experiment",
            report,
        )

    H_used = resolve_H(spec, policy, H, parallelism=parallelism)
    rows = []
    for T in T_list:
        norming = analytics.gumbel_norming(T, spec, H_used)
        grid = mesh_for_threshold(spec, max(norming.b_T, 2.0), T, mesh_delta)
        maxima = simulate_suprema(spec, grid, reps, policy, f"gumbel-T{T!r}", parallelism, embedding_tol)
        rows.append(gumbel_report(maxima, norming, spec.kappa, grid.n))
        logger.debug("Gumbel T=%g: n=%d KS=%.4f", T, grid.n, rows[-1].ks)
    return GumbelReport(rows=rows, H_used=H_used, berman_c=report.c)


# Conditional excursions


class ExcursionRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    u: float
    t: float
    ks: float
    p_value: float
    excursion_mean: float
    excursion_stderr: float
    eta_mean: float
    analytic_mean: Optional[float] = Field(default=None, description="1 - t^alpha sum C_i / m, kappa > 1 only")
    origin_mean: float
    origin_stderr: float
    acceptance_rate: float


class ExcursionReport(BaseModel):
    model_config = ConfigDict(frozen=True)

    rows: List[ExcursionRow]


def analytic_eta_mean(spec: ModelSpec, t: float) -> Optional[float]:
    if spec.kappa <= 1:
        return None
    return 1.0 - t ** spec.alpha * float(np.sum(spec.C[: spec.m])) / spec.m


def experiment_excursion(
    spec: ModelSpec,
    u_list: Sequence[float],
    t_values: Sequence[float],
    reps: int,
    policy: RngPolicy,
    permutations: int = 199,
    parallelism: int = 1,
    quadrature_tol: float = analytics.DEFAULT_QUADRATURE_TOL,
) -> ExcursionReport:
    """Two-sample KS of w(u)(zeta(q t) - u) | zeta(0) > u against eta(t)"""
    t_values = [float(t) for t in t_values]
    if not t_values or any(t <= 0 for t in t_values) or len(set(t_values)) != len(t_values):
        raise ConfigError("t values must be a nonempty list of distinct positive times")
    if not u_list:
        raise ConfigError("u list must not be empty")

    def task(index: int, stream: RngStream) -> List[ExcursionRow]:
        u = u_list[index]
        sample = conditional_excursion(spec, u, t_values, reps, stream, quadrature_tol=quadrature_tol)
        origin_se = float(sample.origin.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0
        rows = []
        for t, excursion in zip(t_values, sample.samples):
            eta = sample_eta_marginal(spec, t, reps, stream)
            ks, p_value = analytics.two_sample_ks(excursion, eta, stream, permutations)
            rows.append(
                ExcursionRow(
                    u=u,
                    t=t,
                    ks=ks,
                    p_value=p_value,
                    excursion_mean=float(excursion.mean()),
                    excursion_stderr=float(excursion.std(ddof=1) / math.sqrt(reps)) if reps > 1 else 0.0,
                    eta_mean=float(eta.mean()),
                    analytic_mean=analytic_eta_mean(spec, t),
                    origin_mean=float(sample.origin.mean()),
                    origin_stderr=origin_se,
                    acceptance_rate=sample.acceptance_rate,
                )
            )
        return rows

    per_u = replicate(task, len(u_list), policy, "excursion", parallelism)
    return ExcursionReport(rows=[row for rows in per_u for row in rows])
