"""
Closed-form constants and asymptotics for chi-type process differences,
with independent numerical oracles.

Tail of zeta(0):      P(zeta(0) > u) ~ A u^beta exp(-u^(2/kappa) / 2)
Sup asymptotics:      P(sup_[0,T] zeta > u) ~ T H u^(2 tau/(alpha kappa)) P(zeta(0) > u)
Gumbel norming:       a_T (sup_[0,T] zeta - b_T) => exp(-e^-x)
"""

import logging
import math
import warnings
from typing import TYPE_CHECKING, Callable, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import integrate, stats
from scipy.special import gammaln

from errors import ConfigError, QuadratureError

if TYPE_CHECKING:
    from chi_process import ModelSpec

logger = logging.getLogger(__name__)

DEFAULT_QUADRATURE_TOL = 1e-9
EULER_GAMMA = float(np.euler_gamma)


class ScalingBundle(BaseModel):
    model_config = ConfigDict(frozen=True)

    tau: float = Field(ge=1, description="Exponent tau")
    q: float = Field(gt=0, description="Excursion time scale q_kappa(u)")
    w: float = Field(gt=0, description="Excursion value scale w_kappa(u)")


class TailEvaluation(BaseModel):
    model_config = ConfigDict(frozen=True)

    m: int
    k: int
    kappa: float
    u: float
    asymptotic: float = Field(ge=0)
    oracle: float = Field(ge=0, le=1)
    ratio: float
    literal_asymptotic: float = Field(ge=0, description="Three-branch display with Gamma(k/kappa)/Gamma(k/2) := 1 at k=0")


class SupProbAsymptotic(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float = Field(ge=0, le=1)
    raw_value: float = Field(ge=0)
    out_of_regime: bool = Field(description="Raw asymptotic exceeded 1 and was capped")


class GumbelNorming(BaseModel):
    model_config = ConfigDict(frozen=True)

    T: float
    a_T: float = Field(gt=0)
    b_T: float
    K0: float
    D0: float = Field(gt=0)
    log_D0: float
    H_used: float = Field(gt=0)
    D0_tail_consistent: float = Field(gt=0, description="(H A)^2 2^K0 from the tail prefactor A")
    D0_literal: float = Field(gt=0, description="Branch formula with the k=0 Gamma-ratio convention; equals D0 for k > 0")


class MomentEstimate(BaseModel):
    model_config = ConfigDict(frozen=True)

    value: float
    stderr: float = Field(ge=0)
    n: int


def _check_degrees(m: int, k: int, kappa: float):
    if m < 1 or k < 0:
        raise ConfigError(f"need m >= 1 and k >= 0, got m={m}, k={k}")
    if kappa <= 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")


def tau_exponent(kappa: float, k: Optional[int] = None) -> float:
    """tau = 2/kappa - 1 for kappa < 1 and 1 otherwise; k = 0 always uses 1"""
    if kappa < 1 and k != 0:
        return 2.0 / kappa - 1.0
    return 1.0


def scaling(kappa: float, alpha: float, u: float, k: Optional[int] = None) -> ScalingBundle:
    if kappa <= 0:
        raise ConfigError(f"kappa must be positive, got {kappa}")
    if not 0 < alpha <= 2:
        raise ConfigError(f"alpha must lie in (0, 2], got {alpha}")
    if u <= 1:
        raise ConfigError(f"scalings are tail objects and need u > 1, got {u}")
    tau = tau_exponent(kappa, k)
    return ScalingBundle(
        tau=tau,
        q=u ** (-2.0 * tau / (alpha * kappa)),
        w=u ** (2.0 / kappa - 1.0) / kappa,
    )


def tail_prefactor(m: int, k: int, kappa: float) -> Tuple[float, float]:
    """(A, beta) with P(zeta(0) > u) ~ A u^beta exp(-u^(2/kappa)/2)"""
    _check_degrees(m, k, kappa)
    if k == 0 or kappa > 2:
        log_a = (1 - m / 2) * math.log(2) - gammaln(m / 2)
        beta = (m - 2) / kappa
    elif kappa == 2:
        log_a = (1 - (m + k) / 2) * math.log(2) - gammaln(m / 2)
        beta = m / 2 - 1
    else:
        log_a = (
            (2 - (m + k) / 2) * math.log(2)
            + gammaln(k / kappa)
            + (k / kappa - 1) * math.log(kappa)
            - gammaln(k / 2)
            - gammaln(m / 2)
        )
        beta = (m - 2) / kappa + k / kappa - 2 * k / kappa ** 2
    return math.exp(log_a), beta


def _literal_display(m: int, k: int, kappa: float, u: float) -> float:
    """Three-branch tail display with Gamma(k/kappa)/Gamma(k/2) := 1 at k = 0"""
    w = u ** (2.0 / kappa - 1.0) / kappa
    log_front = (2 - (m + k) / 2) * math.log(2) - 2 * math.log(kappa) - gammaln(m / 2)
    core = math.exp(log_front) * u ** (m / kappa - 1) / w * math.exp(-0.5 * u ** (2.0 / kappa))
    if kappa < 2:
        ratio = 1.0 if k == 0 else math.exp(gammaln(k / kappa) - gammaln(k / 2))
        return core * ratio / w ** (k / kappa)
    if kappa == 2:
        return core
    return core * kappa * 2 ** (k / 2 - 1)


def tail_asymptotic(m: int, k: int, kappa: float, u: float) -> float:
    """
    Asymptotic tail of zeta(0).

    For k = 0 zeta(0) = |X1|^kappa exactly, so the exact chi-power tail is
    returned for every kappa.
    """
    _check_degrees(m, k, kappa)
    if u < 0:
        raise ConfigError(f"tail asymptotics need u >= 0, got {u}")
    try:
        if k == 0:
            prefactor, beta = tail_prefactor(m, 0, kappa)
            value = prefactor * u ** beta * math.exp(-0.5 * u ** (2.0 / kappa))
        else:
            value = _literal_display(m, k, kappa, u)
    except ZeroDivisionError:
        value = math.inf
    if not math.isfinite(value):
        raise ConfigError(f"tail asymptotic is not finite at u={u} for (m={m}, k={k}, kappa={kappa})")
    return value


def tail_oracle(m: int, k: int, kappa: float, u: float, quadrature_tol: float = DEFAULT_QUADRATURE_TOL) -> float:
    """
    P(zeta(0) > u) by adaptive quadrature over the radius s of X2:

        P = int_0^inf S_m((u + s^kappa)^(1/kappa)) f_k(s) ds

    with S_m the chi survival function (m d.o.f.) and f_k the chi density.
    """
    _check_degrees(m, k, kappa)
    if quadrature_tol <= 0:
        raise ConfigError("quadrature tolerance must be positive")
    survival = stats.chi(m).sf
    if k == 0:
        return float(survival(u ** (1.0 / kappa))) if u > 0 else 1.0

    radius = stats.chi(k)
    start = (-u) ** (1.0 / kappa) if u < 0 else 0.0
    head = float(radius.cdf(start)) if u < 0 else 0.0

    def integrand(s: float) -> float:
        return survival(max(u + s ** kappa, 0.0) ** (1.0 / kappa)) * radius.pdf(s)

    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            value, abserr = integrate.quad(integrand, start, np.inf, epsabs=0.0, epsrel=quadrature_tol, limit=500)
        except integrate.IntegrationWarning as exc:
            raise QuadratureError(
                f"tail quadrature did not converge for (m={m}, k={k}, kappa={kappa}, u={u}): {exc}",
                u=u,
                tolerance=quadrature_tol,
            ) from exc
    if value > 0 and abserr > quadrature_tol * value:
        raise QuadratureError(
            f"tail quadrature error {abserr:.3g} exceeds relative tolerance {quadrature_tol:g}",
            u=u,
            value=value,
            abserr=abserr,
        )
    return min(head + value, 1.0)


def evaluate_tail(m: int, k: int, kappa: float, u: float, quadrature_tol: float = DEFAULT_QUADRATURE_TOL) -> TailEvaluation:
    asymptotic = tail_asymptotic(m, k, kappa, u)
    oracle = tail_oracle(m, k, kappa, u, quadrature_tol)
    return TailEvaluation(
        m=m,
        k=k,
        kappa=kappa,
        u=u,
        asymptotic=asymptotic,
        oracle=oracle,
        ratio=asymptotic / oracle if oracle > 0 else math.nan,
        literal_asymptotic=_literal_display(m, k, kappa, u) if u > 0 else asymptotic,
    )


def sup_prob_asymptotic(T: float, u: float, H: float, spec: "ModelSpec") -> SupProbAsymptotic:
    if T <= 0 or H <= 0:
        raise ConfigError("T and H must be positive")
    scales = scaling(spec.kappa, spec.alpha, u, k=spec.k)
    raw = T * H * u ** (2 * scales.tau / (spec.alpha * spec.kappa)) * tail_asymptotic(spec.m, spec.k, spec.kappa, u)
    out_of_regime = raw > 1.0
    if out_of_regime:
        logger.warning("sup-probability asymptotic %.3g > 1 at u=%.4g, T=%.4g: outside the asymptotic regime", raw, u, T)
    return SupProbAsymptotic(value=min(raw, 1.0), raw_value=raw, out_of_regime=out_of_regime)


def gumbel_K0(spec: "ModelSpec") -> float:
    tau = tau_exponent(spec.kappa, spec.k)
    K0 = spec.m - 2 + 2 * tau / spec.alpha
    if spec.kappa < 2:
        K0 += spec.k * (1 - 2 / spec.kappa)
    return K0


def _branch_log_D0(spec: "ModelSpec", H: float) -> float:
    """Four-branch log D0; at k = 0 every k-Gamma ratio is taken as 1"""
    m, k, kappa, alpha = spec.m, spec.k, spec.kappa, spec.alpha
    log_front = 2 * (math.log(H) - gammaln(m / 2))
    if kappa >= 2:
        exponent = 2 / alpha - 2 if kappa == 2 else 2 / alpha
        return log_front + exponent * math.log(2)

    gamma_ratio = 2 * (gammaln(k / kappa) - gammaln(k / 2)) if k else 0.0
    gamma_power = gamma_ratio + 2 * (k / kappa - 1) * math.log(kappa)
    if kappa <= 1:
        exponent = (2 / alpha) * (2 / kappa - 1) + 2 * (1 - k / kappa)
    else:
        exponent = 2 / alpha + 2 * (1 - k / kappa)
    return log_front + exponent * math.log(2) + gamma_power


def _log_D0(spec: "ModelSpec", H: float) -> float:
    if spec.k == 0:
        return 2 * (math.log(H) - gammaln(spec.m / 2)) + (2 / spec.alpha) * math.log(2)
    return _branch_log_D0(spec, H)


def gumbel_norming(T: float, spec: "ModelSpec", H: float) -> GumbelNorming:
    if T <= math.exp(math.e):
        raise ConfigError(f"Gumbel norming needs T > e^e (ln ln T > 0), got {T}")
    if H <= 0:
        raise ConfigError("H must be positive")
    kappa = spec.kappa
    two_log_t = 2 * math.log(T)
    K0 = gumbel_K0(spec)
    log_D0 = _log_D0(spec, H)
    a_T = two_log_t ** (1 - kappa / 2) / kappa
    b_T = two_log_t ** (kappa / 2) + kappa / (2 * two_log_t ** (1 - kappa / 2)) * (
        K0 * math.log(math.log(T)) + log_D0
    )
    prefactor, _ = tail_prefactor(spec.m, spec.k, kappa)
    return GumbelNorming(
        T=T,
        a_T=a_T,
        b_T=b_T,
        K0=K0,
        D0=float(np.exp(log_D0)),
        log_D0=log_D0,
        H_used=H,
        D0_tail_consistent=(H * prefactor) ** 2 * 2 ** K0,
        D0_literal=math.exp(_branch_log_D0(spec, H)),
    )


def gumbel_cdf(x):
    return stats.gumbel_r.cdf(x)


def ks_distance(samples: Sequence[float], cdf: Callable = gumbel_cdf) -> float:
    """Two-sided Kolmogorov-Smirnov distance of the empirical CDF from `cdf`"""
    samples = np.asarray(samples, dtype=float)
    if samples.size == 0:
        raise ConfigError("KS distance needs at least one sample")
    return float(stats.kstest(samples, cdf).statistic)


def two_sample_ks(x: Sequence[float], y: Sequence[float], stream: np.random.Generator, permutations: int = 199):
    """Two-sample KS distance and its permutation p-value"""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ConfigError("two-sample KS needs nonempty samples")
    observed = float(stats.ks_2samp(x, y).statistic)
    pooled = np.concatenate([x, y])
    exceed = 0
    for _ in range(permutations):
        shuffled = stream.permutation(pooled)
        exceed += stats.ks_2samp(shuffled[: x.size], shuffled[x.size :]).statistic >= observed
    return observed, (1 + exceed) / (1 + permutations)


def seleznjev_moment(maxima: Sequence[float], T: float, kappa: float, p: float) -> MomentEstimate:
    """Sample mean of (|M| / (2 ln T)^(kappa/2))^p with its standard error"""
    if T <= 1 or p <= 0:
        raise ConfigError("Seleznjev moment needs T > 1 and p > 0")
    maxima = np.asarray(maxima, dtype=float)
    if maxima.size == 0:
        raise ConfigError("Seleznjev moment needs at least one maximum")
    values = (np.abs(maxima) / (2 * math.log(T)) ** (kappa / 2)) ** p
    stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return MomentEstimate(value=float(values.mean()), stderr=stderr, n=int(values.size))


def piterbarg_bound(T: float, u: float, spec: "ModelSpec", K: float, beta: float) -> float:
    """K T u^beta exp(-u^(2/kappa)/2), a ceiling for the sup-probability"""
    if u <= 1:
        raise ConfigError(f"Piterbarg bound needs u > 1, got {u}")
    if K <= 0 or T <= 0:
        raise ConfigError("K and T must be positive")
    return K * T * u ** beta * math.exp(-0.5 * u ** (2.0 / spec.kappa))
