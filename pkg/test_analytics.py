import math

import numpy as np
import pytest
from scipy import integrate, special, stats

import analytics
from chi_process import ModelSpec
from covariance import CovarianceModel
from errors import ConfigError


def spec(m=1, k=0, kappa=2.0, alpha=1.0):
    return ModelSpec(m=m, k=k, kappa=kappa, alpha=alpha, models=[CovarianceModel(C=1.0, alpha=alpha)])


@pytest.mark.parametrize("u", [0.0, 2.0, 4.0, 8.0])
def test_laplace_case_is_exact(u):
    exact = 0.5 * math.exp(-u / 2)
    assert analytics.tail_asymptotic(2, 2, 2.0, u) == pytest.approx(exact, rel=1e-9)
    assert analytics.tail_oracle(2, 2, 2.0, u) == pytest.approx(exact, rel=1e-9)


@pytest.mark.parametrize("u", [0.0, 2.0, 4.0, 8.0])
def test_chi_square_two_is_exact(u):
    exact = math.exp(-u / 2)
    assert analytics.tail_asymptotic(2, 0, 2.0, u) == pytest.approx(exact, rel=1e-12)
    assert analytics.tail_oracle(2, 0, 2.0, u) == pytest.approx(exact, rel=1e-12)


def test_product_normal_oracle():
    # X1^2 - X2^2 has the law of 2AB with A, B independent standard normals
    reference, _ = integrate.quad(lambda z: special.k0(z) / math.pi, 2.5, np.inf)
    assert analytics.tail_oracle(1, 1, 2.0, 5.0) == pytest.approx(reference, rel=1e-7)


def test_oracle_handles_negative_levels():
    assert analytics.tail_oracle(1, 0, 2.0, -1.0) == 1.0
    value = analytics.tail_oracle(1, 1, 1.0, -0.5)
    assert 0.5 < value < 1.0
    # |X1| - |X2| is symmetric
    assert value == pytest.approx(1 - analytics.tail_oracle(1, 1, 1.0, 0.5), rel=1e-7)


@pytest.mark.parametrize(
    "kappa, levels",
    [(1.0, (3.0, 4.0, 5.0, 6.0, 7.0)), (2.0, (4.0, 8.0, 12.0, 16.0, 20.0))],
)
def test_tail_ratio_converges(kappa, levels):
    gaps = [abs(analytics.evaluate_tail(1, 1, kappa, u).ratio - 1) for u in levels]
    assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.15


def test_large_kappa_matches_single_block():
    for u in (10.0, 50.0):
        assert analytics.tail_asymptotic(1, 2, 4.0, u) == pytest.approx(analytics.tail_asymptotic(1, 0, 4.0, u), rel=1e-12)


def test_literal_display_keeps_k_zero_convention():
    evaluation = analytics.evaluate_tail(2, 0, 1.0, 3.0)
    assert evaluation.literal_asymptotic == pytest.approx(2 * evaluation.asymptotic, rel=1e-12)


def test_tail_asymptotic_checks():
    with pytest.raises(ConfigError):
        analytics.tail_asymptotic(1, 1, 2.0, -1.0)
    with pytest.raises(ConfigError):
        analytics.tail_asymptotic(0, 1, 2.0, 1.0)
    with pytest.raises(ConfigError):
        analytics.tail_asymptotic(1, 1, 1.0, 0.0)


def test_scaling_bundle():
    scales = analytics.scaling(2.0, 1.0, 4.0)
    assert scales.tau == 1.0
    assert scales.q == pytest.approx(0.25)
    assert scales.w == pytest.approx(0.5)
    assert analytics.scaling(0.5, 1.0, 4.0, k=1).tau == pytest.approx(3.0)
    assert analytics.scaling(0.5, 1.0, 4.0, k=0).tau == 1.0
    with pytest.raises(ConfigError):
        analytics.scaling(2.0, 1.0, 1.0)


def test_norming_constants_for_classical_case():
    assert analytics.gumbel_K0(spec(alpha=2.0)) == 0.0
    assert analytics.gumbel_K0(spec(alpha=1.0)) == 1.0
    assert analytics.gumbel_K0(spec(m=1, k=2, kappa=1.0, alpha=1.0)) == pytest.approx(-1.0)

    H = 1 / math.sqrt(math.pi)
    norming = analytics.gumbel_norming(1000.0, spec(alpha=2.0), H)
    assert norming.a_T == pytest.approx(0.5)
    assert norming.D0 == pytest.approx(2 / math.pi ** 2)
    two_log_t = 2 * math.log(1000.0)
    assert norming.b_T == pytest.approx(two_log_t + math.log(2 / math.pi ** 2))


def test_norming_records_tail_consistent_constant():
    norming = analytics.gumbel_norming(100.0, spec(m=1, k=1, kappa=2.0, alpha=1.0), 1.0)
    prefactor, _ = analytics.tail_prefactor(1, 1, 2.0)
    assert norming.D0_tail_consistent == pytest.approx(prefactor ** 2 * 2 ** norming.K0)
    with pytest.raises(ConfigError):
        analytics.gumbel_norming(10.0, spec(), 1.0)


def test_sup_asymptotic_caps_at_one():
    capped = analytics.sup_prob_asymptotic(1e6, 2.0, 1.0, spec())
    assert capped.value == 1.0
    assert capped.out_of_regime
    regular = analytics.sup_prob_asymptotic(1.0, 30.0, 1.0, spec())
    assert not regular.out_of_regime
    assert regular.value == pytest.approx(30.0 * analytics.tail_asymptotic(1, 0, 2.0, 30.0))


def test_gumbel_samples_pass_ks():
    samples = stats.gumbel_r.rvs(size=2000, random_state=np.random.default_rng(1))
    assert analytics.ks_distance(samples) < 1.63 / math.sqrt(2000)
    assert analytics.ks_distance(samples + 1.0) > 0.2


def test_two_sample_ks_permutation_p_values():
    rng = np.random.Generator(np.random.Philox(9))
    x, y = rng.standard_normal(200), rng.standard_normal(200) + 1.0
    distance, p_value = analytics.two_sample_ks(x, y, rng, permutations=99)
    assert distance > 0.2
    assert p_value == pytest.approx(0.01)
    _, same_p = analytics.two_sample_ks(x, x.copy(), rng, permutations=99)
    assert same_p == 1.0


def test_seleznjev_moment_of_constant_maxima():
    T = 500.0
    level = (2 * math.log(T)) ** 1.0
    estimate = analytics.seleznjev_moment([level] * 10, T, 2.0, 2.0)
    assert estimate.value == pytest.approx(1.0)
    assert estimate.stderr == pytest.approx(0.0, abs=1e-12)
    assert estimate.n == 10


def test_piterbarg_bound_formula():
    value = analytics.piterbarg_bound(5.0, 4.0, spec(), K=10.0, beta=2.0)
    assert value == pytest.approx(10 * 5 * 16 * math.exp(-2.0))
    with pytest.raises(ConfigError):
        analytics.piterbarg_bound(5.0, 1.0, spec(), K=10.0, beta=2.0)


@pytest.mark.parametrize("kappa", [0.5, 1.0, 2.0, 3.0])
@pytest.mark.parametrize("alpha", [0.5, 2.0])
@pytest.mark.parametrize("u", [2.0, 10.0])
def test_scaling_identities(kappa, alpha, u):
    scales = analytics.scaling(kappa, alpha, u)
    assert scales.w * kappa * u ** (1 - 2 / kappa) == pytest.approx(1.0, rel=1e-12)
    assert scales.q ** (alpha * kappa) * u ** (2 * scales.tau) == pytest.approx(1.0, rel=1e-12)


@pytest.mark.parametrize("kappa", [1.0, 2.0])
def test_location_approaches_leading_term(kappa):
    gaps = []
    for T in (1e3, 1e6, 1e9, 1e12):
        norming = analytics.gumbel_norming(T, spec(kappa=kappa), 1.0)
        gaps.append(abs(norming.b_T / (2 * math.log(T)) ** (kappa / 2) - 1))
    assert all(later < earlier for earlier, later in zip(gaps, gaps[1:]))


@pytest.mark.parametrize("u", [3.0, 5.0, 7.0])
def test_classical_absolute_sup_rate(u):
    # m=1, k=0, kappa=1, alpha=2 with H = 1/sqrt(pi): T sqrt(2)/pi exp(-u^2/2)
    result = analytics.sup_prob_asymptotic(2.0, u, 1 / math.sqrt(math.pi), spec(kappa=1.0, alpha=2.0))
    assert result.value == pytest.approx(2.0 * math.sqrt(2) / math.pi * math.exp(-u * u / 2), rel=1e-12)
    doubled = analytics.sup_prob_asymptotic(4.0, u, 1 / math.sqrt(math.pi), spec(kappa=1.0, alpha=2.0))
    assert doubled.value == pytest.approx(2 * result.value, rel=1e-12)


def test_ks_distance_ignores_increasing_maps():
    samples = stats.gumbel_r.rvs(size=500, loc=0.3, random_state=np.random.default_rng(2))
    base = analytics.ks_distance(samples)
    shifted = analytics.ks_distance(2.5 * samples - 1.0, lambda y: analytics.gumbel_cdf((y + 1.0) / 2.5))
    assert shifted == pytest.approx(base, abs=1e-9)
    warped = analytics.ks_distance(np.exp(samples), lambda y: analytics.gumbel_cdf(np.log(y)))
    assert warped == pytest.approx(base, abs=1e-9)


@pytest.mark.parametrize("kappa, beta", [(2.0, 2.0), (1.0, 3.0), (0.5, 5.0)])
def test_piterbarg_bound_turns_down_after_peak(kappa, beta):
    model = spec(kappa=kappa)
    peak = (kappa * beta) ** (kappa / 2)
    beyond = [analytics.piterbarg_bound(5.0, u, model, 10.0, beta) for u in np.linspace(peak + 0.01, peak + 3.0, 40)]
    assert all(later < earlier for earlier, later in zip(beyond, beyond[1:]))
    assert analytics.piterbarg_bound(10.0, peak + 1, model, 10.0, beta) == pytest.approx(
        2 * analytics.piterbarg_bound(5.0, peak + 1, model, 10.0, beta)
    )


def test_literal_norming_constant_at_k_zero():
    H = 1 / math.sqrt(math.pi)
    norming = analytics.gumbel_norming(1000.0, spec(kappa=1.0, alpha=2.0), H)
    assert norming.D0 == pytest.approx(2 / math.pi ** 2)
    assert norming.D0_literal == pytest.approx(8 / math.pi ** 2)


@pytest.mark.parametrize("kappa", [0.5, 1.5, 2.0, 3.0])
def test_literal_norming_constant_agrees_for_positive_k(kappa):
    norming = analytics.gumbel_norming(500.0, spec(m=2, k=1, kappa=kappa, alpha=1.5), 0.7)
    assert norming.D0_literal == pytest.approx(norming.D0, rel=1e-12)
