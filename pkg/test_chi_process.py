import numpy as np
import pytest
from pydantic import ValidationError
from scipy import integrate

from chi_process import (
    ModelSpec,
    build_zeta,
    conditional_excursion,
    mesh_for_threshold,
    path_supremum,
    sample_two_point,
    sojourn_lengths,
    sojourn_time,
)
from covariance import CovarianceModel
from errors import ConfigError, DegenerateModelError, InfeasibleThresholdError
from gaussian_sim import Grid, PathBundle, build_embedding, sample_bundle


def stream(seed=5):
    return np.random.Generator(np.random.Philox(seed))


def spec(m=1, k=0, kappa=2.0, alpha=1.0, C=1.0):
    return ModelSpec(m=m, k=k, kappa=kappa, alpha=alpha, models=[CovarianceModel(C=C, alpha=alpha)])


def test_single_model_is_broadcast():
    broadcast = spec(m=2, k=3)
    assert len(broadcast.models) == 5
    assert np.allclose(broadcast.C, 1.0)


def test_spec_rejects_mismatches():
    model = CovarianceModel(C=1.0, alpha=1.0)
    with pytest.raises(ValidationError):
        ModelSpec(m=1, k=1, kappa=2.0, alpha=1.0, models=[model, model, model])
    with pytest.raises(ValidationError):
        ModelSpec(m=1, k=0, kappa=2.0, alpha=1.5, models=[model])
    table = CovarianceModel(family="tabulated", lags=(0.0, 1.0), values=(1.0, 0.5))
    with pytest.raises(ValidationError):
        ModelSpec(m=1, k=0, kappa=2.0, alpha=1.0, models=[table])


def test_zeta_of_constant_components():
    grid = Grid(t_max=1.0, n=4)
    bundle = PathBundle(grid=grid, components=np.ones((3, 4)))
    path = build_zeta(bundle, spec(m=2, k=1))
    assert np.allclose(path.zeta, 1.0)
    assert path_supremum(path) == pytest.approx(1.0)
    with pytest.raises(ConfigError):
        build_zeta(bundle, spec(m=1, k=0))


def test_sojourn_interpolates_crossings():
    assert sojourn_lengths(np.array([0.0, 2.0, 2.0, 0.0]), 1.0, 1.0) == pytest.approx(2.0)
    assert sojourn_lengths(np.array([3.0, 3.0, 3.0]), 0.5, 1.0) == pytest.approx(1.0)
    assert sojourn_lengths(np.array([0.0, 0.5, 0.0]), 1.0, 1.0) == 0.0
    batch = sojourn_lengths(np.array([[0.0, 2.0], [2.0, 2.0]]), 1.0, 1.0)
    assert np.allclose(batch, [0.5, 1.0])


def test_sojourn_time_record():
    grid = Grid(t_max=3.0, n=4)
    path = build_zeta(PathBundle(grid=grid, components=np.full((1, 4), 2.0)), spec())
    sample = sojourn_time(path, 1.0)
    assert sample.sojourn == pytest.approx(3.0)
    assert sample.t == 3.0


def test_mesh_follows_threshold_scale():
    grid = mesh_for_threshold(spec(), u=4.0, t_max=1.0, delta=0.1)
    assert grid.h <= 0.025 + 1e-12
    finer = mesh_for_threshold(spec(), u=16.0, t_max=1.0, delta=0.1)
    assert finer.n > grid.n


def test_two_point_sampler_moments():
    zeta0, zeta1 = sample_two_point(spec(), 0.1, 50000, stream())
    assert zeta0.mean() == pytest.approx(1.0, abs=0.03)
    assert zeta1.mean() == pytest.approx(1.0, abs=0.03)
    # Cov(X0^2, X1^2) = 2 r^2 for a unit Gaussian pair
    assert np.cov(zeta0, zeta1)[0, 1] == pytest.approx(2 * np.exp(-0.2), abs=0.1)


def test_two_point_rejects_perfect_correlation():
    table = CovarianceModel(family="tabulated", lags=(0.0, 1.0, 2.0), values=(1.0, 1.0, 0.5), C=1.0)
    degenerate = ModelSpec(m=1, k=0, kappa=2.0, alpha=1.0, models=[table])
    with pytest.raises(DegenerateModelError):
        sample_two_point(degenerate, 1.0, 10, stream())


def test_conditional_excursion_shapes_and_rate():
    sample = conditional_excursion(spec(), u=4.0, t_values=[0.1, 0.5], count=2000, stream=stream())
    assert sample.samples.shape == (2, 2000)
    assert sample.origin.shape == (2000,)
    assert np.all(sample.origin > 0)
    # P(chi^2_1 > 4) = 0.0455
    assert sample.acceptance_rate == pytest.approx(0.0455, abs=0.005)
    assert sample.samples[0].mean() > sample.samples[1].mean()


def test_conditional_excursion_rejects_deep_threshold():
    with pytest.raises(InfeasibleThresholdError):
        conditional_excursion(spec(), u=40.0, t_values=[0.1], count=10, stream=stream())


def test_conditional_excursion_argument_checks():
    with pytest.raises(ConfigError):
        conditional_excursion(spec(), u=4.0, t_values=[], count=10, stream=stream())
    with pytest.raises(ConfigError):
        conditional_excursion(spec(), u=4.0, t_values=[0.0], count=10, stream=stream())


def random_path(m=2, k=1, kappa=1.5, seed=21):
    grid = Grid(t_max=4.0, n=201)
    model_spec = spec(m=m, k=k, kappa=kappa)
    embedding = build_embedding(model_spec.models[0], grid)
    return build_zeta(sample_bundle([embedding] * (m + k), stream(seed)), model_spec), kappa


def test_zeta_identity_and_domination():
    path, kappa = random_path()
    assert np.allclose(path.zeta, path.norms1 ** kappa - path.norms2 ** kappa)
    assert np.all(path.zeta <= path.norms1 ** kappa)
    assert path_supremum(path) <= np.max(path.norms1 ** kappa)
    assert np.all(path_supremum(path) >= path.zeta)


def test_sojourn_time_nonincreasing_in_level():
    path, _ = random_path(seed=22)
    levels = np.linspace(path.zeta.min() - 0.1, path.zeta.max() + 0.1, 60)
    times = [sojourn_time(path, u).sojourn for u in levels]
    assert times[0] == pytest.approx(4.0)
    assert times[-1] == 0.0
    assert all(later <= earlier + 1e-12 for earlier, later in zip(times, times[1:]))


@pytest.mark.parametrize("n", [10, 11])
def test_linear_ramp_sojourn(n):
    ramp = np.linspace(0.0, 1.0, n)
    path = build_zeta(PathBundle(grid=Grid(t_max=1.0, n=n), components=np.sqrt(ramp)[None, :]), spec())
    assert sojourn_time(path, 0.5).sojourn == pytest.approx(0.5, abs=1e-12)


def test_two_point_uncorrelated_lag_is_independent():
    table = CovarianceModel(family="tabulated", lags=(0.0, 1.0, 2.0), values=(1.0, 0.5, 0.0), C=1.0)
    model_spec = ModelSpec(m=2, k=1, kappa=2.0, alpha=1.0, models=[table])
    count = 20000
    zeta0, zeta1 = sample_two_point(model_spec, 2.0, count, stream(4))
    assert abs(np.corrcoef(zeta0, zeta1)[0, 1]) < 4 / np.sqrt(count)


def folded_normal_correlation(r):
    """corr(|X|, |Y|) for a standard bivariate normal pair, by quadrature over one quadrant"""

    def quadrant(rho):
        density = lambda y, x: x * y * np.exp(-(x * x - 2 * rho * x * y + y * y) / (2 * (1 - rho * rho))) / (
            2 * np.pi * np.sqrt(1 - rho * rho)
        )
        return integrate.dblquad(density, 0, np.inf, 0, np.inf)[0]

    moment = 2 * (quadrant(r) + quadrant(-r))
    return (moment - 2 / np.pi) / (1 - 2 / np.pi)


def test_two_point_matches_folded_normal_oracle():
    lag = 0.5
    zeta0, zeta1 = sample_two_point(spec(kappa=1.0), lag, 50000, stream(6))
    expected = folded_normal_correlation(np.exp(-lag))
    assert np.corrcoef(zeta0, zeta1)[0, 1] == pytest.approx(expected, abs=0.02)


def test_conditional_excursion_fails_fast_over_budget():
    draws = stream(9)
    # P(chi^2_1 > 4) = 0.0455, so 1000 acceptances need about 22000 draws
    with pytest.raises(InfeasibleThresholdError, match="budget"):
        conditional_excursion(spec(), u=4.0, t_values=[0.1], count=1000, stream=draws, max_draws=10_000)
    assert draws.standard_normal() == stream(9).standard_normal()
