import numpy as np
import pytest

from threshreg.errors import DimensionMismatch, RankDeficient
from threshreg.estimation import GridFitter, concentrated_ssr, fit_clse, fit_lse, ols_solve
from threshreg.model import Dataset, GridSpec, ThetaKink, kink_mean, threshold_grid

from conftest import make_dataset
from oracles import brute_clse, brute_lse


def test_ols_mean_fit():
    fit = ols_solve(np.full(5, 3.5), np.ones((5, 1)))
    assert fit.coefficients[0] == pytest.approx(3.5)
    assert fit.ssr == pytest.approx(0.0, abs=1e-28)
    assert fit.rank_ok


def test_ols_matches_normal_equations(rng):
    Z = rng.standard_normal((10, 3))
    y = rng.standard_normal(10)
    fit = ols_solve(y, Z)
    np.testing.assert_allclose(fit.coefficients, np.linalg.solve(Z.T @ Z, Z.T @ y), rtol=1e-12)
    assert np.max(np.abs(Z.T @ fit.residuals)) / 10 < 1e-12
    assert fit.ssr == pytest.approx(np.mean(fit.residuals**2))


def test_ols_rank_deficient_min_norm():
    Z = np.column_stack([np.ones(6), np.ones(6)])
    fit = ols_solve(np.full(6, 2.0), Z)
    assert not fit.rank_ok
    np.testing.assert_allclose(fit.coefficients, [1.0, 1.0])


def test_ols_shape_errors():
    with pytest.raises(DimensionMismatch):
        ols_solve(np.ones(4), np.ones((5, 2)))


SIX = Dataset.from_columns([1.0, 1.2, 0.9, 3.1, 2.8, 3.3], [1.0, 2.0, 3.0, 4.0, 5.0, 6.0])


def test_six_point_lse_against_oracle():
    grid = GridSpec(explicit_points=(2.5, 3.5, 4.5))
    fit = fit_lse(SIX, grid)
    g, coef, ssr, prof = brute_lse(SIX.y, SIX.X, SIX.q, threshold_grid(SIX, grid))
    assert fit.theta.gamma == g
    np.testing.assert_allclose(fit.theta.alpha, coef, rtol=1e-10, atol=1e-12)
    assert fit.ssr_hat == pytest.approx(ssr, rel=1e-12)
    np.testing.assert_allclose(fit.profile[:, 1], prof, rtol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_lse_and_clse_match_brute_force(seed):
    rng = np.random.default_rng(seed)
    d = make_dataset(rng, n=40, k=3, jump=1.5)
    grid = threshold_grid(d)
    lse, clse = fit_lse(d), fit_clse(d)
    g, coef, ssr, prof = brute_lse(d.y, d.X, d.q, grid)
    assert lse.theta.gamma == g
    np.testing.assert_allclose(lse.theta.alpha, coef, rtol=1e-10)
    np.testing.assert_allclose(lse.ssr_profile, prof, rtol=1e-10)
    g2, coef2, ssr2 = brute_clse(d.y, d.X, d.q, grid)
    assert clse.theta.gamma == g2
    np.testing.assert_allclose(np.append(clse.theta.beta, clse.theta.delta3), coef2, rtol=1e-10)
    assert clse.ssr_tilde == pytest.approx(ssr2, rel=1e-12)


def test_fit_invariants(jump_data):
    lse, clse = fit_lse(jump_data), fit_clse(jump_data)
    assert lse.ssr_hat == lse.ssr_profile.min()
    assert clse.ssr_tilde >= lse.ssr_hat
    Z = np.hstack([jump_data.X, jump_data.X * (jump_data.q > lse.theta.gamma)[:, None]])
    np.testing.assert_allclose(lse.residuals, jump_data.y - Z @ lse.theta.alpha, atol=1e-12)
    np.testing.assert_allclose(lse.fitted + lse.residuals, jump_data.y, atol=1e-12)
    np.testing.assert_allclose(clse.fitted, kink_mean(clse.theta, jump_data.X), atol=1e-12)


def test_ties_break_toward_smallest_gamma():
    # two candidates between the same pair of q-values give identical partitions
    grid = GridSpec(explicit_points=(3.2, 3.4, 3.6))
    fit = fit_lse(SIX, grid)
    assert fit.theta.gamma == 3.2
    assert fit.ssr_profile[0] == fit.ssr_profile[1] == fit.ssr_profile[2]


def test_zero_noise_recovery():
    q = np.linspace(-2, 2, 41)
    truth = ThetaKink([1.0, 0.5], 2.0, 0.0)
    X = np.column_stack([np.ones_like(q), q])
    d = Dataset.from_columns(kink_mean(truth, X), q)
    grid = GridSpec(explicit_points=tuple(np.linspace(-1, 1, 21)))
    clse = fit_clse(d, grid)
    assert clse.theta.gamma == pytest.approx(0.0, abs=1e-15)
    np.testing.assert_allclose(clse.theta.beta, [1.0, 0.5], atol=1e-10)
    assert clse.theta.delta3 == pytest.approx(2.0, abs=1e-10)
    lse = fit_lse(d, grid)
    assert lse.ssr_hat == pytest.approx(0.0, abs=1e-20)
    np.testing.assert_allclose(lse.theta.jump_at_threshold, 0.0, atol=1e-8)


def test_rank_deficient_winner_raises():
    # the extra regressor is zero on one side of every candidate, so the upper block is singular
    q = np.arange(12.0)
    x = np.where(q < 6, 1.0, 0.0)
    y = np.arange(12.0) ** 2
    d = Dataset.from_columns(y, q, x)
    with pytest.raises(RankDeficient):
        fit_lse(d, GridSpec(explicit_points=(6.5,)))


def test_batch_matches_single_fits(rng, jump_data):
    fitter = GridFitter.for_dataset(jump_data)
    Y = jump_data.y[:, None] + rng.standard_normal((jump_data.n, 4))
    batch = fitter.fit_lse_batch(Y)
    for b in range(4):
        one = fitter.fit_lse(Y[:, b])
        assert batch.gamma[b] == one.theta.gamma
        np.testing.assert_allclose(batch.alpha[b], one.theta.alpha, rtol=1e-9, atol=1e-12)
        np.testing.assert_allclose(batch.residuals[:, b], one.residuals, atol=1e-10)
        assert batch.ssr_hat[b] == pytest.approx(one.ssr_hat, rel=1e-9)


def test_concentrated_ssr_off_grid(jump_data):
    fit = fit_lse(jump_data)
    g = fit.grid[3]
    assert float(concentrated_ssr(jump_data.X, g, jump_data.y)) == pytest.approx(fit.ssr_profile[3], rel=1e-12)
