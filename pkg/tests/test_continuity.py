import numpy as np
import pytest

from threshreg.continuity import continuity_statistics, qlr_tilde_statistic, qn_statistic
from threshreg.estimation import fit_clse, fit_lse
from threshreg.inference import qlr_curve, scale_factor
from threshreg.model import Dataset, GridSpec, ThetaKink, kink_mean

from oracles import brute_clse, brute_lse


def _kink_sample(n=200, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    q = rng.uniform(-2, 2, n)
    X = np.column_stack([np.ones(n), q])
    y = kink_mean(ThetaKink([1.0, 0.5], 1.5, 0.2), X) + noise * rng.standard_normal(n)
    return Dataset.from_columns(y, q)


def test_qn_matches_direct_formula(jump_data):
    st = qn_statistic(jump_data)
    lse, clse = fit_lse(jump_data), fit_clse(jump_data)
    expect = jump_data.n * (clse.ssr_tilde - lse.ssr_hat) / lse.ssr_hat
    assert st.q_n == pytest.approx(expect, rel=1e-12)
    assert st.qlr_tilde is None
    assert st.q_n >= 0


def test_qn_matches_brute_force_oracle(jump_data):
    st = qn_statistic(jump_data)
    grid = st.lse.grid
    s_hat = brute_lse(jump_data.y, jump_data.X, jump_data.q, grid)[2]
    s_tilde = brute_clse(jump_data.y, jump_data.X, jump_data.q, grid)[2]
    assert st.q_n == pytest.approx(jump_data.n * (s_tilde - s_hat) / s_hat, rel=1e-8)


def test_qlr_tilde_is_scaled_curve_at_gamma_tilde(jump_data):
    st = qlr_tilde_statistic(jump_data)
    c = qlr_curve(jump_data, st.lse)
    xi = scale_factor(jump_data, st.lse)
    j = int(np.flatnonzero(c.grid == st.gamma_tilde)[0])
    assert st.qlr_tilde == pytest.approx(c.values[j] / xi.xi_hat, rel=1e-12)
    assert st.snap_distance == 0.0


def test_near_exact_kink_gives_small_qn():
    # tiny noise keeps S_hat positive; the true kink is a grid point
    d = _kink_sample(noise=1e-6)
    grid = GridSpec(explicit_points=tuple(np.round(np.linspace(-1, 1, 21), 10)))
    st = continuity_statistics(d, grid)
    assert st.gamma_tilde == pytest.approx(0.2, abs=1e-12)
    assert st.q_n < 20
    assert st.clse.theta.delta3 == pytest.approx(1.5, abs=1e-5)


def test_strong_jump_gives_large_statistics(jump_data):
    st = continuity_statistics(jump_data)
    assert st.q_n > 10
    assert st.qlr_tilde > 5


def test_statistics_scale_invariant(jump_data):
    a = continuity_statistics(jump_data)
    b = continuity_statistics(jump_data.with_response(3.0 * jump_data.y))
    assert a.q_n == pytest.approx(b.q_n, rel=1e-8)
    assert a.qlr_tilde == pytest.approx(b.qlr_tilde, rel=1e-8)
