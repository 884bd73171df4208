import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import expit

from robustdyn import DimensionError, DomainError, Grid, MarkovChain, discretize_ar1
from robustdyn.ddc import (CcpTable, FiniteHorizonModel, ccp_bellman_residual, default_k_sets, expected_hours,
                           finite_residual_terms, frisch_elasticity, recover_xi, recover_xi_path,
                           solve_finite_horizon, stop_work_elasticity)

THETA = np.array([1.5, -0.05, -0.01, 0.04])


def _w_kernel(nw, stay=0.7):
    W = np.full((nw, nw), (1 - stay) / max(nw - 1, 1))
    np.fill_diagonal(W, stay if nw > 1 else 1.0)
    return W


def _model(hours=range(8, 14), nw=3, n_xi=15, beta=0.95, theta=THETA, data=None):
    hours = np.asarray(list(hours))
    w_values = np.linspace(20.0, 40.0, nw)
    kw = {}
    if data is not None:
        kw.update(counts=data[0], phat=data[1], w_index=data[2])
    return FiniteHorizonModel(beta, theta, hours, default_k_sets(hours), w_values, _w_kernel(nw),
                              discretize_ar1(0.0, 0.6, 0.3, n_xi), **kw)


def _with_exact_data(model, xi_true, n_days, seed=0):
    """Attach counts and the exact model stop rates at shocks on the grid."""
    rng = np.random.default_rng(seed)
    ccps = solve_finite_horizon(model)
    T, nk = model.T, model.n_k
    counts = np.zeros((n_days, T, nk))
    phat = np.full((n_days, T, nk), np.nan)
    wi = rng.integers(0, model.w_values.size, (n_days, T))
    xi_idx = np.asarray(xi_true)
    for m in range(n_days):
        for t in range(T):
            for k in model.k_sets[t]:
                counts[m, t, k] = rng.integers(5, 50)
                phat[m, t, k] = ccps.p[t, k, wi[m, t], xi_idx[m, t]]
    data_model = FiniteHorizonModel(model.beta, model.theta, model.hours, model.k_sets, model.w_values,
                                    model.w_kernel, model.xi_chain, counts, phat, wi)
    return data_model, ccps


def _table(p, hours, k_sets, xi_points):
    p = np.asarray(p, dtype=float)
    return CcpTable(np.asarray(hours), k_sets, np.asarray(xi_points, dtype=float), np.log1p(-p) - np.log(p))


def test_default_k_sets_window():
    ks = default_k_sets([8, 12, 20])
    assert list(ks[0]) == [1, 2, 3]
    assert list(ks[1]) == [4, 5, 6, 7]
    assert list(ks[2]) == [12, 13, 14, 15]


def test_zero_discount_is_static_logit():
    m = _model(beta=0.0)
    ccps = solve_finite_horizon(m)
    xi = m.xi_chain.grid.points
    for t in range(m.T):
        u = m.utility(t)
        assert np.allclose(ccps.p[t], 1 / (1 + np.exp(u[:, :, None] + xi[None, None, :])), atol=1e-15)


def test_two_hour_scalar_recursion():
    hours = [10, 11]
    g = Grid([0.0, 1.0])
    chain = MarkovChain(g, [[1.0, 0.0], [0.0, 1.0]])
    m = FiniteHorizonModel(0.9, THETA, hours, ([2], [3]), [30.0], [[1.0]], chain)
    ccps = solve_finite_horizon(m)
    th = THETA
    for x, xi in enumerate(g.points):
        u = lambda k: th[0] + th[1] * k + th[2] * k * k + th[3] * 30.0
        z1 = u(3) + xi
        z0 = u(2) + xi + 0.9 * np.log1p(np.exp(z1))
        assert ccps.p[1, 3, 0, x] == pytest.approx(1 / (1 + np.exp(z1)), abs=1e-12)
        assert ccps.p[0, 2, 0, x] == pytest.approx(1 / (1 + np.exp(z0)), abs=1e-12)


def test_bellman_residual_at_every_node():
    m = _model(hours=range(8, 19), nw=4, n_xi=99)
    ccps = solve_finite_horizon(m)
    assert np.all((ccps.p > 0) & (ccps.p < 1))
    assert np.max(np.abs(ccp_bellman_residual(ccps, m))) <= 1e-10


def test_extreme_utilities_do_not_overflow():
    m = _model(theta=np.array([800.0, 0.0, 0.0, 0.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        ccps = solve_finite_horizon(m)
    assert np.all(np.isfinite(ccps.z))
    assert np.all(np.isfinite(ccps.neg_log_p()))


def test_residual_terms_average_to_zero_under_own_kernel():
    m = _model(hours=range(9, 14), nw=2, n_xi=7)
    ccps = solve_finite_horizon(m)
    r = finite_residual_terms(ccps, m)
    K = m.xi_chain.kernel
    cond = np.einsum("tkvxy,xy->tkvx", r, K)
    assert np.max(np.abs(cond)) < 1e-10


def test_model_checks():
    hours = np.arange(8, 12)
    chain = discretize_ar1(0, 0.5, 0.3, 5)
    with pytest.raises(DimensionError):
        FiniteHorizonModel(0.9, [1, 2, 3], hours, default_k_sets(hours), [1.0], [[1.0]], chain)
    with pytest.raises(DomainError):
        FiniteHorizonModel(0.9, THETA, hours, default_k_sets(hours), [1.0, 2.0], [[0.5, 0.6], [0.5, 0.5]], chain)
    with pytest.raises(DomainError):
        FiniteHorizonModel(1.0, THETA, hours, default_k_sets(hours), [1.0], [[1.0]], chain)


# ---- shock recovery

def test_recover_xi_on_grid_node():
    base = _model()
    nx = base.xi_chain.grid.points.size
    rng = np.random.default_rng(3)
    xi_idx = rng.integers(1, nx - 1, (4, base.T))
    m, ccps = _with_exact_data(base, xi_idx, 4)
    xi = base.xi_chain.grid.points
    for d in range(4):
        for t in range(m.T):
            assert recover_xi(ccps, m, d, t) == pytest.approx(xi[xi_idx[d, t]], abs=1e-8)
    assert np.allclose(recover_xi_path(ccps, m), xi[xi_idx], atol=1e-8)


def test_recover_xi_moves_against_stop_rate():
    base = _model()
    m, ccps = _with_exact_data(base, np.full((1, base.T), 7), 1)
    x0 = recover_xi(ccps, m, 0, 2)
    bumped = FiniteHorizonModel(m.beta, m.theta, m.hours, m.k_sets, m.w_values, m.w_kernel, m.xi_chain,
                                m.counts, m.phat * 1.01, m.w_index)
    # the stop probability falls in the shock, so a higher stop rate means a lower shock
    assert recover_xi(ccps, bumped, 0, 2) < x0


def test_recover_xi_between_nodes_round_trip():
    base = _model(n_xi=41)
    ccps = solve_finite_horizon(base)
    xi = base.xi_chain.grid.points
    target = 0.5 * (xi[10] + xi[11]) + 0.013
    m, _ = _with_exact_data(base, np.full((1, base.T), 10), 1)
    # replace the data by exact rates at an off-grid shock (interpolated in the shock)
    phat = m.phat.copy()
    for t in range(m.T):
        for k in m.k_sets[t]:
            phat[0, t, k] = ccps.at(t, k, m.w_index[0, t], target)
    m2 = FiniteHorizonModel(m.beta, m.theta, m.hours, m.k_sets, m.w_values, m.w_kernel, m.xi_chain, m.counts,
                            phat, m.w_index)
    step = xi[1] - xi[0]
    assert abs(recover_xi(ccps, m2, 0, 0) - target) < step ** 2


def test_recover_xi_clamps_and_warns():
    base = _model()
    m, ccps = _with_exact_data(base, np.full((1, base.T), 7), 1)
    extreme = FiniteHorizonModel(m.beta, m.theta, m.hours, m.k_sets, m.w_values, m.w_kernel, m.xi_chain, m.counts,
                                 np.where(np.isnan(m.phat), np.nan, 0.999999), m.w_index)
    with pytest.warns(RuntimeWarning):
        x = recover_xi(ccps, extreme, 0, 1)
    assert x == base.xi_chain.grid.points[0]


# ---- functionals

def _single_cell(p_new, phat, w=(30.0, 33.0)):
    hours = [11, 12]
    g = Grid([-1.0, 1.0])
    chain = MarkovChain(g, [[0.5, 0.5], [0.5, 0.5]])
    k_sets = (np.array([3]), np.array([4]))
    counts = np.zeros((1, 2, 4 + 3))
    counts[0, 0, 3] = 10
    counts[0, 1, 4] = 10
    ph = np.full(counts.shape, np.nan)
    ph[0, 0, 3] = phat
    ph[0, 1, 4] = phat
    m = FiniteHorizonModel(0.9, THETA, hours, k_sets, list(w), [[0.5, 0.5], [0.5, 0.5]], chain, counts, ph,
                           np.zeros((1, 2), dtype=int))
    p = np.full((2, m.n_k, 2, 2), 0.5)
    p[0, 3, 1, :] = p_new
    return m, _table(p, hours, k_sets, g.points)


def test_stop_elasticity_hand_value():
    m, ccps = _single_cell(0.09, 0.1)
    assert stop_work_elasticity(ccps, m, 0, xi=np.array([0.0])) == pytest.approx(-0.01, abs=1e-12)


def test_stop_elasticity_zero_when_rates_unchanged():
    m, ccps = _single_cell(0.1, 0.1)
    assert stop_work_elasticity(ccps, m, 0, xi=np.array([0.3])) == pytest.approx(0.0, abs=1e-15)


def test_stop_elasticity_top_bin_contributes_nothing():
    m, ccps = _single_cell(0.09, 0.1)
    top = FiniteHorizonModel(m.beta, m.theta, m.hours, m.k_sets, m.w_values, m.w_kernel, m.xi_chain, m.counts,
                             m.phat, np.ones((1, 2), dtype=int))
    assert stop_work_elasticity(ccps, top, 0, xi=np.array([0.0])) == 0.0


def test_stop_elasticity_weights_are_normalized():
    m, ccps = _single_cell(0.09, 0.1)
    scaled = FiniteHorizonModel(m.beta, m.theta, m.hours, m.k_sets, m.w_values, m.w_kernel, m.xi_chain,
                                m.counts * 37.0, m.phat, m.w_index)
    assert stop_work_elasticity(ccps, scaled, 0, xi=np.array([0.0])) == pytest.approx(-0.01, abs=1e-12)


def _frisch_case(p11, p12, p13):
    hours = [11, 12, 13]
    g = Grid([-1.0, 1.0])
    chain = MarkovChain(g, [[0.5, 0.5], [0.5, 0.5]])
    k_sets = (np.array([3]), np.array([3]), np.array([3]))
    counts = np.zeros((1, 3, 4))
    counts[0, :, 3] = 20
    ph = np.where(counts > 0, 0.2, np.nan)
    m = FiniteHorizonModel(0.9, THETA, hours, k_sets, [30.0], [[1.0]], chain, counts, ph,
                           np.zeros((1, 3), dtype=int))
    p = np.full((3, m.n_k, 1, 2), 0.5)
    for t, v in enumerate((p11, p12, p13)):
        p[t, 3, 0, :] = v
    return m, _table(p, hours, k_sets, g.points)


def test_frisch_two_hour_tree():
    m, ccps = _frisch_case(0.1, 0.2, 0.3)
    _, ccps2 = _frisch_case(0.08, 0.15, 0.35)
    xi = np.zeros((1, 3))

    def hand(a, b, c):
        return 20 * (1 * b * (1 - a) + 2 * c * (1 - a) * (1 - b))

    H, H2 = hand(0.1, 0.2, 0.3), hand(0.08, 0.15, 0.35)
    assert expected_hours(ccps, m, xi)[0] == pytest.approx(H, abs=1e-12)
    assert frisch_elasticity(ccps, ccps2, m, xi=xi) == pytest.approx((H2 - H) / H * 100, abs=1e-10)
    assert frisch_elasticity(ccps, ccps, m, xi=xi) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.001, 0.999), min_size=3, max_size=3))
def test_expected_hours_nonnegative(ps):
    m, ccps = _frisch_case(*ps)
    assert expected_hours(ccps, m, np.zeros((1, 3)))[0] >= 0.0


def test_frisch_rejects_empty_hours():
    m, ccps = _frisch_case(0.5, 0.5, 0.5)
    counts = m.counts.copy()
    counts[0, 0] = 0.0
    empty = FiniteHorizonModel(m.beta, m.theta, m.hours, m.k_sets, m.w_values, m.w_kernel, m.xi_chain, counts,
                               m.phat, m.w_index)
    with pytest.raises(DomainError):
        frisch_elasticity(ccps, ccps, empty, xi=np.zeros((1, 3)))


def test_earnings_boost_only_after_start():
    m = _model()
    b = m.with_earnings_boost(11, 1.01)
    assert np.allclose(b.earnings_scale, np.where(m.hours >= 11, 1.01, 1.0))
    assert np.allclose(b.utility(0), m.utility(0))
    assert not np.allclose(b.utility(m.hour_index(12)), m.utility(m.hour_index(12)))


def test_table_serializes():
    ccps = solve_finite_horizon(_model(n_xi=5))
    d = ccps.to_dict()
    assert np.allclose(np.asarray(d["p"]), ccps.p)
    assert np.allclose(expit(-ccps.z), ccps.p)
