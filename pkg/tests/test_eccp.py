import numpy as np
import pytest

from robustdyn import NumericalError
from robustdyn.ddc import eccp_design, eccp_first_stage, two_stage_least_squares
from robustdyn.synth import SynthTaxiSpec, gen_taxi_panel

TRUE = np.array([-2.0, 0.4, -0.03, 0.04])


def _noiseless(seed=0, **kw):
    spec = SynthTaxiSpec(theta=tuple(TRUE), xi_sigma=0.0, w_hour_rho=None, exact=True, days=120, seed=seed, **kw)
    return gen_taxi_panel(spec)


def test_noiseless_panel_recovers_theta():
    est = eccp_first_stage(_noiseless())
    assert np.max(np.abs(est.theta - TRUE)) < 1e-6


def test_noiseless_recovery_does_not_depend_on_instrument_choice():
    panel = _noiseless(seed=3)
    a = eccp_first_stage(panel, "lag").theta
    b = eccp_first_stage(panel, "self").theta
    assert np.allclose(a, b, atol=1e-6)


def test_self_instrument_equals_ols():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(200), rng.normal(size=(200, 3))])
    y = X @ np.array([1.0, -2.0, 0.5, 3.0]) + rng.normal(size=200)
    theta, _ = two_stage_least_squares(y, X, X)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    assert np.allclose(theta, ols, atol=1e-12)


def test_instrumented_slope_removes_endogeneity():
    rng = np.random.default_rng(1)
    n = 20_000
    z = rng.normal(size=n)
    u = rng.normal(size=n)
    x = z + u
    y = 1.0 + 2.0 * x + u
    X = np.column_stack([np.ones(n), x])
    Z = np.column_stack([np.ones(n), z])
    iv, se = two_stage_least_squares(y, X, Z)
    ols = np.linalg.lstsq(X, y, rcond=None)[0]
    assert abs(iv[1] - 2.0) < 4 * se[1]
    assert abs(ols[1] - 2.0) > 0.3


def test_singular_first_stage_raises():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    Z = np.column_stack([np.ones(10), np.ones(10)])
    with pytest.raises(NumericalError):
        two_stage_least_squares(np.arange(10.0), X, Z)


def test_design_shapes_and_clusters():
    panel = _noiseless()
    y, X, Z, day = eccp_design(panel)
    assert X.shape == Z.shape == (y.size, 4)
    assert np.all(day >= 1)      # the lag instrument drops the first day
    assert np.allclose(X[:, :3], Z[:, :3])


def test_earnings_sign_on_noisy_panel():
    spec = SynthTaxiSpec(theta=tuple(TRUE), days=1000, hours=tuple(range(6, 16)), drivers_per_cell=3000, seed=4)
    est = eccp_first_stage(gen_taxi_panel(spec))
    assert np.sign(est.theta[3]) == np.sign(TRUE[3])
    assert np.all(est.se > 0)
    d = est.to_dict()
    assert d["n_clusters"] == 999
