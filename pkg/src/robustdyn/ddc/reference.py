"""Fixed-point fits of the reference AR(1) laws for the latent states."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConvergenceError
from ..measures import Grid, MarkovChain, discretize_ar1
from .finite import CcpTable, FiniteHorizonModel, _invert_rows, _model_average, recover_xi_path, solve_finite_horizon
from .infinite import InfiniteHorizonModel, SharePolicy, recover_inclusive_indices, solve_share_fixed_point


@dataclass(frozen=True)
class CarReference:
    gamma0: float
    gamma1: float
    sigma: float
    chain: MarkovChain
    policy: SharePolicy
    omega_index: np.ndarray
    iterations: int

    @property
    def omega(self):
        return self.chain.grid.points[self.omega_index]


def fit_car_reference(observed_s0, beta, n_points=51, width=3.0, init=(0.0, 0.5, 0.5),
                      tol=1e-8, max_iter=100) -> CarReference:
    """Alternate policy solve, nearest-node recovery and AR(1) refit to a fixed point.

    Nearest-node recovery is piecewise constant in the parameters, so the
    loop may wander among nearby grids instead of settling.  It stops once
    the parameters move by less than ``tol``; otherwise, after ``max_iter``
    rounds or on revisiting an earlier iterate, it keeps the iterate whose
    refit moved least and warns.
    """
    from ..synth import refit_ar1

    obs = np.asarray(observed_s0, dtype=float)
    params = tuple(map(float, init))
    seen = set()
    best = None
    policy = None
    for it in range(1, max_iter + 1):
        chain = discretize_ar1(params[0], params[1], params[2], n_points, width)
        model = InfiniteHorizonModel(beta, chain, obs, 0.0)
        policy = solve_share_fixed_point(model, method="newton")
        idx = recover_inclusive_indices(policy, obs)
        new = refit_ar1(chain.grid.points[idx])
        gap = max(abs(a - b) for a, b in zip(new, params))
        if best is None or gap < best[0]:
            best = (gap, CarReference(*params, chain, policy, idx, it))
        if gap < tol:
            return best[1]
        key = np.asarray(params).round(12).tobytes()
        if key in seen:
            break
        seen.add(key)
        params = new
    warnings.warn(f"reference fit did not settle; keeping the most self-consistent iterate (gap {best[0]:.2e})",
                  RuntimeWarning, stacklevel=2)
    return best[1]


@dataclass(frozen=True)
class TaxiReference:
    mu_xi: float
    sd_xi: float
    rho: float
    model: FiniteHorizonModel
    ccps: CcpTable
    xi: np.ndarray
    iterations: int

    @property
    def chain(self):
        return self.model.xi_chain


def _terminal_xi(model, span, n):
    """Last-hour shocks on a wide provisional grid; the last layer is static."""
    g = Grid.uniform(-span, span, n)
    probe = model.with_xi_chain(MarkovChain(g, np.full((n, n), 1.0 / n)))
    ccps = solve_finite_horizon(probe)
    t = model.T - 1
    return _invert_rows(_model_average(ccps, probe, t), model.observed_average()[:, t], ccps.xi_points)


def fit_taxi_reference(model: FiniteHorizonModel, n_xi=99, rho0=0.5, tol=1e-8, max_iter=200,
                       span=8.0) -> TaxiReference:
    """Fit the shock AR(1) with its stationary law pinned by the last hour.

    The mean and standard deviation of the last-hour shocks fix the
    stationary law, so only ``rho`` is iterated: set
    ``mu = mu_xi (1 - rho)`` and ``sigma = sd_xi sqrt(1 - rho^2)``, solve the
    CCPs, recover all shocks and refit ``rho``.
    """
    from ..synth import refit_ar1

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        xt = _terminal_xi(model, span, 4 * n_xi + 1)
    mu_xi, sd_xi = float(np.mean(xt)), float(np.std(xt))
    rho = float(rho0)
    for it in range(1, max_iter + 1):
        chain = discretize_ar1(mu_xi * (1 - rho), rho, sd_xi * np.sqrt(1 - rho * rho), n_xi)
        fitted = model.with_xi_chain(chain)
        ccps = solve_finite_horizon(fitted)
        xi = recover_xi_path(ccps, fitted)
        new = refit_ar1(xi)[1]
        new = float(np.clip(new, -0.999, 0.999))
        if abs(new - rho) < tol:
            return TaxiReference(mu_xi, sd_xi, rho, fitted, ccps, xi, it)
        rho = new
    raise ConvergenceError("shock persistence fit did not settle", abs(new - rho), max_iter)
