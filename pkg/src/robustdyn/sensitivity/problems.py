"""Problem adapters mapping multipliers to candidate worst-case laws.

Each adapter exposes

* ``dim`` and ``initial_params()`` for the random walk,
* ``reference()`` returning the evaluation at the reference law,
* ``evaluate(params, state=None, mode='bound', direction='lower')``
  returning an ``Evaluation``.

The last parameter is always ``log`` of the entropic weight.  In
``robustness`` mode the linear adapters switch to unit regularization and
read it as ``log lambda_s`` instead.  Linear adapters put ``-s`` in the
inner cost for upper bounds; the structural adapters carry the scalar
outside the cost and ignore ``direction``.
"""
from __future__ import annotations

import logging
import warnings

import numpy as np

from ..bridge import (PairwiseCost, PathLaw, auxiliary_endpoint, initial_perturbed_bridge, path_expectation,
                      path_kl, reconstruct_path_law, static_bridge)
from ..ddc.finite import (FiniteHorizonModel, _invert_rows, _model_average, finite_residual_terms,
                          frisch_elasticity, solve_finite_horizon, stop_work_elasticity)
from ..ddc.infinite import (InfiniteHorizonModel, SharePolicy, ev_subsidy_surplus, industry_elasticity,
                            recover_inclusive_indices, solve_share_fixed_point, structural_cost)
from ..ddc.structural import MomentSystem
from ..eot import CostTensor, solve_against_scaled, stationary_perturbed_eot, worst_case_kernel
from ..errors import DimensionError, DomainError
from ..measures import Coupling, DiscreteMeasure, joint_from_chain, kde_fit, kl_divergence, marginal
from .anneal import Evaluation
from .config import DualVariables
from .core import assemble_cost

log = logging.getLogger(__name__)


class _FloorMixin:
    lambda_kl_floor = 1e-8
    _floor_warned = False

    def _weight(self, p):
        lam = float(np.exp(np.clip(p, -700, 700)))
        if lam < self.lambda_kl_floor:
            if not self._floor_warned:
                log.warning("entropic weight %.3e below floor; using %.1e", lam, self.lambda_kl_floor)
                self._floor_warned = True
            lam = self.lambda_kl_floor
        return lam


class LinearProblem(_FloorMixin):
    """Expected scalar cost over couplings near a reference, with optional moments.

    Parameters
    ----------
    f0 : Coupling
        Reference law.
    scalar : ndarray
        ``s`` on the grid of ``f0``.
    moments : MomentSystem, optional
    delta1 : float
        When positive (two-way couplings only), the common marginal may move
        inside a KL ball of this radius around the reference marginal.
    """

    def __init__(self, f0: Coupling, scalar, moments: MomentSystem | None = None, delta1=0.0,
                 init_log_lambda=np.log(10.0), tol=1e-9, max_iter=5000, lambda_kl_floor=1e-8):
        self.f0 = f0
        self.scalar = np.asarray(scalar, dtype=float)
        if self.scalar.shape != f0.shape:
            raise DimensionError("scalar cost does not live on the reference grid")
        self.moments = moments
        self.delta1 = float(delta1)
        self.marginals = tuple(marginal(f0, i) for i in range(f0.k))
        self.tol, self.max_iter = tol, max_iter
        self.init_log_lambda = float(init_log_lambda)
        self.lambda_kl_floor = lambda_kl_floor

    @property
    def n_moments(self):
        return 0 if self.moments is None else self.moments.dim

    @property
    def dim(self):
        return self.n_moments + 1

    def initial_params(self):
        x = np.zeros(self.dim)
        x[-1] = self.init_log_lambda
        return x

    def _evaluation(self, params, plan, mode):
        scalar = plan.expect(self.scalar)
        kl = kl_divergence(plan, self.f0)
        viol = 0.0 if self.moments is None else self.moments.violation(plan)
        return Evaluation(np.asarray(params, dtype=float).copy(), float(scalar), float(kl), float(viol), plan,
                          None, {"mode": mode})

    def reference(self):
        return self._evaluation(self.initial_params(), self.f0, "reference")

    def duals(self, params, mode="bound"):
        lam = np.asarray(params[:-1], dtype=float)
        w = self._weight(params[-1])
        if mode == "robustness":
            return DualVariables(lam, 1.0, w)
        return DualVariables(lam, w)

    def cost(self, params, mode="bound", direction="lower"):
        d = self.duals(params, mode)
        m = None if self.moments is None else self.moments.residuals
        s = self.scalar if direction == "lower" else -self.scalar
        return assemble_cost(s, m, None, d, self.f0.grids, mode), d

    def evaluate(self, params, state=None, mode="bound", direction="lower"):
        cost, d = self.cost(params, mode, direction)
        lam = 1.0 if mode == "robustness" else d.lambda_kl
        if self.delta1 > 0:
            res = stationary_perturbed_eot(cost, self.marginals[0], self.f0, lam, self.delta1)
            plan = res.plan
        else:
            plan = solve_against_scaled(cost, self.f0, lam, self.marginals, tol=self.tol, max_iter=self.max_iter).plan
        return self._evaluation(params, plan, mode)


class PathLinearProblem(_FloorMixin):
    """Expected additive path cost over Markov path laws with fixed endpoints.

    With ``delta1 > 0`` the initial law may move inside a KL ball.
    """

    def __init__(self, f0: PathLaw, cost: PairwiseCost, nuT: DiscreteMeasure | None = None, delta1=0.0,
                 init_log_lambda=np.log(10.0), tol=1e-10, lambda_kl_floor=1e-8):
        self.f0 = f0
        self.cost = cost
        self.nuT = f0.terminal if nuT is None else nuT
        self.delta1 = float(delta1)
        self.tol = tol
        self.init_log_lambda = float(init_log_lambda)
        self.lambda_kl_floor = lambda_kl_floor

    dim = 1

    def initial_params(self):
        return np.array([self.init_log_lambda])

    def reference(self):
        return Evaluation(self.initial_params(), path_expectation(self.f0, self.cost), 0.0, 0.0, self.f0)

    def evaluate(self, params, state=None, mode="bound", direction="lower"):
        lam = 1.0 if mode == "robustness" else self._weight(params[-1])
        scale = self._weight(params[-1]) if mode == "robustness" else 1.0
        scale = scale if direction == "lower" else -scale
        c = PairwiseCost(tuple(scale * np.asarray(ci) for ci in self.cost.costs))
        if self.delta1 > 0:
            _, nu, sol = initial_perturbed_bridge(self.f0, c, lam, self.delta1, self.nuT)
            start = PathLaw(self.f0.grid, nu, self.f0.kernels)
        else:
            R = auxiliary_endpoint(self.f0, c, lam)
            sol = static_bridge(R, self.f0.initial, self.nuT, lam, tol=self.tol)
            start = self.f0
        law = reconstruct_path_law(start, c, sol.potentials, lam)
        return Evaluation(np.asarray(params, dtype=float).copy(), path_expectation(law, self.cost),
                          path_kl(law, self.f0), 0.0, law)


class CarProblem(_FloorMixin):
    """Elasticity or subsidy surplus of the purchase model under perturbed dynamics.

    The multipliers ``g`` weight the Bellman residual at the current policy;
    the induced worst-case kernel gives a new policy, recovered inclusive
    values and a kernel density of recovered pairs.

    Violation is the sum of the share-matching excess over the reference
    model and the excess of ``KL(plan || density)`` over ``eps_T``, where
    ``eps_T = KL(F0 || reference density)``.  The density bandwidth is the
    cross-validated reference value, held fixed.
    """

    def __init__(self, model: InfiniteHorizonModel, t1: int, functional="elasticity", policy=None,
                 bandwidth_rule="cv5", init_log_lambda=np.log(10.0), tol=1e-9, max_iter=5000,
                 lambda_kl_floor=1e-8, fixed_point_eps=None):
        self.model = model
        self.t1 = int(t1)
        if functional not in ("elasticity", "surplus", "cost"):
            raise DomainError("functional is 'elasticity', 'surplus' or 'cost'")
        self.functional = functional
        self.f0 = joint_from_chain(model.chain)
        self.nu0 = model.chain.stationary
        self.policy0 = policy if policy is not None else solve_share_fixed_point(model, method="newton")
        self.tol, self.max_iter = tol, max_iter
        self.init_log_lambda = float(init_log_lambda)
        self.lambda_kl_floor = lambda_kl_floor
        idx = recover_inclusive_indices(self.policy0, model.observed_s0)
        self.vio_ref = self._share_gap(self.policy0, idx)
        pts = model.grid.points
        kde = kde_fit(np.column_stack([pts[idx[:-1]], pts[idx[1:]]]), (model.grid, model.grid), bandwidth_rule)
        self.bandwidth = kde.bandwidth
        self.eps_T = kl_divergence(self.f0, kde.evaluated) if fixed_point_eps is None else float(fixed_point_eps)
        self._kde_cache = {idx.tobytes(): kde.evaluated}

    @property
    def dim(self):
        return len(self.model.grid) + 1

    def initial_params(self):
        x = np.zeros(self.dim)
        x[-1] = self.init_log_lambda
        return x

    def _share_gap(self, policy, idx):
        return float(np.mean(np.abs(policy.s0[idx] - self.model.observed_s0)))

    def _density(self, idx):
        key = idx.tobytes()
        if key not in self._kde_cache:
            pts = self.model.grid.points
            sample = np.column_stack([pts[idx[:-1]], pts[idx[1:]]])
            self._kde_cache[key] = kde_fit(sample, (self.model.grid, self.model.grid),
                                           bandwidth=self.bandwidth).evaluated
            if len(self._kde_cache) > 4096:
                self._kde_cache.pop(next(iter(self._kde_cache)))
        return self._kde_cache[key]

    def scalar_of(self, policy):
        if self.functional == "elasticity":
            return industry_elasticity(policy, self.model, self.t1)
        cs, cost = ev_subsidy_surplus(policy, self.model, self.t1)
        return cs if self.functional == "surplus" else cost

    def _evaluation(self, params, plan, policy, mode):
        idx = recover_inclusive_indices(policy, self.model.observed_s0)
        share = max(0.0, self._share_gap(policy, idx) - self.vio_ref)
        fixed = max(0.0, kl_divergence(plan, self._density(idx)) - self.eps_T)
        return Evaluation(np.asarray(params, dtype=float).copy(), float(self.scalar_of(policy)),
                          float(kl_divergence(plan, self.f0)), share + fixed, plan, policy,
                          {"share_violation": share, "fixed_point_violation": fixed, "mode": mode})

    def reference(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return self._evaluation(self.initial_params(), self.f0, self.policy0, "reference")

    def evaluate(self, params, state=None, mode="bound", direction="lower"):
        policy = state if isinstance(state, SharePolicy) else self.policy0
        params = np.asarray(params, dtype=float)
        lam = self._weight(params[-1])
        cost = CostTensor((self.model.grid, self.model.grid), structural_cost(policy, params[:-1], self.model.beta))
        plan = solve_against_scaled(cost, self.f0, lam, (self.nu0, self.nu0), tol=self.tol, max_iter=self.max_iter).plan
        kernel = worst_case_kernel(plan, self.model.chain)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            new = solve_share_fixed_point(self.model, kernel, method="newton", init=policy.s0)
            return self._evaluation(params, plan, new, mode)


class TaxiProblem(_FloorMixin):
    """Stop-work or Frisch elasticity of the stopping model under perturbed shock dynamics.

    Multipliers ``g[row, w, xi]`` (one row per feasible hour and hours-worked
    pair below the last hour) weight the Euler residual of the current CCPs.
    The worst-case shock kernel gives new CCPs by backward induction and new
    recovered shocks.  Violation is the excess of the mean stop-rate matching
    gap over the reference model (nonzero only when recovery clamps).
    """

    def __init__(self, model: FiniteHorizonModel, functional="stop", hour=None, start_hour=11,
                 init_log_lambda=np.log(10.0), tol=1e-9, max_iter=5000, lambda_kl_floor=1e-8):
        if functional not in ("stop", "frisch"):
            raise DomainError("functional is 'stop' or 'frisch'")
        self.model = model
        self.functional = functional
        self.t = model.T - 2 if hour is None else model.hour_index(hour)
        self.start_hour = start_hour
        self.boosted = model.with_earnings_boost(start_hour) if functional == "frisch" else None
        self.f0 = joint_from_chain(model.xi_chain)
        self.nu0 = model.xi_chain.stationary
        self.tol, self.max_iter = tol, max_iter
        self.init_log_lambda = float(init_log_lambda)
        self.lambda_kl_floor = lambda_kl_floor
        self.rows = [(t, int(k)) for t in range(model.T - 1) for k in model.k_sets[t]]
        self.ccps0 = solve_finite_horizon(model)
        self.vio_ref = 0.0
        val, self.vio_ref = self._outcome(self.ccps0, model.xi_chain)
        self._ref = (val, 0.0)

    @property
    def dim(self):
        return len(self.rows) * self.model.w_values.size * len(self.model.xi_chain.grid) + 1

    def initial_params(self):
        x = np.zeros(self.dim)
        x[-1] = self.init_log_lambda
        return x

    def _xi(self, ccps):
        obs = self.model.observed_average()
        xi = np.empty((self.model.n_days, self.model.T))
        gap = 0.0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            for t in range(self.model.T):
                A = _model_average(ccps, self.model, t)
                xi[:, t] = _invert_rows(A, obs[:, t], ccps.xi_points)
                fit = np.array([np.interp(x, ccps.xi_points, a) for x, a in zip(xi[:, t], A)])
                gap += float(np.nanmean(np.abs(fit - obs[:, t])))
        return xi, gap / self.model.T

    def _outcome(self, ccps, chain):
        xi, gap = self._xi(ccps)
        if self.functional == "stop":
            val = stop_work_elasticity(ccps, self.model, self.t, xi=xi[:, self.t])
        else:
            cp = solve_finite_horizon(self.boosted, chain)
            val = frisch_elasticity(ccps, cp, self.model, self.start_hour, xi=xi)
        return float(val), max(0.0, gap - self.vio_ref)

    def reference(self):
        val, viol = self._ref
        return Evaluation(self.initial_params(), val, 0.0, viol, self.f0, self.ccps0)

    def structural_cost(self, ccps, g):
        r = finite_residual_terms(ccps, self.model)
        nw, nx = self.model.w_values.size, len(self.model.xi_chain.grid)
        g = np.asarray(g, dtype=float).reshape(len(self.rows), nw, nx)
        out = np.zeros((nx, nx))
        for i, (t, k) in enumerate(self.rows):
            out += np.einsum("wx,wxy->xy", g[i], r[t, k])
        return out

    def evaluate(self, params, state=None, mode="bound", direction="lower"):
        ccps = state if state is not None else self.ccps0
        params = np.asarray(params, dtype=float)
        lam = self._weight(params[-1])
        grid = self.model.xi_chain.grid
        cost = CostTensor((grid, grid), self.structural_cost(ccps, params[:-1]))
        plan = solve_against_scaled(cost, self.f0, lam, (self.nu0, self.nu0), tol=self.tol, max_iter=self.max_iter).plan
        kernel = worst_case_kernel(plan, self.model.xi_chain)
        new = solve_finite_horizon(self.model, kernel)
        val, viol = self._outcome(new, kernel)
        return Evaluation(params.copy(), val, float(kl_divergence(plan, self.f0)), viol, plan, new)
