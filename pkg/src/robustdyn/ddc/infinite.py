"""Infinite-horizon purchase model with an inclusive-value state.

Each period a consumer either buys (inclusive value ``omega``) or waits
(value ``beta * E[V(omega') | omega]``), with logit shocks.  With
``V = log(exp(omega) + exp(beta E V'))`` the not-purchase share satisfies

    log((1 - s0) / s0) = omega - beta E[omega' - log(1 - s0(omega')) | omega],

and ``1 - s0 = exp(omega - V)``.  Euler's constant is absorbed into the
log-sum-exp normalization throughout.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from ..errors import ConvergenceError, DimensionError, DomainError
from ..measures import Coupling, Grid, MarkovChain

_CLAMP = 1e-14


@dataclass(frozen=True)
class SharePolicy:
    """Not-purchase share ``s0`` at each inclusive-value node."""

    grid: Grid
    s0: np.ndarray

    def __post_init__(self):
        s = np.array(self.s0, dtype=float).ravel()
        if s.size != len(self.grid):
            raise DimensionError("policy length does not match grid")
        if not np.all((s > 0) & (s < 1)):
            raise DomainError("shares must lie strictly inside (0, 1)")
        s.setflags(write=False)
        object.__setattr__(self, "s0", s)

    @property
    def log_odds(self):
        """``log((1 - s0) / s0)``."""
        return np.log1p(-self.s0) - np.log(self.s0)

    def value_function(self):
        """``V = omega - log(1 - s0)`` (Hotz-Miller form)."""
        return self.grid.points - np.log1p(-self.s0)

    def is_monotone(self):
        d = np.diff(self.s0)
        return bool(np.all(d > 0) or np.all(d < 0))

    def to_dict(self):
        return {"grid": self.grid.to_list(), "s0": self.s0.tolist()}


@dataclass(frozen=True)
class InfiniteHorizonModel:
    """Primitives and data of the inclusive-value purchase model.

    Attributes
    ----------
    beta : float
        Discount factor in (0, 1).
    chain : MarkovChain
        Reference law of the inclusive value on its grid.
    observed_s0 : ndarray
        Aggregate not-purchase share per period.
    period_offsets : ndarray
        Counterfactual shift of the inclusive value per period.
    alpha : float
        Price coefficient (negative).
    market_size : ndarray
        Market size per period.
    ev_conditional_share : ndarray, optional
        Share of EV purchases among all purchases per period, used by the
        subsidy cost.
    subsidy : float
        Per-vehicle subsidy amount.
    """

    beta: float
    chain: MarkovChain
    observed_s0: np.ndarray
    period_offsets: np.ndarray
    alpha: float = -1.0
    market_size: np.ndarray | float = 1.0
    ev_conditional_share: np.ndarray | None = None
    subsidy: float = 3000.0
    labels: tuple = field(default=(), compare=False)

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise DomainError("beta must lie in [0, 1)")
        obs = np.array(self.observed_s0, dtype=float).ravel()
        if not np.all((obs > 0) & (obs < 1)):
            raise DomainError("observed shares must lie strictly inside (0, 1)")
        T = obs.size
        off = np.broadcast_to(np.asarray(self.period_offsets, dtype=float), (T,)).copy()
        msize = np.broadcast_to(np.asarray(self.market_size, dtype=float), (T,)).copy()
        for a in (obs, off, msize):
            a.setflags(write=False)
        object.__setattr__(self, "observed_s0", obs)
        object.__setattr__(self, "period_offsets", off)
        object.__setattr__(self, "market_size", msize)
        if self.ev_conditional_share is not None:
            ev = np.broadcast_to(np.asarray(self.ev_conditional_share, dtype=float), (T,)).copy()
            ev.setflags(write=False)
            object.__setattr__(self, "ev_conditional_share", ev)

    @property
    def grid(self):
        return self.chain.grid

    @property
    def T(self):
        return self.observed_s0.size

    def with_chain(self, chain):
        return InfiniteHorizonModel(self.beta, chain, self.observed_s0, self.period_offsets, self.alpha,
                                    self.market_size, self.ev_conditional_share, self.subsidy, self.labels)


def _kernel_matrix(kernel, n):
    K = kernel.kernel if isinstance(kernel, MarkovChain) else np.asarray(kernel, dtype=float)
    if K.shape != (n, n):
        raise DimensionError("kernel does not live on the model grid")
    return K


def _softplus(x):
    return np.logaddexp(0.0, x)


def share_map(s0, omega, K, beta):
    """One application of the share-space Bellman operator."""
    cont = K @ (omega - np.log1p(-s0))
    return expit(beta * cont - omega)


def share_residual(policy: SharePolicy, kernel, beta):
    """Residual of the share-space Bellman equation at every node."""
    omega = policy.grid.points
    K = _kernel_matrix(kernel, omega.size)
    return policy.log_odds - omega + beta * (K @ (omega - np.log1p(-policy.s0)))


def _clamped(s):
    lo, hi = _CLAMP, 1.0 - _CLAMP
    if np.any((s < lo) | (s > hi)):
        warnings.warn("not-purchase share within 1e-14 of the boundary; clamped", RuntimeWarning, stacklevel=3)
        s = np.clip(s, lo, hi)
    return s


def _rounding_floor(s, beta, K):
    """Bellman residual attainable with shares stored in double precision.

    A share ``s`` carries absolute error ``eps``, i.e. relative error
    ``eps / s`` in ``s`` and ``eps / (1 - s)`` in ``1 - s``; the log-odds and
    the continuation term inherit it.
    """
    eps = np.finfo(float).eps
    own = eps / s + eps / (1.0 - s)
    return 8.0 * (own + beta * (K @ (eps / (1.0 - s))))


def _residual_ok(s, resid, beta, K, tol):
    return bool(np.all(np.abs(resid) < tol + _rounding_floor(s, beta, K)))


def solve_share_fixed_point(model: InfiniteHorizonModel, kernel=None, tol=1e-12, max_iter=500_000,
                            damping=0.5, init=None, method="damped") -> SharePolicy:
    """Solve the share-space Bellman equation.

    Parameters
    ----------
    model : InfiniteHorizonModel
    kernel : MarkovChain or ndarray, optional
        Transition law of the inclusive value; defaults to ``model.chain``.
    tol : float
        Stop once the sup-norm share change falls below ``tol`` and the
        Bellman residual below ``tol`` plus its double-precision rounding
        floor, which dominates when shares approach 0 or 1.
    max_iter : int
    damping : float
        Weight on the new iterate, ``s <- (1 - d) s + d T(s)``.
    init : ndarray, optional
        Starting shares.
    method : {'damped', 'newton'}
        ``newton`` solves the equivalent value-function equation by Newton
        steps and maps back to shares; it reaches the same fixed point in a
        handful of linear solves.

    Returns
    -------
    SharePolicy
    """
    omega = model.grid.points
    K = _kernel_matrix(kernel if kernel is not None else model.chain, omega.size)
    beta = float(model.beta)
    if method == "newton":
        return _newton_policy(omega, K, beta, tol, init, model.grid)
    if method != "damped":
        raise DomainError(f"unknown method {method!r}")
    s = expit(-omega) if init is None else np.asarray(init, dtype=float).copy()
    s = _clamped(s)
    change = np.inf
    for it in range(1, max_iter + 1):
        Ts = _clamped(share_map(s, omega, K, beta))
        change = float(np.max(np.abs(Ts - s)))
        s = (1.0 - damping) * s + damping * Ts
        if change < tol:
            resid = share_residual(SharePolicy(model.grid, s), K, beta)
            if _residual_ok(s, resid, beta, K, tol):
                return SharePolicy(model.grid, s)
    raise ConvergenceError("share fixed point did not converge", change, max_iter)


def _newton_policy(omega, K, beta, tol, init, grid, max_iter=100):
    n = omega.size
    if init is not None:
        s = np.clip(np.asarray(init, dtype=float), _CLAMP, 1 - _CLAMP)
        V = omega - np.log1p(-s)
    else:
        V = np.logaddexp(omega, 0.0)
    eye = np.eye(n)
    for it in range(max_iter):
        w = beta * (K @ V)
        F = V - np.logaddexp(omega, w)
        sig = expit(w - omega)
        J = eye - beta * sig[:, None] * K
        dV = np.linalg.solve(J, F)
        V = V - dV
        if np.max(np.abs(dV)) < tol * 1e-2:
            break
    else:
        raise ConvergenceError("Newton iteration for the share policy did not converge",
                               float(np.max(np.abs(dV))), max_iter)
    s = _clamped(expit(beta * (K @ V) - omega))
    pol = SharePolicy(grid, s)
    resid = share_residual(pol, K, beta)
    if not _residual_ok(s, resid, beta, K, 10 * max(tol, 1e-13)):
        raise ConvergenceError("Newton share policy fails the Bellman residual check",
                               float(np.max(np.abs(resid))), it + 1)
    return pol


def value_iteration(model_or_grid, kernel=None, beta=None, tol=1e-12, max_iter=1_000_000):
    """Iterate ``V <- log(exp(omega) + exp(beta K V))`` to a sup-change below ``tol``."""
    if isinstance(model_or_grid, InfiniteHorizonModel):
        omega = model_or_grid.grid.points
        beta = model_or_grid.beta if beta is None else beta
        kernel = model_or_grid.chain if kernel is None else kernel
    else:
        g = model_or_grid
        omega = g.points if isinstance(g, Grid) else np.asarray(g, dtype=float)
    K = _kernel_matrix(kernel, omega.size)
    V = np.logaddexp(omega, 0.0)
    for it in range(1, max_iter + 1):
        new = np.logaddexp(omega, beta * (K @ V))
        change = float(np.max(np.abs(new - V)))
        V = new
        if change < tol:
            return V
    raise ConvergenceError("value iteration did not converge", change, max_iter)


def recover_inclusive_indices(policy: SharePolicy, observed_s0):
    """Grid index whose share is nearest to each observed share.

    Exact ties go to the lower inclusive value.  Observed shares outside
    the policy range map to the boundary node with a warning.
    """
    if not policy.is_monotone():
        raise DomainError("share policy is not strictly monotone; inclusive values are not identified")
    obs = np.atleast_1d(np.asarray(observed_s0, dtype=float))
    s = policy.s0
    if np.any((obs < s.min()) | (obs > s.max())):
        warnings.warn("observed share outside the policy range; mapped to the boundary node",
                      RuntimeWarning, stacklevel=2)
    d = np.abs(s[None, :] - obs[:, None])
    dmin = d.min(axis=1, keepdims=True)
    near = d <= dmin * (1 + 1e-12) + 1e-300
    return np.argmax(near, axis=1)


def recover_inclusive_values(policy: SharePolicy, observed_s0):
    """Inclusive value per period by nearest-node share matching."""
    return policy.grid.points[recover_inclusive_indices(policy, observed_s0)]


def _counterfactual_nodes(policy, model, t1):
    i = int(recover_inclusive_indices(policy, [model.observed_s0[t1]])[0])
    target = policy.grid.points[i] + model.period_offsets[t1]
    pts = policy.grid.points
    if target < pts[0] - 0.5 * (pts[1] - pts[0]) or target > pts[-1] + 0.5 * (pts[-1] - pts[-2]):
        warnings.warn("counterfactual inclusive value falls outside the grid", RuntimeWarning, stacklevel=3)
    j = int(policy.grid.nearest(target))
    return i, j


def industry_elasticity(policy: SharePolicy, model: InfiniteHorizonModel, t1: int) -> float:
    """Industry-wide price elasticity in period ``t1``.

    ``(s0_obs - s0(omega')) / (1 - s0_obs) * 100`` where ``omega'`` is the
    node nearest to the recovered inclusive value plus the period offset.
    """
    _, j = _counterfactual_nodes(policy, model, t1)
    s = model.observed_s0[t1]
    return float((s - policy.s0[j]) / (1.0 - s) * 100.0)


def ev_subsidy_surplus(policy: SharePolicy, model: InfiniteHorizonModel, t1: int):
    """Consumer surplus and fiscal cost of an EV purchase subsidy.

    Returns
    -------
    consumer_surplus : float
        ``(V(omega_EV) - V(omega)) * M / (-alpha)`` with ``V = omega - log s1``,
        i.e. ``(offset - log(s1(omega_EV) / s1_obs)) * M / (-alpha)``.
    cost : float
        ``subsidy * M * ev_share * s1(omega_EV)``.
    """
    _, j = _counterfactual_nodes(policy, model, t1)
    s1_obs = 1.0 - model.observed_s0[t1]
    s1_new = 1.0 - policy.s0[j]
    M = model.market_size[t1]
    cs = (model.period_offsets[t1] - np.log(s1_new / s1_obs)) * M / (-model.alpha)
    if model.ev_conditional_share is None:
        raise DomainError("the subsidy cost needs ev_conditional_share")
    cost = model.subsidy * M * model.ev_conditional_share[t1] * s1_new
    return float(cs), float(cost)


def bellman_residual_matrix(policy: SharePolicy, beta):
    """``r(omega, omega')`` whose conditional mean is the Bellman residual."""
    omega = policy.grid.points
    a = policy.log_odds - omega
    b = beta * (omega - np.log1p(-policy.s0))
    return a[:, None] + b[None, :]


def structural_cost(policy: SharePolicy, g, beta):
    """Multiplier-weighted Bellman residual ``g(omega) r(omega, omega')``."""
    g = np.asarray(getattr(g, "values", g), dtype=float)
    return g[:, None] * bellman_residual_matrix(policy, beta)


def structural_residual(plan: Coupling, policy: SharePolicy, g, model: InfiniteHorizonModel) -> float:
    """``E_plan[g(omega) r(omega, omega')]``."""
    return plan.expect(structural_cost(policy, g, model.beta))


def conditional_residual(plan: Coupling, policy: SharePolicy, beta):
    """Largest conditional Bellman residual ``|E_plan[r | omega]|`` over charged rows."""
    t = plan.tensor
    m = t.sum(axis=1)
    r = bellman_residual_matrix(policy, beta)
    pos = m > 0
    cond = np.sum(t * r, axis=1)[pos] / m[pos]
    return float(np.max(np.abs(cond)))
