"""Finite-horizon stopping model (hourly work/stop decision).

A driver who has worked ``k`` hours at clock hour ``t`` with earnings bin
``w`` and market shock ``xi`` keeps working with conditional value

    v1 = theta0 + theta1 k + theta2 k^2 + theta3 w + xi
         + beta E[-log p_{t+1}(k + 1, w', xi')],

and stopping is normalized to zero.  The stop probability is
``p = 1 / (1 + exp(v1))``.  Internally the table stores ``z = v1`` so that
``p = expit(-z)`` and ``-log p = softplus(z)`` never overflow.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from ..errors import DimensionError, DomainError
from ..measures import MarkovChain


def _softplus(x):
    return np.logaddexp(0.0, x)


def default_k_sets(hours):
    """Sliding window of four feasible hours-worked values per clock hour."""
    out = []
    for t in hours:
        ks = sorted({max(1, int(t) - j) for j in (8, 7, 6, 5)})
        out.append(np.array(ks, dtype=int))
    return tuple(out)


@dataclass(frozen=True)
class FiniteHorizonModel:
    """Primitives and day-hour data of the stopping model.

    Attributes
    ----------
    beta : float
    theta : ndarray
        ``(theta0, theta1, theta2, theta3)``.
    hours : ndarray of int
        Clock hours of the decision periods, consecutive.
    k_sets : tuple of int arrays
        Feasible hours-worked values at each clock hour.
    w_values : ndarray
        Earnings bin values (positive).
    w_kernel : ndarray
        Hour-to-hour transition between earnings bins.
    xi_chain : MarkovChain
        Reference law of the market shock.
    counts : ndarray, optional
        ``N[m, t, k]`` drivers with ``k`` hours worked at hour ``t`` of day ``m``.
    phat : ndarray, optional
        Observed stop frequencies, same shape as ``counts``.
    w_index : ndarray, optional
        Earnings bin ``[m, t]``.
    earnings_scale : ndarray
        Multiplier on ``theta3`` per hour (used by the Frisch counterfactual).
    """

    beta: float
    theta: np.ndarray
    hours: np.ndarray
    k_sets: tuple
    w_values: np.ndarray
    w_kernel: np.ndarray
    xi_chain: MarkovChain
    counts: np.ndarray | None = None
    phat: np.ndarray | None = None
    w_index: np.ndarray | None = None
    earnings_scale: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if not 0 <= self.beta < 1:
            raise DomainError("beta must lie in [0, 1)")
        th = np.asarray(self.theta, dtype=float).ravel()
        if th.size != 4:
            raise DimensionError("theta has four components")
        hours = np.asarray(self.hours, dtype=int).ravel()
        if len(self.k_sets) != hours.size:
            raise DimensionError("one feasible k set per hour")
        ks = tuple(np.asarray(k, dtype=int).ravel() for k in self.k_sets)
        if any(np.any(k < 0) for k in ks):
            raise DomainError("hours worked must be nonnegative")
        wv = np.asarray(self.w_values, dtype=float).ravel()
        W = np.asarray(self.w_kernel, dtype=float)
        if W.shape != (wv.size, wv.size):
            raise DimensionError("earnings kernel does not match bins")
        if np.any(W < 0) or np.max(np.abs(W.sum(axis=1) - 1.0)) > 1e-9:
            raise DomainError("earnings kernel must be row-stochastic")
        scale = np.ones(hours.size) if self.earnings_scale is None else \
            np.broadcast_to(np.asarray(self.earnings_scale, dtype=float), hours.shape).copy()
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "hours", hours)
        object.__setattr__(self, "k_sets", ks)
        object.__setattr__(self, "w_values", wv)
        object.__setattr__(self, "w_kernel", W)
        object.__setattr__(self, "earnings_scale", scale)
        if self.counts is not None:
            N = np.asarray(self.counts, dtype=float)
            if np.any(N < 0):
                raise DomainError("counts must be nonnegative")
            if N.ndim != 3 or N.shape[1] != hours.size:
                raise DimensionError("counts must be (days, hours, k)")
            if self.phat is None or self.w_index is None:
                raise DimensionError("counts need phat and w_index")
            ph = np.asarray(self.phat, dtype=float)
            wi = np.asarray(self.w_index, dtype=int)
            if ph.shape != N.shape or wi.shape != N.shape[:2]:
                raise DimensionError("phat / w_index shapes disagree with counts")
            nk = self.n_k
            if N.shape[2] > nk:
                raise DimensionError("k axis of the data is longer than the model's")
            if N.shape[2] < nk:
                pad = ((0, 0), (0, 0), (0, nk - N.shape[2]))
                N = np.pad(N, pad)
                ph = np.pad(ph, pad, constant_values=np.nan)
            object.__setattr__(self, "counts", N)
            object.__setattr__(self, "phat", ph)
            object.__setattr__(self, "w_index", wi)

    @property
    def T(self):
        return self.hours.size

    @property
    def n_k(self):
        """Size of the hours-worked axis, large enough for every reachable k."""
        top = max(int(k.max()) for k in self.k_sets if k.size)
        return top + self.T + 1

    @property
    def n_days(self):
        return 0 if self.counts is None else self.counts.shape[0]

    def hour_index(self, hour):
        idx = np.flatnonzero(self.hours == int(hour))
        if idx.size == 0:
            raise DomainError(f"hour {hour} is not a decision hour")
        return int(idx[0])

    def utility(self, t):
        """Flow utility ``u[k, w]`` at hour index ``t`` (shock excluded)."""
        k = np.arange(self.n_k, dtype=float)
        th = self.theta
        return (th[0] + th[1] * k + th[2] * k * k)[:, None] + th[3] * self.earnings_scale[t] * self.w_values[None, :]

    def with_earnings_boost(self, start_hour=11, factor=1.01):
        """Copy with the earnings coefficient scaled by ``factor`` from ``start_hour`` on."""
        scale = self.earnings_scale.copy()
        scale[self.hours >= start_hour] *= factor
        return replace(self, earnings_scale=scale)

    def with_xi_chain(self, chain):
        return replace(self, xi_chain=chain)

    def cell_weights(self, t):
        """``N[m, t, k]`` restricted to the feasible set ``K_t``; shape ``(M, n_k)``."""
        out = np.zeros((self.n_days, self.n_k))
        ks = self.k_sets[t]
        out[:, ks] = self.counts[:, t, ks]
        return out

    def observed_average(self, m=None, t=None):
        """Count-weighted observed stop frequency per day-hour."""
        if self.counts is None:
            raise DomainError("model carries no data")
        avg = np.full((self.n_days, self.T), np.nan)
        for ti in range(self.T):
            w = self.cell_weights(ti)
            tot = w.sum(axis=1)
            num = np.where(w > 0, w * self.phat[:, ti, :], 0.0)
            avg[:, ti] = np.divide(num.sum(axis=1), tot, out=np.full(self.n_days, np.nan), where=tot > 0)
        if m is None:
            return avg
        return avg[m, t]


@dataclass(frozen=True)
class CcpTable:
    """Stop probabilities ``p[t, k, w, xi]`` stored as conditional values ``z``."""

    hours: np.ndarray
    k_sets: tuple
    xi_points: np.ndarray
    z: np.ndarray

    @property
    def p(self):
        return expit(-self.z)

    @property
    def T(self):
        return self.z.shape[0]

    def neg_log_p(self):
        return _softplus(self.z)

    def at(self, t, k, w, xi):
        """Stop probability at an off-grid shock by linear interpolation in ``xi``."""
        row = self.p[t, k, w]
        return np.interp(xi, self.xi_points, row)

    def to_dict(self):
        return {"hours": self.hours.tolist(), "xi": self.xi_points.tolist(), "p": self.p.tolist()}


def _xi_kernel(model, xi_kernel):
    chain = model.xi_chain if xi_kernel is None else xi_kernel
    K = chain.kernel if isinstance(chain, MarkovChain) else np.asarray(chain, dtype=float)
    n = model.xi_chain.grid.points.size
    if K.shape != (n, n):
        raise DimensionError("shock kernel does not live on the model grid")
    return K


def solve_finite_horizon(model: FiniteHorizonModel, xi_kernel=None) -> CcpTable:
    """Backward induction for the stop probabilities.

    Parameters
    ----------
    model : FiniteHorizonModel
    xi_kernel : MarkovChain or ndarray, optional
        Hour-to-hour law of the shock; defaults to ``model.xi_chain``.

    Returns
    -------
    CcpTable
        The last hour is static; earlier layers add the discounted expected
        ``-log p`` of the next hour at ``k + 1``.  The top of the ``k`` axis
        reuses itself, which never feeds a feasible cell.
    """
    X = _xi_kernel(model, xi_kernel)
    W = model.w_kernel
    xi = model.xi_chain.grid.points
    T, nK = model.T, model.n_k
    z = np.empty((T, nK, model.w_values.size, xi.size))
    z[-1] = model.utility(T - 1)[:, :, None] + xi[None, None, :]
    nxt = np.minimum(np.arange(nK) + 1, nK - 1)
    for t in range(T - 2, -1, -1):
        sp = _softplus(z[t + 1])[nxt]
        cont = np.einsum("vw,kwx,yx->kvy", W, sp, X, optimize=True)
        z[t] = model.utility(t)[:, :, None] + xi[None, None, :] + model.beta * cont
    return CcpTable(model.hours, model.k_sets, xi.copy(), z)


def ccp_bellman_residual(ccps: CcpTable, model: FiniteHorizonModel, xi_kernel=None):
    """Residual ``log((1-p)/p) - u - xi - beta E[-log p_{t+1}]`` computed from ``p``."""
    X = _xi_kernel(model, xi_kernel)
    p = ccps.p
    xi = ccps.xi_points
    nK = p.shape[1]
    nxt = np.minimum(np.arange(nK) + 1, nK - 1)
    lhs = np.log1p(-p) - np.log(p)
    res = np.empty_like(p)
    for t in range(p.shape[0]):
        r = lhs[t] - model.utility(t)[:, :, None] - xi[None, None, :]
        if t < p.shape[0] - 1:
            r = r - model.beta * np.einsum("vw,kwx,yx->kvy", model.w_kernel, -np.log(p[t + 1])[nxt], X)
        res[t] = r
    return res


def _model_average(ccps, model, t):
    """Model-implied weighted stop probability per day over shock nodes, ``(M, n_xi)``."""
    wts = model.cell_weights(t)
    tot = wts.sum(axis=1, keepdims=True)
    wts = np.divide(wts, tot, out=np.zeros_like(wts), where=tot > 0)
    layer = ccps.p[t][:, model.w_index[:, t], :]          # (nK, M, nxi)
    return np.einsum("mk,kmx->mx", wts, layer)


def _invert_rows(A, target, xi):
    """Per-row monotone inversion of ``A(xi) = target`` with linear interpolation."""
    d = np.diff(A, axis=1)
    dec = np.all(d < 0, axis=1)
    inc = np.all(d > 0, axis=1)
    if not np.all(dec | inc):
        raise DomainError("weighted stop probability is not strictly monotone in the shock")
    Af = np.where(dec[:, None], A[:, ::-1], A)
    xf = np.where(dec[:, None], xi[None, ::-1], xi[None, :])
    lo, hi = Af[:, 0], Af[:, -1]
    out_of_range = (target < lo) | (target > hi)
    if np.any(out_of_range):
        warnings.warn("observed stop rate outside the model range; shock clamped to the boundary",
                      RuntimeWarning, stacklevel=3)
    tc = np.clip(target, lo, hi)
    n = A.shape[1]
    j = np.clip((Af <= tc[:, None]).sum(axis=1) - 1, 0, n - 2)
    r = np.arange(A.shape[0])
    a0, a1 = Af[r, j], Af[r, j + 1]
    x0, x1 = xf[r, j], xf[r, j + 1]
    frac = (tc - a0) / (a1 - a0)
    return x0 + frac * (x1 - x0)


def recover_xi(ccps: CcpTable, model: FiniteHorizonModel, m: int, t: int) -> float:
    """Shock at day ``m``, hour index ``t`` matching the observed weighted stop rate."""
    A = _model_average(ccps, model, t)[m:m + 1]
    target = np.array([model.observed_average(m, t)])
    return float(_invert_rows(A, target, ccps.xi_points)[0])


def recover_xi_path(ccps: CcpTable, model: FiniteHorizonModel):
    """Recovered shocks for every day and hour, shape ``(M, T)``."""
    obs = model.observed_average()
    out = np.empty((model.n_days, model.T))
    for t in range(model.T):
        out[:, t] = _invert_rows(_model_average(ccps, model, t), obs[:, t], ccps.xi_points)
    return out


def _interp_rows(rows, xi_points, x):
    """Linear interpolation of each row of ``rows`` at its own abscissa ``x``."""
    n = xi_points.size
    j = np.clip(np.searchsorted(xi_points, x) - 1, 0, n - 2)
    x0, x1 = xi_points[j], xi_points[j + 1]
    frac = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
    r = np.arange(rows.shape[0])
    return rows[r, j] + frac * (rows[r, j + 1] - rows[r, j])


def stop_work_elasticity(ccps: CcpTable, model: FiniteHorizonModel, t: int, xi=None) -> float:
    """Count-weighted elasticity of stopping at hour index ``t`` to a one-bin earnings rise.

    Cells already in the top earnings bin contribute zero.
    """
    if xi is None:
        xi = _invert_rows(_model_average(ccps, model, t), model.observed_average()[:, t], ccps.xi_points)
    else:
        xi = np.asarray(xi, dtype=float)
    wts = model.cell_weights(t)
    total = wts.sum()
    if total <= 0:
        raise DomainError("no drivers at this hour")
    wts = wts / total
    nw = model.w_values.size
    wi = model.w_index[:, t]
    wn = np.minimum(wi + 1, nw - 1)
    dw = (model.w_values[wn] - model.w_values[wi]) / model.w_values[wi]
    acc = 0.0
    for k in model.k_sets[t]:
        rows = ccps.p[t, k][wn]                            # (M, nxi)
        pnew = _interp_rows(rows, ccps.xi_points, xi)
        ph = model.phat[:, t, k]
        use = (wts[:, k] > 0) & (wn != wi)
        acc += np.sum(wts[use, k] * (pnew[use] - ph[use]) / ph[use] * dw[use])
    return float(acc)


def expected_hours(ccps: CcpTable, model: FiniteHorizonModel, xi, start_hour=11, advance_hours=False):
    """Expected hours worked after ``start_hour`` per day, ``H[m]``.

    ``H = sum_k N_mk sum_{t > start} (t - start) p_t prod_{s=start}^{t-1} (1 - p_s)``.
    With ``advance_hours`` the hours-worked index moves up one per hour;
    otherwise ``k`` is held at its ``start_hour`` value.
    """
    s = model.hour_index(start_hour)
    M = model.n_days
    H = np.zeros(M)
    xi = np.asarray(xi, dtype=float)
    for k in model.k_sets[s]:
        N = model.counts[:, s, k]
        surv = np.ones(M)
        tot = np.zeros(M)
        for t in range(s, model.T):
            kk = min(k + (t - s), ccps.z.shape[1] - 1) if advance_hours else k
            p = _interp_rows(ccps.p[t, kk][model.w_index[:, t]], ccps.xi_points, xi[:, t])
            if t > s:
                tot += (model.hours[t] - model.hours[s]) * p * surv
            surv = surv * (1.0 - p)
        H += N * tot
    return H


def frisch_elasticity(ccps: CcpTable, ccps_prime: CcpTable, model: FiniteHorizonModel,
                      start_hour=11, xi=None, advance_hours=False) -> float:
    """Percentage change in total expected hours between two CCP tables.

    Shocks are recovered once under ``ccps`` and held fixed.
    """
    if xi is None:
        xi = recover_xi_path(ccps, model)
    H = expected_hours(ccps, model, xi, start_hour, advance_hours).sum()
    Hp = expected_hours(ccps_prime, model, xi, start_hour, advance_hours).sum()
    if H <= 0:
        raise DomainError("zero expected hours")
    return float((Hp - H) / H * 100.0)


def finite_residual_terms(ccps: CcpTable, model: FiniteHorizonModel):
    """Bellman residual pieces ``r[t, k, w, xi, xi']`` for the multiplier-weighted constraint.

    ``E_{xi'|xi}[r] = 0`` is the Euler condition at ``(t, k, w, xi)``; the
    earnings expectation is taken under the fixed earnings kernel.
    """
    p = ccps.p
    xi = ccps.xi_points
    nK = p.shape[1]
    nxt = np.minimum(np.arange(nK) + 1, nK - 1)
    T = p.shape[0]
    r = np.zeros((T - 1, nK, model.w_values.size, xi.size, xi.size))
    for t in range(T - 1):
        a = np.log1p(-p[t]) - np.log(p[t]) - model.utility(t)[:, :, None] - xi[None, None, :]
        b = np.einsum("vw,kwy->kvy", model.w_kernel, -np.log(p[t + 1])[nxt])
        r[t] = a[..., None] - model.beta * b[:, :, None, :]
    return r
