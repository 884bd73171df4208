"""Entropic optimal transport on product grids.

The central object is the multi-marginal problem

    min_F  E_F[c] + lam * KL(F || R)   over couplings F with marginals nu_i,

solved through its Schrodinger potentials by log-domain Sinkhorn sweeps.
``R`` defaults to the product of the marginals; a general (possibly
unnormalized) reference tensor is also accepted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import ConvergenceError, DimensionError, DomainError, NumericalError, SupportError
from .measures import (
    Coupling,
    DiscreteMeasure,
    Grid,
    MarkovChain,
    kl_divergence,
    marginal,
    product_coupling,
)

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 100_000
MAX_MARGINALS = 4


@dataclass(frozen=True)
class CostTensor:
    """Cost values on the product of ``k`` grids.

    Entries must be finite except for ``+inf``, which marks cells excluded
    from the support (as produced by :func:`absorb_reference`).
    """

    grids: tuple
    values: np.ndarray

    def __post_init__(self):
        grids = tuple(g if isinstance(g, Grid) else Grid(g) for g in self.grids)
        v = np.array(self.values, dtype=float)
        shape = tuple(len(g) for g in grids)
        if v.shape != shape:
            raise DimensionError(f"cost shape {v.shape} does not match grids {shape}")
        if np.any(np.isnan(v)) or np.any(v == -np.inf):
            raise DomainError("cost entries must be finite (or +inf for excluded cells)")
        v.setflags(write=False)
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "values", v)

    @property
    def k(self):
        return len(self.grids)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def zeros_like(cls, grids):
        return cls(tuple(grids), np.zeros(tuple(len(g) for g in grids)))


@dataclass(frozen=True)
class Potentials:
    """Per-marginal Schrodinger potentials."""

    phis: tuple

    def __post_init__(self):
        object.__setattr__(self, "phis", tuple(np.asarray(p, dtype=float).copy() for p in self.phis))

    def __len__(self):
        return len(self.phis)

    def __getitem__(self, i):
        return self.phis[i]

    def __iter__(self):
        return iter(self.phis)

    def total(self):
        """Tensor ``phi_1 (+) ... (+) phi_k`` on the product grid."""
        k = len(self.phis)
        out = 0.0
        for i, p in enumerate(self.phis):
            out = out + _expand(p, i, k)
        return out

    def to_list(self):
        return [p.tolist() for p in self.phis]


@dataclass(frozen=True)
class EotSolution:
    """Output of a Sinkhorn solve.

    Attributes
    ----------
    potentials : Potentials
        Gauge-fixed Schrodinger potentials.
    plan : Coupling
        Optimal coupling ``exp((sum phi - c) / lam) * R``.
    value : float
        Optimal value ``sum_i E_{nu_i}[phi_i]``.
    iterations : int
        Number of full sweeps.
    residual : float
        Sup-norm marginal error of ``plan``.
    """

    potentials: Potentials
    plan: Coupling
    value: float
    iterations: int
    residual: float
    lambda_kl: float = float("nan")

    def to_dict(self):
        return {
            "potentials": self.potentials.to_list(),
            "plan": self.plan.to_dict(),
            "value": self.value,
            "iterations": self.iterations,
            "residual": self.residual,
            "lambda_kl": self.lambda_kl,
        }


@dataclass(frozen=True)
class ReferenceLogDensity:
    """``rho = log(dF_prod / dF0)``, ``+inf`` where ``F0`` vanishes."""

    rho: np.ndarray


def _expand(v, axis, k):
    shape = [1] * k
    shape[axis] = -1
    return np.reshape(v, shape)


def _lse(S, axis):
    # lean log-sum-exp for the hot loop; all -inf slices map to -inf
    m = np.max(S, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(S - m), axis=axis, keepdims=True)) + m
    return np.squeeze(out, axis=axis)


def _check_lambda(lam):
    lam = float(lam)
    if not lam > 0 or not np.isfinite(lam):
        raise DomainError(f"lambda_kl must be positive and finite, got {lam}")
    return lam


def _safe_log(x):
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), -np.inf)


def reference_log_density(f0: Coupling) -> ReferenceLogDensity:
    """Log density of the product of ``f0``'s marginals with respect to ``f0``."""
    prod = product_coupling([marginal(f0, i) for i in range(f0.k)]).tensor
    with np.errstate(divide="ignore"):
        rho = np.where(f0.tensor > 0, _safe_log(prod) - _safe_log(f0.tensor), np.inf)
    return ReferenceLogDensity(rho)


def absorb_reference(cost: CostTensor, f0: Coupling, lambda_kl) -> CostTensor:
    """Fold a non-product reference into the cost.

    Solving against the product of ``f0``'s marginals with the returned
    cost ``c + lam * rho`` is equivalent to solving against ``f0`` with
    ``c``, because ``KL(F||f0) = KL(F||F_prod) + E_F[rho]``.  Cells where
    ``f0`` vanishes receive ``+inf`` cost.
    """
    lam = _check_lambda(lambda_kl)
    if cost.shape != f0.shape:
        raise DimensionError("cost and reference shapes differ")
    rho = reference_log_density(f0).rho
    with np.errstate(invalid="ignore"):
        vals = np.where(np.isinf(rho), np.inf, cost.values + lam * rho)
    return CostTensor(cost.grids, vals)


def _marginal_weights(marginals, shape):
    if len(marginals) != len(shape):
        raise DimensionError(f"{len(marginals)} marginals for a {len(shape)}-way cost")
    out = []
    for m, n in zip(marginals, shape):
        w = m.weights if isinstance(m, DiscreteMeasure) else np.asarray(m, dtype=float)
        if w.size != n:
            raise DimensionError("marginal length does not match cost axis")
        out.append(w)
    return out


def _sinkhorn_core(cost, log_ref, margs, lam, tol, max_iter, init=None):
    """Log-domain Sinkhorn sweeps against an arbitrary log reference.

    Returns potentials (before gauge fixing), the log plan and sweep count.
    """
    k = cost.ndim
    if k > MAX_MARGINALS:
        raise DimensionError(f"at most {MAX_MARGINALS} marginals are supported")
    with np.errstate(invalid="ignore"):
        base = log_ref - cost / lam
    base = np.where(np.isnan(base), -np.inf, base)
    supports = [w > 0 for w in margs]
    logm = [_safe_log(w) for w in margs]
    for i, s in enumerate(supports):
        if not s.all():
            base = base + _expand(np.where(s, 0.0, -np.inf), i, k)
    phis = [np.zeros(n) for n in cost.shape] if init is None else [
        np.where(np.isfinite(p), np.asarray(p, dtype=float), 0.0).copy() for p in init]
    axes = [tuple(a for a in range(k) if a != j) for j in range(k)]
    change = np.inf
    for it in range(1, max_iter + 1):
        change = 0.0
        for j in range(k):
            S = base
            for i in range(k):
                if i != j:
                    S = S + _expand(phis[i] / lam, i, k)
            lse = _lse(S, axes[j])
            s = supports[j]
            bad = s & ~np.isfinite(lse)
            if np.any(bad):
                cell = int(np.flatnonzero(bad)[0])
                if np.any(np.isnan(lse[bad])):
                    raise NumericalError(f"NaN in log-sum-exp on axis {j}")
                raise SupportError(f"reference has no mass on the slice axis={j}, node={cell}")
            new = phis[j].copy()
            new[s] = lam * (logm[j][s] - lse[s])
            change = max(change, float(np.max(np.abs(new[s] - phis[j][s]))))
            phis[j] = new
        if change < tol:
            logplan = base + sum(_expand(phis[i] / lam, i, k) for i in range(k))
            plan = np.exp(logplan)
            err = max(float(np.max(np.abs(plan.sum(axis=axes[j]) - margs[j]))) for j in range(k))
            if err < 10 * tol:
                return phis, plan, it, err
    raise ConvergenceError("Sinkhorn did not converge", change, max_iter)


def _gauge(phis, margs):
    k = len(phis)
    means = [float(np.dot(w[w > 0], p[w > 0])) for p, w in zip(phis, margs)]
    value = sum(means)
    out = [p.copy() for p in phis]
    shift_total = 0.0
    for i in range(1, k):
        a = value / k - means[i]
        out[i] = out[i] + a
        shift_total += a
    out[0] = out[0] - shift_total
    return out, value


def _newton_two_way(cost, log_ref, margs, lam, tol, max_iter=200, init=None):
    """Damped Newton ascent on the semi-dual of a two-marginal problem.

    The first potential is eliminated in closed form, so the plan always
    matches the first marginal; iterations drive the second marginal error
    below ``tol``.  Used when plain sweeps stall at small weights.
    """
    a, b = margs
    sa, sb = a > 0, b > 0
    base = (log_ref - cost / lam)[np.ix_(sa, sb)]
    la, lb = np.log(a[sa]), np.log(b[sb])
    psi = np.zeros(sb.sum()) if init is None else np.where(np.isfinite(init[1][sb]), init[1][sb], 0.0) / lam

    def state(psi):
        S = base + psi[None, :]
        lse = logsumexp(S, axis=1)
        P = np.exp(S - lse[:, None] + la[:, None])
        return float(a[sa] @ (la - lse) + b[sb] @ psi), P

    val, P = state(psi)
    err = np.inf
    for it in range(1, max_iter + 1):
        g = b[sb] - P.sum(axis=0)
        err = float(np.max(np.abs(g)))
        if err < tol:
            break
        H = np.diag(P.sum(axis=0)) - P.T @ (P / a[sa][:, None])
        if not (np.isfinite(val) and np.all(np.isfinite(H))):
            raise ConvergenceError("Newton semi-dual left the finite range", err, it)
        d = np.zeros_like(psi)
        d[1:] = np.linalg.lstsq(H[1:, 1:], g[1:], rcond=None)[0]
        step = 1.0
        while step > 1e-12:
            v, Pn = state(psi + step * d)
            if np.isfinite(v) and v >= val - 1e-15 * max(1.0, abs(val)):
                break
            step *= 0.5
        psi, val, P = psi + step * d, v, Pn
    else:
        raise ConvergenceError("Newton semi-dual did not converge", err, max_iter)
    phi_b = np.full(b.size, -np.inf)
    phi_b[sb] = lam * psi
    S = base + psi[None, :]
    phi_a = np.full(a.size, -np.inf)
    phi_a[sa] = lam * (la - logsumexp(S, axis=1))
    plan = np.zeros(cost.shape)
    plan[np.ix_(sa, sb)] = P
    return [phi_a, phi_b], plan, it, err


def _solve(cost_values, grids, log_ref, margs, lam, tol, max_iter, init):
    try:
        budget = max_iter if cost_values.ndim != 2 else min(max_iter, 1000)
        phis, plan, it, err = _sinkhorn_core(cost_values, log_ref, margs, lam, tol, budget, init)
    except ConvergenceError:
        if cost_values.ndim != 2:
            raise
        phis, plan, it, err = _newton_two_way(cost_values, log_ref, margs, lam, tol, init=init)
    phis, value = _gauge(phis, margs)
    if not np.isfinite(value):
        raise NumericalError("non-finite EOT value")
    total = plan.sum()
    if abs(total - 1.0) >= max(1e-9, 10 * tol):
        raise ConvergenceError("plan mass drifted away from one", abs(total - 1.0), it)
    return EotSolution(Potentials(phis), Coupling(grids, plan / total), float(value), it, err, lam)


def sinkhorn(cost: CostTensor, marginals: Sequence[DiscreteMeasure], lambda_kl,
             tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, reference=None, init=None) -> EotSolution:
    """Multi-marginal entropic OT by log-domain Sinkhorn sweeps.

    Parameters
    ----------
    cost : CostTensor
        Cost on the product grid, ``k <= 4`` axes.
    marginals : sequence of DiscreteMeasure
        Target marginals, one per axis.
    lambda_kl : float
        Entropic regularization, positive.
    tol : float
        Stop when the sup-norm change of every potential over a sweep is
        below ``tol`` and every marginal of the plan is within ``10 * tol``.
    max_iter : int
        Cap on full sweeps.
    reference : Coupling or ndarray, optional
        Reference measure.  Defaults to the product of ``marginals``.  A raw
        nonnegative array is used as an unnormalized reference.
    init : sequence of ndarray, optional
        Warm-start potentials.

    Returns
    -------
    EotSolution

    Raises
    ------
    ConvergenceError
        If the tolerance is not met within ``max_iter`` sweeps.
    SupportError
        If the reference gives no mass to a whole slice with positive
        target weight.
    """
    lam = _check_lambda(lambda_kl)
    margs = _marginal_weights(marginals, cost.shape)
    if reference is None:
        log_ref = 0.0
        for i, w in enumerate(margs):
            log_ref = log_ref + _expand(_safe_log(w), i, cost.k)
    else:
        ref = reference.tensor if isinstance(reference, Coupling) else np.asarray(reference, dtype=float)
        if ref.shape != cost.shape:
            raise DimensionError("reference shape does not match cost")
        if np.any(ref < 0) or not np.all(np.isfinite(ref)):
            raise DomainError("reference must be finite and nonnegative")
        log_ref = _safe_log(ref)
    log_ref = np.broadcast_to(log_ref, cost.shape)
    return _solve(cost.values, cost.grids, log_ref, margs, lam, tol, max_iter, init)


def eot_value_dual(potentials, cost: CostTensor, marginals, f0: Coupling | None, lambda_kl) -> float:
    """Dual objective at arbitrary potentials.

    ``sum_i E_{nu_i}[phi_i] - lam * E_{f0}[exp((sum phi - c) / lam)] + lam``.
    Weak duality makes this a lower bound on the EOT value for any input.
    """
    lam = _check_lambda(lambda_kl)
    margs = _marginal_weights(marginals, cost.shape)
    phis = list(potentials)
    lin = sum(float(np.dot(w[w > 0], np.asarray(p)[w > 0])) for p, w in zip(phis, margs))
    ref = product_coupling([DiscreteMeasure(g, w) for g, w in zip(cost.grids, margs)]).tensor \
        if f0 is None else f0.tensor
    tot = Potentials(phis).total()
    mask = ref > 0
    with np.errstate(invalid="ignore", over="ignore"):
        expo = (np.broadcast_to(tot, cost.shape)[mask] - cost.values[mask]) / lam
    m = expo.max() if expo.size else 0.0
    integral = float(np.exp(m) * np.sum(ref[mask] * np.exp(expo - m)))
    return lin - lam * integral + lam


def schrodinger_residual(solution: EotSolution, cost: CostTensor, marginals, reference=None) -> float:
    """Largest violation of the Schrodinger equations at given potentials."""
    lam = solution.lambda_kl
    margs = _marginal_weights(marginals, cost.shape)
    k = cost.k
    if reference is None:
        log_ref = sum(_expand(_safe_log(w), i, k) for i, w in enumerate(margs))
    else:
        ref = reference.tensor if isinstance(reference, Coupling) else np.asarray(reference)
        log_ref = _safe_log(ref)
    base = np.broadcast_to(log_ref, cost.shape) - cost.values / lam
    phis = list(solution.potentials)
    worst = 0.0
    for j in range(k):
        S = base + sum(_expand(phis[i] / lam, i, k) for i in range(k) if i != j)
        lse = logsumexp(S, axis=tuple(a for a in range(k) if a != j))
        s = margs[j] > 0
        rhs = lam * (_safe_log(margs[j])[s] - lse[s])
        worst = max(worst, float(np.max(np.abs(phis[j][s] - rhs))))
    return worst


def solve_against(cost: CostTensor, f0: Coupling, lambda_kl, marginals=None, tol=DEFAULT_TOL,
                  max_iter=DEFAULT_MAX_ITER, init=None) -> EotSolution:
    """EOT against a general reference ``f0`` via reference absorption.

    ``marginals`` defaults to the marginals of ``f0``.
    """
    if marginals is None:
        marginals = [marginal(f0, i) for i in range(f0.k)]
    absorbed = absorb_reference(cost, f0, lambda_kl)
    prod = product_coupling([marginal(f0, i) for i in range(f0.k)]).tensor
    return sinkhorn(absorbed, marginals, lambda_kl, tol=tol, max_iter=max_iter,
                    reference=prod, init=init)


def solve_against_scaled(cost: CostTensor, f0: Coupling, lambda_kl, marginals=None, tol=DEFAULT_TOL,
                         max_iter=DEFAULT_MAX_ITER, factor=4.0, init=None) -> EotSolution:
    """:func:`solve_against` with a warm-started ladder of decreasing weights.

    Small weights make plain sweeps slow.  The ladder starts at the cost
    range (or ``lambda_kl`` if larger) and divides by ``factor`` until it
    reaches ``lambda_kl``; each rung starts from the previous potentials.
    Intermediate rungs use a loose tolerance.
    """
    lam = _check_lambda(lambda_kl)
    vals = cost.values[np.isfinite(cost.values)]
    top = max(float(np.ptp(vals)) if vals.size else 1.0, 1e-12)
    ladder = []
    x = top
    while x > lam * factor:
        ladder.append(x)
        x /= factor
    # two-way problems fall back to Newton, which is fast from a warm start
    sweeps = min(max_iter, 50) if cost.k == 2 else max_iter
    for rung in ladder:
        try:
            init = list(solve_against(cost, f0, rung, marginals, tol=max(tol, 1e-6), max_iter=sweeps,
                                      init=init).potentials)
        except ConvergenceError:
            break
    return solve_against(cost, f0, lam, marginals, tol=tol, max_iter=sweeps if ladder else max_iter, init=init)


def primal_value(plan: Coupling, cost: CostTensor, f0: Coupling, lambda_kl) -> float:
    """``E_plan[c] + lam * KL(plan || f0)``."""
    return plan.expect(cost.values) + float(lambda_kl) * kl_divergence(plan, f0)


def worst_case_kernel(plan: Coupling, reference_kernel=None) -> MarkovChain:
    """Transition kernel of a two-way coupling with equal marginals.

    Rows with zero mass take the matching row of ``reference_kernel``
    (or the second marginal when no reference is given).
    """
    if plan.k != 2 or plan.grids[0] != plan.grids[1]:
        raise DimensionError("worst_case_kernel needs a square two-way coupling")
    t = plan.tensor
    m0 = t.sum(axis=1)
    m1 = t.sum(axis=0)
    if np.max(np.abs(m0 - m1)) > 1e-6:
        raise DomainError("coupling marginals differ; the kernel would not be stationary")
    K = np.empty_like(t)
    pos = m0 > 0
    K[pos] = t[pos] / m0[pos, None]
    if np.any(~pos):
        fill = m1 if reference_kernel is None else np.asarray(
            reference_kernel.kernel if isinstance(reference_kernel, MarkovChain) else reference_kernel)
        K[~pos] = fill[~pos] if np.ndim(fill) == 2 else fill
    K /= K.sum(axis=1, keepdims=True)
    grid = plan.grids[0]
    st = m0 / m0.sum()
    if np.max(np.abs(st @ K - st)) > 1e-10:
        # marginals agree only to solver tolerance: use the exact invariant law
        return MarkovChain(grid, K)
    return MarkovChain(grid, K, DiscreteMeasure(grid, st))


@dataclass(frozen=True)
class StationaryEotResult:
    """Worst case when the stationary law may move inside a KL ball.

    Unpacks as ``(value, plan, nu_star)``.
    """

    value: float
    plan: Coupling
    nu_star: DiscreteMeasure
    eta: float
    dual_value: float
    potentials: Potentials

    def __iter__(self):
        return iter((self.value, self.plan, self.nu_star))


def stationary_dual_objective(phi1, phi2, eta, cost: CostTensor, nu0: DiscreteMeasure, f0: Coupling,
                              lambda_kl, delta1) -> float:
    """Dual objective for the stationary-law perturbation.

    ``-eta log E_{nu0} exp(-(phi1 + phi2) / eta) - eta delta1
    - lam E_{f0} exp((phi1 (+) phi2 - c) / lam) + lam``, with both
    potentials evaluated at the same state inside the first expectation.
    """
    lam = _check_lambda(lambda_kl)
    h = np.asarray(phi1) + np.asarray(phi2)
    w = nu0.weights
    s = w > 0
    if eta > 0:
        tilt = -eta * (logsumexp(-h[s] / eta, b=w[s])) - eta * delta1
    else:
        tilt = float(np.min(h[s]))
    tot = np.asarray(phi1)[:, None] + np.asarray(phi2)[None, :]
    mask = f0.tensor > 0
    expo = (tot[mask] - cost.values[mask]) / lam
    m = expo.max()
    integral = float(np.exp(m) * np.sum(f0.tensor[mask] * np.exp(expo - m)))
    return float(tilt - lam * integral + lam)


class _StationaryInner:
    """Minimizes ``C(nu) + eta KL(nu || nu0)`` by entropic mirror descent."""

    def __init__(self, cost, nu0, f0, lam, tol, max_iter):
        self.cost = cost
        self.nu0 = nu0
        self.f0 = f0
        self.lam = lam
        self.tol = tol
        self.max_iter = max_iter
        self.log_nu0 = _safe_log(nu0.weights)
        self.absorbed = absorb_reference(cost, f0, lam)
        self.support = nu0.weights > 0
        self.prod = product_coupling([marginal(f0, 0), marginal(f0, 1)]).tensor
        self._init = None

    def eot(self, nu):
        grid = self.nu0.grid
        m = DiscreteMeasure(grid, nu)
        ref = self.prod
        sol = sinkhorn(self.absorbed, [m, m], self.lam, tol=self.tol, reference=ref, init=self._init)
        self._init = list(sol.potentials)
        return sol

    def minimize(self, eta, log_nu):
        nu = np.exp(log_nu - logsumexp(log_nu))
        sol = self.eot(nu)
        G = sol.value + eta * kl_divergence(nu, self.nu0.weights)
        step = 1.0
        for _ in range(self.max_iter):
            h = sol.potentials[0] + sol.potentials[1]
            target = np.where(self.support, self.log_nu0 - h / eta, -np.inf)
            target -= logsumexp(target[self.support])
            improved = False
            while step > 1e-12:
                with np.errstate(invalid="ignore"):
                    cand = np.where(self.support, (1 - step) * log_nu + step * target, -np.inf)
                cand = np.where(np.isnan(cand), -np.inf, cand)
                cand -= logsumexp(cand[self.support])
                cnu = np.exp(cand)
                csol = self.eot(cnu)
                cG = csol.value + eta * kl_divergence(cnu, self.nu0.weights)
                if cG <= G + 1e-15 * max(1.0, abs(G)):
                    improved = True
                    break
                step *= 0.5
            if not improved:
                break
            move = np.max(np.abs(np.exp(cand) - nu))
            dG = G - cG
            log_nu, nu, sol, G = cand, cnu, csol, cG
            step = min(1.0, 2 * step)
            if move < self.tol or dG < self.tol * 1e-3 * max(1.0, abs(G)):
                break
        kl = kl_divergence(nu, self.nu0.weights)
        return log_nu, nu, sol, G, kl


def stationary_perturbed_eot(cost: CostTensor, nu0: DiscreteMeasure, f0: Coupling, lambda_kl,
                             delta1, tol=DEFAULT_TOL, eta_bracket=(1e-6, 1e6),
                             max_iter=500) -> StationaryEotResult:
    """EOT over couplings in ``Pi(nu, nu)`` with ``KL(nu || nu0) <= delta1``.

    For a fixed multiplier ``eta`` the stationary law is updated by
    entropic mirror steps toward ``nu0 * exp(-(phi1 + phi2) / eta)``, with
    a Sinkhorn solve for the potentials at each candidate.  The multiplier
    is chosen by golden-section search on ``log eta`` over ``eta_bracket``
    and finally moved by bisection onto the feasible side of the KL ball.

    Returns
    -------
    StationaryEotResult
        ``value`` is the primal objective at the returned feasible pair
        ``(plan, nu_star)``; ``dual_value`` is the dual objective.
    """
    lam = _check_lambda(lambda_kl)
    delta1 = float(delta1)
    if delta1 < 0:
        raise DomainError("delta1 must be nonnegative")
    if cost.k != 2 or cost.grids[0] != cost.grids[1]:
        raise DimensionError("stationary perturbation needs a square two-way cost")
    inner = _StationaryInner(cost, nu0, f0, lam, min(tol, 1e-10), max_iter)
    if delta1 == 0.0:
        sol = inner.eot(nu0.weights)
        return StationaryEotResult(sol.value, sol.plan, nu0, np.inf, sol.value, sol.potentials)

    cache = {}
    state = {"log_nu": inner.log_nu0.copy()}

    def evaluate(log_eta):
        if log_eta in cache:
            return cache[log_eta]
        eta = float(np.exp(log_eta))
        log_nu, nu, sol, G, kl = inner.minimize(eta, state["log_nu"])
        state["log_nu"] = log_nu
        out = (G - eta * delta1, nu, sol, kl)
        cache[log_eta] = out
        return out

    lo, hi = np.log(eta_bracket[0]), np.log(eta_bracket[1])
    # unconstrained optimum already inside the ball
    g_lo, nu_lo, sol_lo, kl_lo = evaluate(lo)
    if kl_lo <= delta1:
        eta, nu, sol = float(np.exp(lo)), nu_lo, sol_lo
        dual = g_lo
    else:
        invphi = (np.sqrt(5.0) - 1.0) / 2.0
        a, b = lo, hi
        c = b - invphi * (b - a)
        d = a + invphi * (b - a)
        fc, fd = evaluate(c)[0], evaluate(d)[0]
        while b - a > 1e-4:
            if fc > fd:
                b, d, fd = d, c, fc
                c = b - invphi * (b - a)
                fc = evaluate(c)[0]
            else:
                a, c, fc = c, d, fd
                d = a + invphi * (b - a)
                fd = evaluate(d)[0]
        best = c if fc > fd else d
        dual = max(fc, fd)
        # move to the feasible side: KL(nu_eta) is nonincreasing in eta
        a, b = best, hi
        g_a, nu_a, sol_a, kl_a = evaluate(a)
        if kl_a <= delta1 + 1e-12:
            eta, nu, sol = float(np.exp(a)), nu_a, sol_a
        else:
            g_b, nu_b, sol_b, kl_b = evaluate(b)
            if kl_b > delta1 + 1e-12:
                raise ConvergenceError("no feasible stationary law in the eta bracket", kl_b - delta1, 0)
            for _ in range(200):
                if b - a < 1e-12:
                    break
                mid = 0.5 * (a + b)
                gm, nm, sm, km = evaluate(mid)
                if km <= delta1 + 1e-12:
                    b, nu_b, sol_b = mid, nm, sm
                    if delta1 - km < 1e-9 * max(delta1, 1e-12):
                        break
                else:
                    a = mid
            eta, nu, sol = float(np.exp(b)), nu_b, sol_b
    nu_star = DiscreteMeasure(nu0.grid, nu)
    value = primal_value(sol.plan, cost, f0, lam)
    return StationaryEotResult(value, sol.plan, nu_star, eta, float(dual), sol.potentials)
