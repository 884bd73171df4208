"""Cost assembly, inner dual values and closed-form sensitivity summaries."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..bridge import PairwiseCost, PathLaw, auxiliary_endpoint, static_bridge
from ..eot import CostTensor, solve_against_scaled
from ..errors import DimensionError, DomainError
from ..measures import Coupling, DiscreteMeasure, marginal
from .config import BoundCurve, DualVariables, GlobalBoundParams


def _values(term, shape=None):
    if term is None:
        return None
    v = term.values if isinstance(term, CostTensor) else np.asarray(term, dtype=float)
    if shape is not None and v.shape != tuple(shape):
        raise DimensionError(f"term of shape {v.shape} does not live on grid {tuple(shape)}")
    return v


def assemble_cost(scalar_term, moment_terms, structural_terms, duals: DualVariables, grids=None,
                  mode="bound") -> CostTensor:
    """Entrywise cost ``s + lam' m + psi`` on a product grid.

    Parameters
    ----------
    scalar_term : CostTensor or ndarray
        ``s`` on the grid.
    moment_terms : ndarray, optional
        Stacked moment residuals, shape ``(d_P,) + grid``.
    structural_terms : ndarray, optional
        Multiplier-weighted structural residual ``psi`` on the grid.
    duals : DualVariables
    grids : sequence of Grid, optional
        Needed when ``scalar_term`` is a bare array.
    mode : {'bound', 'robustness'}
        ``robustness`` returns ``lam' m + lambda_s s + psi``.
    """
    if isinstance(scalar_term, CostTensor):
        grids = scalar_term.grids
    if grids is None:
        raise DimensionError("grids are required with a bare array cost")
    s = _values(scalar_term)
    shape = s.shape
    out = (duals.lambda_s * s) if mode == "robustness" else s.copy()
    if mode not in ("bound", "robustness"):
        raise DomainError(f"unknown mode {mode!r}")
    m = _values(moment_terms)
    if m is not None:
        if m.shape[1:] != shape:
            raise DimensionError("moment terms do not live on the cost grid")
        if duals.lam.size != m.shape[0]:
            raise DimensionError("one multiplier per moment")
        out = out + np.tensordot(duals.lam, m, axes=1)
    elif duals.lam.size:
        raise DimensionError("multipliers given without moment terms")
    psi = _values(structural_terms, shape)
    if psi is not None:
        out = out + psi
    return CostTensor(tuple(grids), out)


@dataclass(frozen=True)
class InnerContext:
    """Everything the inner entropic problem needs besides the multipliers.

    For ``kind='eot'`` the reference is a ``Coupling``; for ``kind='bridge'``
    it is a ``PathLaw`` and the terms are per-step pairwise costs stacked on
    a leading time axis.
    """

    reference: object
    scalar: np.ndarray
    moments: np.ndarray | None = None
    structural: np.ndarray | None = None
    marginals: tuple | None = None
    kind: str = "eot"
    tol: float = 1e-10
    max_iter: int = 100_000


def _bridge_value(ctx, c_steps, lam):
    f0: PathLaw = ctx.reference
    cost = PairwiseCost(tuple(np.asarray(c) for c in c_steps))
    R = auxiliary_endpoint(f0, cost, lam)
    nu1, nuT = (ctx.marginals if ctx.marginals is not None else (f0.initial, f0.terminal))
    return static_bridge(R, nu1, nuT, lam, tol=ctx.tol, max_iter=ctx.max_iter)


def inner_dual_value(duals: DualVariables, context: InnerContext, delta=0.0, targets=None, mode="bound",
                     threshold=None, lambda_kl_floor=1e-8, return_solution=False):
    """Dual objective at fixed multipliers.

    ``bound`` mode: ``C(lam, lambda_kl) - lambda_kl * delta - lam' P`` with
    ``lambda_kl`` floored at ``lambda_kl_floor``.  ``robustness`` mode: the
    entropic problem has unit regularization and the value is
    ``C(lam, lambda_s) - lam' P - lambda_s * threshold``.
    """
    lam_kl = 1.0 if mode == "robustness" else max(duals.lambda_kl, lambda_kl_floor)
    P = np.zeros(duals.lam.size) if targets is None else np.asarray(targets, dtype=float).ravel()
    if P.size != duals.lam.size:
        raise DimensionError("one target per moment multiplier")
    if context.kind == "eot":
        f0: Coupling = context.reference
        cost = assemble_cost(context.scalar, context.moments, context.structural, duals, f0.grids, mode)
        margs = context.marginals or tuple(marginal(f0, i) for i in range(f0.k))
        sol = solve_against_scaled(cost, f0, lam_kl, margs, tol=context.tol, max_iter=context.max_iter)
    elif context.kind == "bridge":
        s = np.asarray(context.scalar, dtype=float)
        c = (duals.lambda_s * s) if mode == "robustness" else s.copy()
        if context.moments is not None:
            c = c + np.tensordot(duals.lam, np.asarray(context.moments), axes=1)
        if context.structural is not None:
            c = c + np.asarray(context.structural)
        sol = _bridge_value(context, list(c), lam_kl)
    else:
        raise DomainError(f"unknown inner problem kind {context.kind!r}")
    value = sol.value - float(duals.lam @ P)
    if mode == "robustness":
        if threshold is not None:
            value -= duals.lambda_s * float(threshold)
    else:
        value -= lam_kl * float(delta)
    return (value, sol) if return_solution else value


def global_bound(params: GlobalBoundParams, lambda_kl) -> float:
    """Entropic approximation error bound
    ``(sum d_i) lam log(1/lam) + (k-1)^(1/p) L C lam`` for ``lam`` in (0, 1]."""
    lam = float(lambda_kl)
    if not 0 < lam <= 1:
        raise DomainError("lambda_kl must lie in (0, 1]")
    k_minus_1 = len(params.dims)
    return float(sum(params.dims) * lam * np.log(1.0 / lam) + k_minus_1 ** (1.0 / params.p) * params.L * params.C * lam)


def cost_regularity(cost: CostTensor, p=1):
    """Lipschitz constant of a grid cost (l1 grid metric) and the support diameter."""
    pts = np.array(list(itertools.product(*[g.points for g in cost.grids])))
    vals = cost.values.ravel()
    d = np.abs(pts[:, None, :] - pts[None, :, :]).sum(axis=2)
    dv = np.abs(vals[:, None] - vals[None, :])
    off = d > 0
    L = float(np.max(dv[off] / d[off])) if np.any(off) else 0.0
    return GlobalBoundParams(L=L, C=float(d.max()), p=p, dims=tuple(1 for _ in cost.grids[1:]))


def local_sensitivity(curve: BoundCurve, delta0=0.0):
    """Right finite-difference slopes of the lower and upper bounds at ``delta0``.

    Uses the two smallest radii at or above ``delta0``.  A missing side
    returns ``None``.
    """
    d = curve.deltas
    idx = np.flatnonzero(d >= delta0)
    if idx.size < 2:
        raise DomainError("need two radii at or above delta0")
    a, b = idx[0], idx[1]
    h = d[b] - d[a]
    if h <= 0:
        raise DomainError("radii must differ")
    out = []
    for col in (curve.lowers, curve.uppers):
        if np.isnan(col[a]) or np.isnan(col[b]):
            out.append(None)
        else:
            out.append(float((col[b] - col[a]) / h))
    return tuple(out)


def global_summary(curve: BoundCurve, rtol=1e-3, params: GlobalBoundParams | None = None, lambda_kl=None):
    """Flattening check on the last two radii, plus the approximation bound when parameters are given."""
    rep = {"flattened": curve.flattened(rtol),
           "lower": float(curve.lowers[-1]) if len(curve) else None,
           "upper": float(curve.uppers[-1]) if len(curve) else None}
    if params is not None and lambda_kl is not None:
        rep["approximation_bound"] = global_bound(params, lambda_kl)
    return rep
