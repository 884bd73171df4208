"""Simulated-annealing Metropolis search over multipliers with pooled results.

Every evaluated candidate goes into a shared ``ResultStore``.  A bound at
radius ``delta`` is the best scalar among stored candidates that satisfy
the constraints at that radius, so results computed while searching one
radius (or one direction) serve every other radius.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import RobustDynError
from .config import BoundCurve, BoundRecord, SensitivityConfig

log = logging.getLogger(__name__)


@dataclass
class Evaluation:
    """One candidate: multipliers, the plan they induce and its diagnostics."""

    params: np.ndarray
    scalar: float
    kl: float
    violation: float
    plan: object = None
    state: object = None
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return bool(np.isfinite(self.scalar) and np.isfinite(self.kl) and np.isfinite(self.violation))


class ResultStore:
    """Archive of evaluations, queried by radius and direction."""

    def __init__(self, violation_threshold=0.005, kl_rtol=1e-6, kl_atol=0.0):
        self.items = []
        self.violation_threshold = float(violation_threshold)
        self.kl_rtol = kl_rtol
        self.kl_atol = kl_atol
        self.reference = None

    def __len__(self):
        return len(self.items)

    def add(self, ev: Evaluation):
        if ev.ok:
            self.items.append(ev)
        return ev

    def _arrays(self):
        s = np.array([e.scalar for e in self.items])
        k = np.array([e.kl for e in self.items])
        v = np.array([e.violation for e in self.items])
        return s, k, v

    def feasible_mask(self, delta):
        if not self.items:
            return np.zeros(0, dtype=bool)
        _, k, v = self._arrays()
        return (k <= delta * (1 + self.kl_rtol) + self.kl_atol) & (v <= self.violation_threshold)

    def best(self, delta, direction="lower"):
        """Best feasible evaluation at ``delta`` or ``None``."""
        mask = self.feasible_mask(delta)
        if not np.any(mask):
            return None
        s, k, _ = self._arrays()
        obj = s if direction == "lower" else -s
        obj = np.where(mask, obj, np.inf)
        # ties go to the smaller divergence
        best = np.lexsort((k, obj))[0]
        return self.items[best]

    def closest(self, s_bar=None, direction="lower"):
        """Smallest divergence among candidates past the threshold (or all feasible ones)."""
        if not self.items:
            return None
        s, k, v = self._arrays()
        mask = v <= self.violation_threshold
        if s_bar is not None:
            mask &= (s <= s_bar) if direction == "lower" else (s >= s_bar)
        if not np.any(mask):
            return None
        return self.items[int(np.argmin(np.where(mask, k, np.inf)))]


class AdaptiveWalk:
    """Gaussian random walk with diagonal vanishing adaptation.

    Running means and variances track the chain with gain ``t^-a``; a global
    log-scale moves toward the target acceptance rate.  Both are kept inside
    fixed bounds so a flat target cannot blow the proposal up.
    """

    max_log_scale = 10.0
    max_var = 1e8

    def __init__(self, dim, initial_step=0.5, target=0.234, exponent=0.6):
        self.dim = dim
        self.mean = np.zeros(dim)
        self.var = np.full(dim, initial_step ** 2)
        self.log_scale = 0.0
        self.target = target
        self.exponent = exponent
        self.t = 0

    def propose(self, x, rng):
        sd = np.sqrt(np.exp(self.log_scale) * self.var)
        return x + sd * rng.standard_normal(self.dim)

    def adapt(self, x, accept_prob):
        self.t += 1
        g = (self.t + 1.0) ** (-self.exponent)
        d = x - self.mean
        self.mean = self.mean + g * d
        self.var = np.clip(self.var + g * (d * d - self.var), 1e-12, self.max_var)
        self.log_scale = float(np.clip(self.log_scale + g * (accept_prob - self.target),
                                       -self.max_log_scale, self.max_log_scale))


def _safe_evaluate(problem, params, state, mode, direction="lower"):
    try:
        return problem.evaluate(params, state=state, mode=mode, direction=direction)
    except (RobustDynError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.debug("candidate rejected: %s", exc)
        return None


def _log_prior(x, sd):
    return -0.5 * float(np.sum((x / sd) ** 2))


def _reference(problem, store):
    if store.reference is None:
        ref = problem.reference()
        store.reference = ref
        store.add(ref)
    return store.reference


def _chain(problem, config, store, rng, start: Evaluation, objective, outer_step, mode="bound", direction="lower"):
    """One annealed Metropolis run of ``config.mcmc_steps`` proposals."""
    x, fx, state = start.params.copy(), objective(start), start.state
    walk = AdaptiveWalk(x.size, config.initial_step, config.target_accept, config.adapt_exponent)
    walk.mean = x.copy()
    accepted = 0
    for t in range(1, config.mcmc_steps + 1):
        y = walk.propose(x, rng)
        if not np.all(np.isfinite(y)):
            walk.adapt(x, 0.0)
            continue
        ev = _safe_evaluate(problem, y, state, mode, direction)
        if ev is None or not ev.ok:
            walk.adapt(x, 0.0)
            continue
        store.add(ev)
        fy = objective(ev)
        temp = config.temperature(outer_step, t)
        log_a = -(fy - fx) * temp + _log_prior(y, config.prior_sd) - _log_prior(x, config.prior_sd)
        if math.isnan(log_a):
            walk.adapt(x, 0.0)
            continue
        a = 1.0 if log_a >= 0 else math.exp(log_a)
        if rng.random() < a:
            x, fx, state = y, fy, ev.state
            accepted += 1
        walk.adapt(x, a)
    return accepted / config.mcmc_steps


def anneal_optimize(problem, config: SensitivityConfig, direction="lower", store=None, stream=0,
                    callback=None) -> BoundCurve:
    """Bounds over ``config.radii`` for one direction.

    For every outer step and radius the chain starts from the best stored
    candidate feasible at that radius and minimizes the penalized scalar
    (negated for upper bounds).  Penalties apply when the violation exceeds
    ``violation_threshold`` or the divergence exceeds the radius.
    """
    if direction not in ("lower", "upper"):
        raise ValueError("direction is 'lower' or 'upper'")
    store = store if store is not None else ResultStore(config.violation_threshold, config.kl_rtol)
    rng = np.random.default_rng([config.seed, stream, 0 if direction == "lower" else 1])
    ref = _reference(problem, store)
    sign = 1.0 if direction == "lower" else -1.0
    for j in range(1, config.opt_steps + 1):
        for delta in config.radii:
            start = store.best(delta, direction) or ref

            def objective(ev, delta=delta):
                f = sign * ev.scalar
                if ev.violation > config.violation_threshold:
                    f += config.penalty
                if ev.kl > delta * (1 + config.kl_rtol) + store.kl_atol:
                    f += config.penalty
                return f

            rate = _chain(problem, config, store, rng, start, objective, j, direction=direction)
            if callback is not None:
                callback(j, delta, rate, store)
    return curve_from_store(store, config, directions=(direction,))


def curve_from_store(store: ResultStore, config: SensitivityConfig, directions=("lower", "upper")):
    """Read bounds off the archive at every radius."""
    recs = []
    for delta in config.radii:
        kw = {}
        for side in ("lower", "upper"):
            if side not in directions:
                continue
            ev = store.best(delta, side)
            if ev is None:
                kw["feasible_" + side] = False
                continue
            kw[side] = float(ev.scalar)
            kw["kl_" + side] = float(ev.kl)
            kw["binding_" + side] = bool(delta > 0 and ev.kl > config.binding_ratio * delta)
        recs.append(BoundRecord(float(delta), **kw))
    return BoundCurve(tuple(recs))


def bound_curve(problem, config: SensitivityConfig, directions=("lower", "upper"), store=None, callback=None):
    """Run both directions on a shared archive and read the merged curve."""
    store = store if store is not None else ResultStore(config.violation_threshold, config.kl_rtol)
    for d in directions:
        anneal_optimize(problem, config, d, store=store, callback=callback)
    return curve_from_store(store, config, directions), store


@dataclass(frozen=True)
class RobustnessResult:
    delta: float
    feasible: bool
    evaluation: Evaluation | None

    @property
    def scalar(self):
        return None if self.evaluation is None else self.evaluation.scalar


def _min_kl_search(problem, config, store, accept_point, direction, mode):
    rng = np.random.default_rng([config.seed, 7, 0 if direction == "lower" else 1])
    ref = _reference(problem, store)

    def objective(ev):
        f = ev.kl
        if ev.violation > config.violation_threshold:
            f += config.penalty
        if not accept_point(ev):
            f += config.penalty
        return f

    for j in range(1, config.opt_steps + 1):
        cands = [e for e in store.items if accept_point(e) and e.violation <= config.violation_threshold]
        start = min(cands, key=lambda e: e.kl) if cands else ref
        _chain(problem, config, store, rng, start, objective, j, mode=mode, direction=direction)


def robustness_metric(problem, s_bar, config: SensitivityConfig, direction="lower", store=None,
                      mode="bound") -> RobustnessResult:
    """Smallest divergence at which the scalar can reach ``s_bar``.

    ``direction='lower'`` looks for ``scalar <= s_bar``; ``'upper'`` for
    ``scalar >= s_bar``.  Infeasible when no candidate crosses the threshold.
    """
    store = store if store is not None else ResultStore(config.violation_threshold, config.kl_rtol)
    ref = _reference(problem, store)
    crossed = (lambda e: e.scalar <= s_bar) if direction == "lower" else (lambda e: e.scalar >= s_bar)
    if crossed(ref) and ref.violation <= config.violation_threshold:
        return RobustnessResult(0.0, True, ref)
    _min_kl_search(problem, config, store, crossed, direction, mode)
    ev = store.closest(s_bar, direction)
    if ev is None:
        return RobustnessResult(float("inf"), False, None)
    return RobustnessResult(float(ev.kl), True, ev)


def delta_star(problem, config: SensitivityConfig, store=None, mode="bound") -> RobustnessResult:
    """Smallest divergence at which the constraints can be met."""
    store = store if store is not None else ResultStore(config.violation_threshold, config.kl_rtol)
    ref = _reference(problem, store)
    if ref.violation <= config.violation_threshold:
        return RobustnessResult(0.0, True, ref)
    _min_kl_search(problem, config, store, lambda e: True, "lower", mode)
    ev = store.closest(None)
    if ev is None:
        return RobustnessResult(float("inf"), False, None)
    return RobustnessResult(float(ev.kl), True, ev)
