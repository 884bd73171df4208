"""Fixed-endpoint perturbations of time-inhomogeneous Markov path laws.

With a pairwise-additive path cost the EOT problem over path laws with
fixed initial and terminal marginals reduces to a two-marginal problem on
the endpoints against the auxiliary measure

    R(x1, xT) = sum over interior paths of exp(-c(U) / lam) dF0(U),

and the optimal path law is Markov with kernels obtained by backward
message passing.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .eot import (
    DEFAULT_TOL,
    EotSolution,
    Potentials,
    _check_lambda,
    _gauge,
    _lse,
    _safe_log,
    _sinkhorn_core,
)
from .errors import ConvergenceError, DimensionError, DomainError, NumericalError, SupportError
from .measures import Coupling, DiscreteMeasure, Grid, _row_normalized, kl_divergence

MAX_HORIZON = 64
MAX_STATES = 256


@dataclass(frozen=True)
class PathLaw:
    """Markov law of ``(x_1, ..., x_T)`` with possibly time-varying kernels.

    Attributes
    ----------
    grid : Grid
    initial : DiscreteMeasure
    kernels : tuple of ndarray
        ``T - 1`` row-stochastic matrices, ``kernels[t][i, j] = P(x_{t+2}=j | x_{t+1}=i)``.
    """

    grid: Grid
    initial: DiscreteMeasure
    kernels: tuple

    def __post_init__(self):
        grid = self.grid if isinstance(self.grid, Grid) else Grid(self.grid)
        init = self.initial if isinstance(self.initial, DiscreteMeasure) else DiscreteMeasure(grid, self.initial)
        if init.grid != grid:
            raise DimensionError("initial law lives on a different grid")
        ks = []
        for K in self.kernels:
            K = _row_normalized(K, "path kernel")
            if K.shape[0] != len(grid):
                raise DimensionError("kernel size does not match grid")
            K.setflags(write=False)
            ks.append(K)
        if not ks:
            raise DimensionError("a path law needs at least one transition")
        if len(ks) + 1 > MAX_HORIZON or len(grid) > MAX_STATES:
            raise DimensionError(f"path laws are capped at T <= {MAX_HORIZON}, n <= {MAX_STATES}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "kernels", tuple(ks))

    @property
    def T(self):
        return len(self.kernels) + 1

    def marginals(self):
        """Per-period marginal laws, ``T`` arrays."""
        out = [self.initial.weights]
        for K in self.kernels:
            out.append(out[-1] @ K)
        return out

    @property
    def terminal(self):
        return DiscreteMeasure(self.grid, self.marginals()[-1])

    def endpoint_coupling(self):
        """Joint law of ``(x_1, x_T)``."""
        M = np.diag(self.initial.weights)
        for K in self.kernels:
            M = M @ K
        return Coupling((self.grid, self.grid), M)

    def path_tensor(self):
        """Full ``n^T`` path probability tensor (small problems only)."""
        t = self.initial.weights
        for K in self.kernels:
            t = t[..., None] * K.reshape((1,) * (t.ndim - 1) + K.shape)
        return t

    def to_dict(self):
        return {
            "grid": self.grid.to_list(),
            "initial": self.initial.weights.tolist(),
            "kernels": [K.tolist() for K in self.kernels],
            "terminal": self.terminal.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        grid = Grid(d["grid"])
        return cls(grid, DiscreteMeasure(grid, d["initial"]), tuple(np.asarray(K, dtype=float) for K in d["kernels"]))


@dataclass(frozen=True)
class PairwiseCost:
    """Path cost ``sum_t c_t(x_t, x_{t+1})``."""

    costs: tuple

    def __post_init__(self):
        cs = []
        for c in self.costs:
            c = np.array(c, dtype=float)
            if c.ndim != 2 or not np.all(np.isfinite(c)):
                raise DomainError("pairwise costs must be finite matrices")
            c.setflags(write=False)
            cs.append(c)
        object.__setattr__(self, "costs", tuple(cs))

    def __len__(self):
        return len(self.costs)

    @classmethod
    def zeros(cls, law: PathLaw):
        n = len(law.grid)
        return cls(tuple(np.zeros((n, n)) for _ in law.kernels))

    def path_tensor(self):
        """Total cost on the full path grid (small problems only)."""
        T = len(self.costs) + 1
        out = 0.0
        for t, c in enumerate(self.costs):
            shape = [1] * T
            shape[t], shape[t + 1] = c.shape
            out = out + c.reshape(shape)
        return out

    def to_dict(self):
        return {"costs": [c.tolist() for c in self.costs]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(np.asarray(c, dtype=float) for c in d["costs"]))


@dataclass(frozen=True)
class EndpointMeasure:
    """Unnormalized endpoint reference, stored on the log scale."""

    grid: Grid
    log_tensor: np.ndarray

    @property
    def tensor(self):
        return np.exp(self.log_tensor)


def _check_pair(f0: PathLaw, cost: PairwiseCost):
    if len(cost) != len(f0.kernels):
        raise DimensionError(f"cost has {len(cost)} steps, path law has {len(f0.kernels)}")
    n = len(f0.grid)
    for c in cost.costs:
        if c.shape != (n, n):
            raise DimensionError("cost matrix shape does not match the grid")


def _log_matmul(A, B):
    return _lse(A[:, :, None] + B[None, :, :], 1)


def auxiliary_endpoint(f0: PathLaw, cost: PairwiseCost, lambda_kl) -> EndpointMeasure:
    """Auxiliary endpoint reference by forward message passing.

    ``R = diag(nu_1) prod_t (K_t * exp(-c_t / lam))`` evaluated in the log
    domain.
    """
    lam = _check_lambda(lambda_kl)
    _check_pair(f0, cost)
    n = len(f0.grid)
    L = np.full((n, n), -np.inf)
    np.fill_diagonal(L, _safe_log(f0.initial.weights))
    for K, c in zip(f0.kernels, cost.costs):
        L = _log_matmul(L, _safe_log(K) - c / lam)
    return EndpointMeasure(f0.grid, L)


def static_bridge(r: EndpointMeasure, nu1: DiscreteMeasure, nuT: DiscreteMeasure, lambda_kl,
                  tol=DEFAULT_TOL, max_iter=100_000, init=None) -> EotSolution:
    """Two-marginal Sinkhorn against the unnormalized endpoint reference.

    Minimizes ``lam * sum F log(F / R)`` over couplings of ``(nu1, nuT)``.
    The returned value equals the path-space EOT value.
    """
    lam = _check_lambda(lambda_kl)
    L = np.asarray(r.log_tensor, dtype=float)
    margs = [nu1.weights, nuT.weights]
    if L.shape != (len(nu1), len(nuT)):
        raise DimensionError("endpoint reference does not match marginals")
    need = np.multiply.outer(margs[0] > 0, margs[1] > 0)
    bad = need & ~np.isfinite(L)
    if np.any(bad):
        i, j = np.argwhere(bad)[0]
        raise SupportError(f"endpoint reference vanishes at cell ({i}, {j}) inside the marginal support")
    phis, plan, it, err = _sinkhorn_core(np.zeros_like(L), L, margs, lam, tol, max_iter, init)
    phis, value = _gauge(phis, margs)
    grid = r.grid
    total = plan.sum()
    if abs(total - 1.0) >= 1e-9:
        raise ConvergenceError("endpoint plan mass drifted away from one", abs(total - 1.0), it)
    return EotSolution(Potentials(phis), Coupling((grid, grid), plan), float(value), it, err, lam)


def reconstruct_path_law(f0: PathLaw, cost: PairwiseCost, potentials, lambda_kl) -> PathLaw:
    """Markov worst-case path law from endpoint potentials.

    Backward messages ``beta_T = exp(phi_T / lam)`` and
    ``beta_t = (K_t * exp(-c_t / lam)) beta_{t+1}`` give kernels
    ``K_t*(x, y) = K_t(x, y) exp(-c_t(x, y) / lam) beta_{t+1}(y) / beta_t(x)``.
    The initial law stays at ``nu_1``.
    """
    lam = _check_lambda(lambda_kl)
    _check_pair(f0, cost)
    phis = list(potentials)
    log_beta = np.asarray(phis[-1], dtype=float) / lam
    kernels = []
    support = f0.initial.weights > 0
    for K, c in zip(reversed(f0.kernels), reversed(cost.costs)):
        logM = _safe_log(K) - c / lam
        S = logM + log_beta[None, :]
        prev = _lse(S, 1)
        if np.any(~np.isfinite(prev)):
            raise NumericalError("backward message vanished")
        newK = np.exp(S - prev[:, None])
        kernels.append(newK / newK.sum(axis=1, keepdims=True))
        log_beta = prev
    kernels.reverse()
    if np.any(~np.isfinite(log_beta[support])):
        raise NumericalError("backward message vanished on the initial support")
    return PathLaw(f0.grid, f0.initial, tuple(kernels))


def path_kl(f: PathLaw, f0: PathLaw) -> float:
    """KL divergence between two Markov path laws via the chain rule."""
    total = kl_divergence(f.initial, f0.initial)
    marg = f.initial.weights
    for K, K0 in zip(f.kernels, f0.kernels):
        pos = K > 0
        if np.any(pos & (K0 <= 0) & (marg[:, None] > 0)):
            return float("inf")
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(pos, K * (np.log(np.where(pos, K, 1.0)) - np.log(np.where(pos, K0, 1.0))), 0.0)
        total += float(marg @ terms.sum(axis=1))
        marg = marg @ K
    return max(total, 0.0)


def path_expectation(f: PathLaw, cost: PairwiseCost) -> float:
    """``E_f[sum_t c_t(x_t, x_{t+1})]``."""
    total = 0.0
    for mu, K, c in zip(f.marginals()[:-1], f.kernels, cost.costs):
        total += float(mu @ np.sum(K * c, axis=1))
    return total


def _tilt_in_ball(grad, nu1, delta1):
    """Minimize ``<grad, nu>`` over ``KL(nu || nu1) <= delta1``."""
    w = nu1.weights
    s = w > 0
    g = np.where(s, grad, np.inf)
    gmin = g[s].min()
    vertex = s & (g <= gmin + 1e-14 * max(1.0, abs(gmin)))
    # mass of nu1 on the minimizing face; the face itself is the answer if close enough
    face = w[vertex].sum()
    if -np.log(face) <= delta1:
        out = np.where(vertex, w, 0.0)
        return out / out.sum()
    logw = _safe_log(w)

    def tilt(log_tau):
        lt = np.where(s, logw - (g - gmin) / np.exp(log_tau), -np.inf)
        lt -= logsumexp(lt[s])
        return np.exp(lt)

    lo, hi = -60.0, 60.0
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        if kl_divergence(tilt(mid), w) > delta1:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return tilt(hi)


def initial_perturbed_bridge(f0: PathLaw, cost: PairwiseCost, lambda_kl, delta1, nuT: DiscreteMeasure,
                             tol=1e-7, max_iter=5000, sinkhorn_tol=1e-11, callback=None):
    """Path-space EOT when the initial law may move inside a KL ball.

    Frank-Wolfe over the initial law ``nu``.  At each iterate the endpoint
    problem is solved, its first potential serves as the gradient, and the
    linear step over the KL ball is an exponential tilt of ``nu_1``.  Steps
    are ``2 / (it + 2)``, halved when they would increase the objective.
    ``callback(value)`` is called with the objective at every iterate.

    Returns
    -------
    value : float
    nu_star : DiscreteMeasure
    solution : EotSolution
        Endpoint solution at ``nu_star``.
    """
    lam = _check_lambda(lambda_kl)
    delta1 = float(delta1)
    if delta1 < 0:
        raise DomainError("delta1 must be nonnegative")
    R = auxiliary_endpoint(f0, cost, lam)
    nu1 = f0.initial
    grid = f0.grid
    nu = nu1.weights.copy()
    sol = static_bridge(R, DiscreteMeasure(grid, nu), nuT, lam, tol=sinkhorn_tol)
    if delta1 == 0.0:
        return sol.value, nu1, sol
    if callback is not None:
        callback(sol.value)
    gap = np.inf
    for it in range(max_iter):
        grad = np.asarray(sol.potentials[0])
        target = _tilt_in_ball(grad, nu1, delta1)
        s = nu > 0
        gap = float(np.dot(grad[s], nu[s]) - np.dot(grad[target > 0], target[target > 0]))
        if gap < tol:
            break
        gamma = 2.0 / (it + 2.0)
        init = list(sol.potentials)
        while True:
            cand = (1 - gamma) * nu + gamma * target
            csol = static_bridge(R, DiscreteMeasure(grid, cand), nuT, lam, tol=sinkhorn_tol, init=init)
            if csol.value <= sol.value + 1e-13 * max(1.0, abs(sol.value)) or gamma < 1e-12:
                break
            gamma *= 0.5
        if csol.value > sol.value + 1e-13 * max(1.0, abs(sol.value)):
            # no descent left at machine precision
            if gap < 1e3 * tol:
                break
            raise ConvergenceError("Frank-Wolfe stalled above the gap tolerance", gap, it)
        nu, sol = cand, csol
        if callback is not None:
            callback(sol.value)
    else:
        raise ConvergenceError("Frank-Wolfe did not reach the duality-gap tolerance", gap, max_iter)
    return sol.value, DiscreteMeasure(grid, nu), sol


def enumerate_paths(n, T):
    """All state sequences of length ``T`` on ``n`` states."""
    return list(itertools.product(range(n), repeat=T))
