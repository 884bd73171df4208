"""Discrete probability objects on labeled grids.

Grids, measures, couplings and Markov chains are small immutable
containers around numpy arrays.  All weights are stored on the natural
scale; solvers that need logs convert internally.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .errors import ConvergenceError, DimensionError, DomainError

# Deviation of a total mass from one that is silently absorbed by
# renormalization.  Anything larger is treated as a bug upstream.
RENORMALIZE_TOL = 1e-9


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def _normalized(weights, what):
    w = np.asarray(weights, dtype=float)
    if not np.all(np.isfinite(w)):
        raise DomainError(f"{what} contains non-finite entries")
    if np.any(w < 0):
        # tiny negative round-off from differences of CDFs and the like
        if w.min() < -1e-14:
            raise DomainError(f"{what} has negative entries (min {w.min():.3e})")
        w = np.clip(w, 0.0, None)
    total = w.sum()
    if abs(total - 1.0) >= RENORMALIZE_TOL:
        raise DomainError(f"{what} sums to {total!r}, not 1")
    return w / total


@dataclass(frozen=True)
class Grid:
    """Strictly increasing grid of latent-state nodes.

    Attributes
    ----------
    points : ndarray
        Node locations.
    step : float or None
        Common spacing when the grid is uniform, else None.
    """

    points: np.ndarray
    step: float | None = field(default=None, compare=False)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).ravel()
        if pts.size < 2:
            raise DomainError("a grid needs at least two points")
        if not np.all(np.isfinite(pts)):
            raise DomainError("grid points must be finite")
        d = np.diff(pts)
        if np.any(d <= 0):
            raise DomainError("grid points must be strictly increasing")
        object.__setattr__(self, "points", _frozen(pts))
        if self.step is None:
            span = pts[-1] - pts[0]
            if np.allclose(d, d.mean(), rtol=1e-9, atol=1e-12 * max(1.0, abs(span))):
                object.__setattr__(self, "step", float(d.mean()))

    @classmethod
    def uniform(cls, lo, hi, n):
        return cls(np.linspace(lo, hi, int(n)))

    def __len__(self):
        return self.points.size

    def __eq__(self, other):
        if not isinstance(other, Grid):
            return NotImplemented
        return self.points.shape == other.points.shape and np.array_equal(self.points, other.points)

    def __hash__(self):
        return hash(self.points.tobytes())

    def nearest(self, x):
        """Index of the nearest node, ties resolved toward the lower node."""
        x = np.asarray(x, dtype=float)
        pts = self.points
        j = np.clip(np.searchsorted(pts, x), 1, pts.size - 1)
        lo, hi = pts[j - 1], pts[j]
        take_hi = (hi - x) < (x - lo)
        return np.where(take_hi, j, j - 1)

    def to_list(self):
        return self.points.tolist()


def _as_grid(g):
    return g if isinstance(g, Grid) else Grid(g)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability vector attached to a grid."""

    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        grid = _as_grid(self.grid)
        w = np.asarray(self.weights, dtype=float).ravel()
        if w.size != len(grid):
            raise DimensionError(f"{w.size} weights for a grid of {len(grid)} points")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", _frozen(_normalized(w, "measure weights")))

    def __len__(self):
        return self.weights.size

    @property
    def support(self):
        return self.weights > 0

    def expect(self, f):
        """Expectation of a vector of node values."""
        return float(np.dot(self.weights, np.asarray(f, dtype=float)))

    def mean(self):
        return self.expect(self.grid.points)

    def to_dict(self):
        return {"grid": self.grid.to_list(), "weights": self.weights.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(Grid(d["grid"]), d["weights"])


@dataclass(frozen=True)
class Coupling:
    """Joint probability tensor over the product of ``k >= 2`` grids."""

    grids: tuple
    tensor: np.ndarray

    def __post_init__(self):
        grids = tuple(_as_grid(g) for g in self.grids)
        if len(grids) < 2:
            raise DimensionError("a coupling needs at least two grids")
        t = np.asarray(self.tensor, dtype=float)
        shape = tuple(len(g) for g in grids)
        if t.shape != shape:
            if t.size == int(np.prod(shape)):
                t = t.reshape(shape)
            else:
                raise DimensionError(f"tensor shape {t.shape} does not match grids {shape}")
        object.__setattr__(self, "grids", grids)
        object.__setattr__(self, "tensor", _frozen(_normalized(t, "coupling tensor")))

    @property
    def k(self):
        return len(self.grids)

    @property
    def shape(self):
        return self.tensor.shape

    def marginal(self, axis):
        return marginal(self, axis)

    def expect(self, values):
        """Expectation of a tensor of node values (``0 * inf`` counts as 0)."""
        v = np.asarray(values, dtype=float)
        mask = self.tensor > 0
        return float(np.sum(self.tensor[mask] * np.broadcast_to(v, self.shape)[mask]))

    def to_dict(self):
        return {"grids": [g.to_list() for g in self.grids], "tensor": self.tensor.ravel().tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(Grid(g) for g in d["grids"]), np.asarray(d["tensor"], dtype=float))


def stationary_distribution(kernel, tol=1e-12, max_iter=1_000_000):
    """Left fixed vector of a row-stochastic matrix by power iteration.

    Parameters
    ----------
    kernel : ndarray, shape (n, n)
        Row-stochastic transition matrix.
    tol : float
        Stop when the sup-norm change between sweeps falls below ``tol``.
    max_iter : int
        Iteration cap.

    Returns
    -------
    ndarray
        Probability vector ``pi`` with ``pi @ kernel ~= pi``.
    """
    K = np.asarray(kernel, dtype=float)
    pi = np.full(K.shape[0], 1.0 / K.shape[0])
    for it in range(1, max_iter + 1):
        new = pi @ K
        new /= new.sum()
        change = np.max(np.abs(new - pi))
        pi = new
        if change < tol:
            return pi
    raise ConvergenceError("power iteration for the stationary law did not converge", change, max_iter)


def _row_normalized(kernel, what="kernel"):
    K = np.asarray(kernel, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"{what} must be square, got {K.shape}")
    if not np.all(np.isfinite(K)) or K.min() < -1e-14:
        raise DomainError(f"{what} must be finite and nonnegative")
    K = np.clip(K, 0.0, None)
    rows = K.sum(axis=1)
    if np.any(np.abs(rows - 1.0) >= RENORMALIZE_TOL):
        raise DomainError(f"{what} rows must sum to one")
    return K / rows[:, None]


@dataclass(frozen=True)
class MarkovChain:
    """Time-homogeneous finite Markov chain with its stationary law.

    If ``stationary`` is omitted it is computed by power iteration.
    """

    grid: Grid
    kernel: np.ndarray
    stationary: DiscreteMeasure | None = None

    def __post_init__(self):
        grid = _as_grid(self.grid)
        K = _row_normalized(self.kernel)
        if K.shape[0] != len(grid):
            raise DimensionError("kernel size does not match grid")
        st = self.stationary
        if st is None:
            st = DiscreteMeasure(grid, stationary_distribution(K))
        elif not isinstance(st, DiscreteMeasure):
            st = DiscreteMeasure(grid, st)
        gap = np.max(np.abs(st.weights @ K - st.weights))
        if gap > 1e-10:
            raise DomainError(f"stationary law is not invariant under the kernel (gap {gap:.2e})")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "kernel", _frozen(K))
        object.__setattr__(self, "stationary", st)

    def __len__(self):
        return len(self.grid)

    def to_dict(self):
        return {
            "grid": self.grid.to_list(),
            "kernel": self.kernel.tolist(),
            "stationary": self.stationary.weights.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        grid = Grid(d["grid"])
        st = d.get("stationary")
        return cls(grid, np.asarray(d["kernel"], dtype=float),
                   None if st is None else DiscreteMeasure(grid, st))


def kl_divergence(f, f0):
    """Kullback-Leibler divergence ``sum f log(f / f0)``.

    Entries with ``f = 0`` contribute nothing.  Returns ``inf`` when ``f``
    charges a cell where ``f0`` vanishes.

    Parameters
    ----------
    f, f0 : DiscreteMeasure, Coupling or array_like
        Objects of identical shape.
    """
    p = _weights_of(f)
    q = _weights_of(f0)
    if p.shape != q.shape:
        raise DimensionError(f"shape mismatch {p.shape} vs {q.shape}")
    pos = p > 0
    if np.any(q[pos] <= 0):
        return float("inf")
    val = float(np.sum(p[pos] * (np.log(p[pos]) - np.log(q[pos]))))
    return max(val, 0.0)


def _weights_of(x):
    if isinstance(x, DiscreteMeasure):
        return x.weights
    if isinstance(x, Coupling):
        return x.tensor
    return np.asarray(x, dtype=float)


def discretize_ar1(mu, rho, sigma, n_points=51, width=3.0):
    """Tauchen discretization of ``x' = mu + rho x + sigma e``.

    The grid is uniform on the unconditional mean plus or minus ``width``
    unconditional standard deviations.  Transition probabilities are
    normal CDF differences over cells centred on the nodes, with the two
    edge cells open.

    Parameters
    ----------
    mu : float
        Intercept of the autoregression (not the unconditional mean).
    rho : float
        Autoregressive coefficient, ``|rho| < 1``.
    sigma : float
        Innovation standard deviation, positive.
    n_points : int
        Number of nodes, at least 2.
    width : float
        Half-width of the grid in unconditional standard deviations.

    Returns
    -------
    MarkovChain
    """
    if not abs(rho) < 1:
        raise DomainError(f"|rho| must be below 1, got {rho}")
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    if int(n_points) < 2:
        raise DomainError("n_points must be at least 2")
    if not width > 0:
        raise DomainError("width must be positive")
    n = int(n_points)
    center = mu / (1.0 - rho)
    sd = sigma / np.sqrt(1.0 - rho * rho)
    x = np.linspace(center - width * sd, center + width * sd, n)
    h = x[1] - x[0]
    cond = mu + rho * x
    edges = np.concatenate(([-np.inf], x[:-1] + h / 2, [np.inf]))
    lo = (edges[None, :-1] - cond[:, None]) / sigma
    hi = (edges[None, 1:] - cond[:, None]) / sigma
    # upper tail cells through survival functions to keep tiny masses exact
    K = np.where(lo > 0, norm.sf(lo) - norm.sf(hi), norm.cdf(hi) - norm.cdf(lo))
    K = np.clip(K, 0.0, None)
    K /= K.sum(axis=1, keepdims=True)
    grid = Grid(x)
    return MarkovChain(grid, K, DiscreteMeasure(grid, stationary_distribution(K)))


def product_coupling(marginals: Sequence[DiscreteMeasure]) -> Coupling:
    """Outer product of marginals."""
    if len(marginals) < 2:
        raise DimensionError("need at least two marginals")
    t = marginals[0].weights
    for m in marginals[1:]:
        t = np.multiply.outer(t, m.weights)
    return Coupling(tuple(m.grid for m in marginals), t)


def marginal(f: Coupling, axis: int) -> DiscreteMeasure:
    """Marginal of a coupling along one axis."""
    if not 0 <= axis < f.k:
        raise DimensionError(f"axis {axis} out of range for arity {f.k}")
    other = tuple(i for i in range(f.k) if i != axis)
    return DiscreteMeasure(f.grids[axis], f.tensor.sum(axis=other))


def joint_from_chain(chain: MarkovChain) -> Coupling:
    """Joint law of two consecutive states started from stationarity."""
    t = chain.stationary.weights[:, None] * chain.kernel
    return Coupling((chain.grid, chain.grid), t)


@dataclass(frozen=True)
class KdeEstimate:
    """Gaussian product-kernel density estimate evaluated on a 2-grid.

    Attributes
    ----------
    sample : ndarray, shape (n, 2)
    bandwidth : ndarray, shape (2,)
        Per-coordinate bandwidths.
    evaluated : Coupling
        Density at the target nodes, renormalized to unit mass.
    """

    sample: np.ndarray
    bandwidth: np.ndarray
    evaluated: Coupling


def scott_bandwidth(sample):
    """Per-coordinate Scott bandwidth ``n^(-1/(d+4)) * sd`` (ddof=1)."""
    x = np.asarray(sample, dtype=float)
    n, d = x.shape
    return n ** (-1.0 / (d + 4)) * x.std(axis=0, ddof=1)


def _kde_loglik(train, test, h, chunk=512):
    # mean held-out log density of the continuous product-kernel estimate
    const = np.sum(np.log(h)) + np.log(2 * np.pi) + np.log(train.shape[0])
    total = 0.0
    for start in range(0, test.shape[0], chunk):
        z = (test[start:start + chunk, None, :] - train[None, :, :]) / h
        total += float(np.sum(logsumexp(-0.5 * np.sum(z * z, axis=2), axis=1)))
    return total / test.shape[0] - const


def _evaluate_kde(sample, h, grids):
    gx, gy = grids[0].points, grids[1].points
    la = -0.5 * ((gx[None, :] - sample[:, :1]) / h[0]) ** 2
    lb = -0.5 * ((gy[None, :] - sample[:, 1:]) / h[1]) ** 2
    ma = la.max(axis=1, keepdims=True)
    mb = lb.max(axis=1, keepdims=True)
    shift = (ma + mb).ravel()
    w = np.exp(shift - shift.max())
    dens = (np.exp(la - ma) * w[:, None]).T @ np.exp(lb - mb)
    total = dens.sum()
    if not total > 0 or not np.isfinite(total):
        raise DomainError("kernel density vanished on the target grid")
    return dens / total


def kde_fit(sample, target, bandwidth_rule="scott", bandwidth=None, folds=5):
    """Fit a bivariate Gaussian product-kernel density on a target grid.

    Parameters
    ----------
    sample : array_like, shape (n, 2)
        Observed pairs, ``n >= 5``.
    target : pair of Grid
        Grids on which the density is evaluated.
    bandwidth_rule : {'scott', 'cv5'}
        ``scott`` uses ``n^(-1/6) * sd`` per coordinate.  ``cv5`` scales the
        Scott value by nine factors geometrically spaced in ``[1/2, 2]`` and
        keeps the one with the best held-out log-likelihood over contiguous
        folds.
    bandwidth : array_like, optional
        Fixed bandwidths that bypass the rule.
    folds : int
        Number of cross-validation folds.

    Returns
    -------
    KdeEstimate

    Notes
    -----
    A coordinate with zero sample variance falls back to a bandwidth equal
    to the corresponding grid step.
    """
    x = np.asarray(sample, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise DimensionError("sample must have shape (n, 2)")
    if x.shape[0] < 5:
        raise DomainError("kde_fit needs at least 5 observations")
    grids = tuple(_as_grid(g) for g in target)
    steps = np.array([g.step if g.step is not None else np.min(np.diff(g.points)) for g in grids])
    if bandwidth is not None:
        h = np.broadcast_to(np.asarray(bandwidth, dtype=float), (2,)).copy()
        if np.any(h <= 0):
            raise DomainError("bandwidth must be positive")
    else:
        base = scott_bandwidth(x)
        # round-off leaves a repeated value with a tiny nonzero spread
        degenerate = ~(base > 1e-12 * (np.abs(x).max(axis=0) + steps))
        base = np.where(degenerate, steps, base)
        if bandwidth_rule == "scott":
            h = base
        elif bandwidth_rule == "cv5":
            h = _cv_bandwidth(x, base, degenerate, folds)
        else:
            raise DomainError(f"unknown bandwidth rule {bandwidth_rule!r}")
    tensor = _evaluate_kde(x, h, grids)
    return KdeEstimate(_frozen(x), _frozen(h), Coupling(grids, tensor))


def _cv_bandwidth(x, base, degenerate, folds):
    n = x.shape[0]
    folds = max(2, min(int(folds), n))
    idx = np.array_split(np.arange(n), folds)
    best, best_h = -np.inf, base
    for f in 2.0 ** np.linspace(-1.0, 1.0, 9):
        h = np.where(degenerate, base, base * f)
        score = 0.0
        for k in range(folds):
            test = idx[k]
            train = np.concatenate([idx[j] for j in range(folds) if j != k])
            score += _kde_loglik(x[train], x[test], h)
        if score > best:
            best, best_h = score, h
    return best_h
