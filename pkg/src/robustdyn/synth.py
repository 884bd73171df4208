"""Synthetic panels with known primitives for the purchase and stopping models."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .ddc.finite import CcpTable, FiniteHorizonModel, default_k_sets, solve_finite_horizon
from .ddc.infinite import InfiniteHorizonModel, SharePolicy, solve_share_fixed_point
from .errors import DomainError
from .measures import DiscreteMeasure, Grid, MarkovChain, discretize_ar1


def refit_ar1(series):
    """OLS fit of ``x_t = a + b x_{t-1} + e`` with the ML innovation scale.

    A 2-d input is read as independent rows (e.g. days of hourly values);
    lags never cross rows.

    Returns
    -------
    intercept, slope, sigma : float
    """
    x = np.asarray(series, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.shape[1] < 3 and x.size < 3:
        raise DomainError("need at least three observations")
    prev = x[:, :-1].ravel()
    cur = x[:, 1:].ravel()
    if prev.size < 2 or np.ptp(prev) == 0:
        raise DomainError("series has no variation; AR(1) is not identified")
    X = np.column_stack([np.ones_like(prev), prev])
    coef, *_ = np.linalg.lstsq(X, cur, rcond=None)
    resid = cur - X @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(resid ** 2)))


def _simulate_chain(rng, kernel, start, n_steps):
    """Index path of a finite chain from ``start``."""
    cdf = np.cumsum(kernel, axis=1)
    cdf[:, -1] = 1.0
    u = rng.random(n_steps)
    out = np.empty(n_steps + 1, dtype=int)
    out[0] = start
    for t in range(n_steps):
        out[t + 1] = np.searchsorted(cdf[out[t]], u[t], side="right")
    return out


def _draw(rng, weights, size=None):
    cdf = np.cumsum(weights)
    cdf[-1] = 1.0
    return np.searchsorted(cdf, rng.random(size), side="right")


@dataclass(frozen=True)
class SynthCarSpec:
    """Ground truth for a synthetic purchase panel.

    ``offsets`` are the per-period counterfactual inclusive-value shifts;
    ``noise_market_size`` switches on binomial sampling of the shares.
    """

    T: int = 400
    gamma0: float = 0.0
    gamma1: float = 0.8
    sigma: float = 0.3
    beta: float = 0.975
    alpha: float = -1.0
    offsets: float | list = -0.05
    market_size: float = 1.0
    ev_share: float = 0.1
    subsidy: float = 3000.0
    n_points: int = 51
    width: float = 3.0
    noise_market_size: float | None = None
    seed: int = 0

    def __post_init__(self):
        if not abs(self.gamma1) < 1:
            raise DomainError("|gamma1| must be below 1")
        if not self.sigma > 0:
            raise DomainError("sigma must be positive")
        if self.T < 3:
            raise DomainError("need at least three periods")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass(frozen=True)
class CarPanel:
    spec: SynthCarSpec
    chain: MarkovChain
    policy: SharePolicy
    omega_index: np.ndarray
    observed_s0: np.ndarray

    @property
    def omega(self):
        return self.chain.grid.points[self.omega_index]

    def model(self, chain=None):
        sp = self.spec
        return InfiniteHorizonModel(sp.beta, self.chain if chain is None else chain, self.observed_s0,
                                    sp.offsets, sp.alpha, sp.market_size, sp.ev_share, sp.subsidy)


def gen_car_panel(spec: SynthCarSpec) -> CarPanel:
    """Simulate the inclusive value on its discretized chain and emit shares."""
    rng = np.random.default_rng(spec.seed)
    chain = discretize_ar1(spec.gamma0, spec.gamma1, spec.sigma, spec.n_points, spec.width)
    offs = np.broadcast_to(np.asarray(spec.offsets, dtype=float), (spec.T,))
    base = InfiniteHorizonModel(spec.beta, chain, np.full(spec.T, 0.5), offs)
    policy = solve_share_fixed_point(base, method="newton")
    start = _draw(rng, chain.stationary.weights)
    idx = _simulate_chain(rng, chain.kernel, start, spec.T - 1)
    s0 = policy.s0[idx].copy()
    if spec.noise_market_size:
        n = int(spec.noise_market_size)
        s0 = rng.binomial(n, s0) / n
        s0 = np.clip(s0, 0.5 / n, 1 - 0.5 / n)
    return CarPanel(spec, chain, policy, idx, s0)


@dataclass(frozen=True)
class SynthTaxiSpec:
    """Ground truth for a synthetic stopping panel.

    Earnings bins are a discretized AR(1) in log earnings.  Each day starts
    from the previous day's opening bin through ``w_day_rho`` and then moves
    hourly through ``w_hour_rho``; ``w_hour_rho=None`` freezes the bin within
    the day.  ``xi_sigma=0`` pins the shock at its mean.  ``exact=True``
    replaces binomial stopping by expected counts.
    """

    hours: tuple = tuple(range(6, 17))
    theta: tuple = (-2.0, 0.4, -0.03, 0.04)
    beta: float = 0.95
    xi_mu: float = 0.0
    xi_rho: float = 0.5
    xi_sigma: float = 0.2
    n_xi: int = 21
    n_w: int = 4
    w_log_mean: float = float(np.log(30.0))
    w_log_sd: float = 0.15
    w_day_rho: float = 0.6
    w_hour_rho: float | None = 0.7
    days: int = 200
    drivers_per_cell: int = 200
    exact: bool = False
    k_sets: tuple | None = None
    seed: int = 0

    def __post_init__(self):
        if not abs(self.xi_rho) < 1:
            raise DomainError("|rho| must be below 1")
        if self.days < 1 or self.drivers_per_cell < 1 or self.n_w < 2:
            raise DomainError("counts must be at least one")
        if self.xi_sigma < 0:
            raise DomainError("xi_sigma must be nonnegative")

    def to_dict(self):
        d = asdict(self)
        d["hours"] = list(self.hours)
        d["theta"] = list(self.theta)
        if self.k_sets is not None:
            d["k_sets"] = [list(map(int, k)) for k in self.k_sets]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("hours", "theta"):
            if key in d:
                d[key] = tuple(d[key])
        if d.get("k_sets") is not None:
            d["k_sets"] = tuple(tuple(k) for k in d["k_sets"])
        return cls(**d)


def _earnings_chains(spec):
    sd = spec.w_log_sd
    m = spec.w_log_mean

    def ar(rho):
        return discretize_ar1(m * (1 - rho), rho, sd * np.sqrt(1 - rho * rho), spec.n_w)

    day = ar(spec.w_day_rho)
    if spec.w_hour_rho is None:
        hour = np.eye(spec.n_w)
    else:
        hour = ar(spec.w_hour_rho).kernel
    return np.exp(day.grid.points), day, hour


def _xi_chain(spec):
    if spec.xi_sigma > 0:
        return discretize_ar1(spec.xi_mu, spec.xi_rho, spec.xi_sigma, spec.n_xi)
    c = spec.xi_mu / (1 - spec.xi_rho)
    n = max(spec.n_xi, 3)
    pts = c + np.linspace(-1.0, 1.0, n)
    K = np.zeros((n, n))
    K[:, n // 2] = 1.0
    g = Grid(pts)
    return MarkovChain(g, K, DiscreteMeasure(g, K[0]))


@dataclass(frozen=True)
class TaxiPanel:
    spec: SynthTaxiSpec
    model: FiniteHorizonModel
    ccps: CcpTable
    stops: np.ndarray
    xi_index: np.ndarray
    w_day_chain: MarkovChain = field(repr=False)

    # attributes read by the ECCP estimator
    @property
    def counts(self):
        return self.model.counts

    @property
    def phat(self):
        return self.model.phat

    @property
    def w_index(self):
        return self.model.w_index

    @property
    def w_values(self):
        return self.model.w_values

    @property
    def k_sets(self):
        return self.model.k_sets

    @property
    def beta(self):
        return self.model.beta

    @property
    def xi(self):
        return self.model.xi_chain.grid.points[self.xi_index]


def gen_taxi_panel(spec: SynthTaxiSpec) -> TaxiPanel:
    """Simulate shocks, earnings and driver stopping, then aggregate per cell."""
    rng = np.random.default_rng(spec.seed)
    hours = np.asarray(spec.hours, dtype=int)
    ks = default_k_sets(hours) if spec.k_sets is None else tuple(np.asarray(k, dtype=int) for k in spec.k_sets)
    w_values, day_chain, w_kernel = _earnings_chains(spec)
    xi_chain = _xi_chain(spec)
    bare = FiniteHorizonModel(spec.beta, spec.theta, hours, ks, w_values, w_kernel, xi_chain)
    ccps = solve_finite_horizon(bare)
    p = ccps.p
    M, T, nK = spec.days, hours.size, bare.n_k
    wi = np.empty((M, T), dtype=int)
    xi = np.empty((M, T), dtype=int)
    start_w = _simulate_chain(rng, day_chain.kernel, _draw(rng, day_chain.stationary.weights), M - 1)
    for m in range(M):
        wi[m] = _simulate_chain(rng, w_kernel, start_w[m], T - 1)
        xi[m] = _simulate_chain(rng, xi_chain.kernel, _draw(rng, xi_chain.stationary.weights), T - 1)
    N = np.zeros((M, T, nK))
    S = np.zeros((M, T, nK))
    fresh = float(spec.drivers_per_cell)
    for t in range(T):
        for k in ks[t]:
            carry = N[:, t - 1, k - 1] - S[:, t - 1, k - 1] if t > 0 and k >= 1 else 0.0
            N[:, t, k] = fresh + carry
        cell_p = p[t][:, wi[:, t], xi[:, t]].T                 # (M, nK)
        if spec.exact:
            S[:, t] = N[:, t] * cell_p
        else:
            S[:, t] = rng.binomial(N[:, t].astype(np.int64), cell_p)
    with np.errstate(invalid="ignore", divide="ignore"):
        phat = np.where(N > 0, S / np.where(N > 0, N, 1.0), np.nan)
    model = FiniteHorizonModel(spec.beta, spec.theta, hours, ks, w_values, w_kernel, xi_chain,
                               counts=N, phat=phat, w_index=wi)
    return TaxiPanel(spec, model, ccps, S, xi, day_chain)


def write_car_panel(panel: CarPanel, out_dir):
    """Write ``panel.csv`` (period, share) and ``truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "panel.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["period", "s0", "offset"])
        offs = np.broadcast_to(np.asarray(panel.spec.offsets, dtype=float), panel.observed_s0.shape)
        for t, (s, o) in enumerate(zip(panel.observed_s0, offs)):
            w.writerow([t, repr(float(s)), repr(float(o))])
    truth = {"kind": "car", "spec": panel.spec.to_dict(), "omega": panel.omega.tolist(),
             "omega_index": panel.omega_index.tolist(), "policy": panel.policy.to_dict(),
             "chain": panel.chain.to_dict()}
    (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True))
    return out / "panel.csv", out / "truth.json"


def write_taxi_panel(panel: TaxiPanel, out_dir):
    """Long-format ``panel.csv`` (day, hour, k, w-bin, count, share) and ``truth.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    mod = panel.model
    with open(out / "panel.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "hour", "k", "w_bin", "count", "share"])
        for m in range(mod.n_days):
            for t, hr in enumerate(mod.hours):
                for k in mod.k_sets[t]:
                    w.writerow([m, int(hr), int(k), int(mod.w_index[m, t]),
                                repr(float(mod.counts[m, t, k])), repr(float(mod.phat[m, t, k]))])
    truth = {"kind": "taxi", "spec": panel.spec.to_dict(), "xi": panel.xi.tolist(),
             "w_values": mod.w_values.tolist(), "w_kernel": mod.w_kernel.tolist(),
             "xi_chain": mod.xi_chain.to_dict()}
    (out / "truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True))
    return out / "panel.csv", out / "truth.json"


def read_car_panel(path):
    """Observed shares and offsets from a car ``panel.csv``."""
    rows = list(csv.DictReader(open(path, newline="")))
    return (np.array([float(r["s0"]) for r in rows]), np.array([float(r["offset"]) for r in rows]))


def read_taxi_panel(path, n_days=None, hours=None):
    """Counts, shares and earnings bins from a long-format taxi ``panel.csv``."""
    rows = list(csv.DictReader(open(path, newline="")))
    days = np.array([int(r["day"]) for r in rows])
    hr = np.array([int(r["hour"]) for r in rows])
    k = np.array([int(r["k"]) for r in rows])
    hours = np.unique(hr) if hours is None else np.asarray(hours)
    M = days.max() + 1 if n_days is None else n_days
    ti = np.searchsorted(hours, hr)
    nk = k.max() + 1
    N = np.zeros((M, hours.size, nk))
    ph = np.full((M, hours.size, nk), np.nan)
    wi = np.zeros((M, hours.size), dtype=int)
    N[days, ti, k] = [float(r["count"]) for r in rows]
    ph[days, ti, k] = [float(r["share"]) for r in rows]
    wi[days, ti] = [int(r["w_bin"]) for r in rows]
    k_sets = tuple(np.unique(k[hr == h]) for h in hours)
    return hours, k_sets, N, ph, wi
