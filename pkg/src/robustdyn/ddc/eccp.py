"""Two-stage least squares on Euler equations in conditional choice probabilities."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, NumericalError


@dataclass(frozen=True)
class EccpResult:
    theta: np.ndarray
    se: np.ndarray
    n_obs: int
    n_clusters: int

    def to_dict(self):
        return {"theta": self.theta.tolist(), "se": self.se.tolist(),
                "n_obs": self.n_obs, "n_clusters": self.n_clusters}


def eccp_design(panel, instrument="lag"):
    """Stack the ECCP regression rows.

    The left-hand side is ``log((1 - p_t) / p_t) + beta log p_{t+1}(k + 1)``
    with both probabilities taken from the data.  Regressors are
    ``(1, k, k^2, w)``; instruments replace ``w`` by the same hour's earnings
    on the previous day (``instrument='lag'``) or keep it (``'self'``).

    Returns
    -------
    y, X, Z, day : ndarray
    """
    N, ph, wi = panel.counts, panel.phat, panel.w_index
    wv = np.asarray(panel.w_values, dtype=float)
    M, T = wi.shape
    first = 1 if instrument == "lag" else 0
    rows_y, rows_x, rows_z, days = [], [], [], []
    for t in range(T - 1):
        ks = np.asarray(panel.k_sets[t], dtype=int)
        ks = ks[ks + 1 < N.shape[2]]
        for m in range(first, M):
            n0, n1 = N[m, t, ks], N[m, t + 1, ks + 1]
            p0, p1 = ph[m, t, ks], ph[m, t + 1, ks + 1]
            ok = (n0 > 0) & (n1 > 0) & (p0 > 0) & (p0 < 1) & (p1 > 0)
            if not np.any(ok):
                continue
            k = ks[ok].astype(float)
            y = np.log1p(-p0[ok]) - np.log(p0[ok]) + panel.beta * np.log(p1[ok])
            w = np.full(k.size, wv[wi[m, t]])
            wz = np.full(k.size, wv[wi[m - 1, t]]) if instrument == "lag" else w
            one = np.ones(k.size)
            rows_y.append(y)
            rows_x.append(np.column_stack([one, k, k * k, w]))
            rows_z.append(np.column_stack([one, k, k * k, wz]))
            days.append(np.full(k.size, m))
    if not rows_y:
        raise DomainError("no usable day-hour cells")
    return np.concatenate(rows_y), np.vstack(rows_x), np.vstack(rows_z), np.concatenate(days)


def two_stage_least_squares(y, X, Z, clusters=None):
    """Just- or over-identified 2SLS with optional cluster-robust errors."""
    ZX = Z.T @ X
    if np.linalg.matrix_rank(ZX) < X.shape[1] or np.linalg.cond(Z.T @ Z) > 1e14:
        raise NumericalError("singular first stage")
    Pi = np.linalg.lstsq(Z, X, rcond=None)[0]
    Xh = Z @ Pi
    A = Xh.T @ X
    theta = np.linalg.solve(A, Xh.T @ y)
    e = y - X @ theta
    Ainv = np.linalg.inv(A)
    if clusters is None:
        meat = (Xh * e[:, None] ** 2).T @ Xh
        G = y.size
    else:
        uniq, inv = np.unique(clusters, return_inverse=True)
        G = uniq.size
        S = np.zeros((G, X.shape[1]))
        np.add.at(S, inv, Xh * e[:, None])
        meat = S.T @ S
    corr = G / (G - 1) if G > 1 else 1.0
    cov = corr * Ainv @ meat @ Ainv.T
    return theta, np.sqrt(np.clip(np.diag(cov), 0.0, None))


def eccp_first_stage(panel, instrument="lag") -> EccpResult:
    """ECCP estimate of ``(theta0, theta1, theta2, theta3)`` with day-clustered errors.

    Parameters
    ----------
    panel : object
        Exposes ``counts``, ``phat`` (days x hours x k), ``w_index``,
        ``w_values``, ``k_sets`` and ``beta``; both ``TaxiPanel`` and a
        ``FiniteHorizonModel`` with data qualify.
    instrument : {'lag', 'self'}
    """
    y, X, Z, day = eccp_design(panel, instrument)
    theta, se = two_stage_least_squares(y, X, Z, day)
    return EccpResult(theta, se, int(y.size), int(np.unique(day).size))
