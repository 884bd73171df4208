"""Moment systems and multiplier functions on discrete product grids."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DimensionError, DomainError
from ..measures import Coupling


@dataclass(frozen=True)
class MultiplierFunction:
    """Grid-valued multipliers, one row per structural constraint."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if not np.all(np.isfinite(v)):
            raise DomainError("multipliers must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, shape):
        return cls(np.zeros(shape))

    @property
    def size(self):
        return self.values.size


@dataclass(frozen=True)
class MomentSystem:
    """Stacked moment residuals ``m[j, ...]`` on a product grid with targets.

    The approximate moment conditions read ``|E_F m_j - target_j| <= eps``.
    """

    residuals: np.ndarray
    target: np.ndarray
    eps: float = 0.0

    def __post_init__(self):
        r = np.array(self.residuals, dtype=float)
        tg = np.array(self.target, dtype=float).ravel()
        if r.ndim < 2 or r.shape[0] != tg.size:
            raise DimensionError("one target per stacked moment residual")
        if self.eps < 0:
            raise DomainError("eps must be nonnegative")
        object.__setattr__(self, "residuals", r)
        object.__setattr__(self, "target", tg)

    @property
    def dim(self):
        return self.target.size

    @property
    def grid_shape(self):
        return self.residuals.shape[1:]

    def expect(self, plan):
        t = plan.tensor if isinstance(plan, Coupling) else np.asarray(plan, dtype=float)
        if t.shape != self.grid_shape:
            raise DimensionError("plan shape does not match the moment grid")
        return np.tensordot(self.residuals, t, axes=t.ndim)

    def gap(self, plan):
        """``sup_j |E_F m_j - target_j|``."""
        return float(np.max(np.abs(self.expect(plan) - self.target)))

    def violation(self, plan):
        """Excess of the moment gap over ``eps`` (zero when feasible)."""
        return max(0.0, self.gap(plan) - self.eps)

    def weighted(self, lam):
        """``sum_j lam_j (m_j - target_j)`` as a grid tensor."""
        lam = np.asarray(lam, dtype=float).ravel()
        if lam.size != self.dim:
            raise DimensionError("one multiplier per moment")
        return np.tensordot(lam, self.residuals, axes=1) - float(lam @ self.target)
