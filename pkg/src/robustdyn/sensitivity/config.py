"""Configuration and result containers for the sensitivity layer."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from ..errors import DimensionError, DomainError


def default_radii():
    """Thirteen radii ``10^(-3 + 0.25 i)`` for ``i = 0..12`` followed by ``1e10``."""
    return tuple(10.0 ** (-3 + 0.25 * i) for i in range(13)) + (1e10,)


@dataclass(frozen=True)
class DualVariables:
    """Multipliers of the minimax problem.

    ``lam`` pairs with the moment conditions, ``lambda_kl`` with the KL
    ball, ``lambda_s`` with the scalar threshold of the robustness metric and
    ``eta`` with the stationarity of the initial law.
    """

    lam: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lambda_kl: float = 1.0
    lambda_s: float = 0.0
    eta: float = 0.0

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lam, dtype=float)).ravel()
        if not np.all(np.isfinite(lam)):
            raise DomainError("moment multipliers must be finite")
        for name in ("lambda_kl", "lambda_s", "eta"):
            v = float(getattr(self, name))
            if not v >= 0:
                raise DomainError(f"{name} must be nonnegative")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "lam", lam)


@dataclass(frozen=True)
class SensitivityConfig:
    """Tuning of the annealed Metropolis search.

    ``temperature_stage`` selects the index entering the annealing factor
    ``temperature_scale * (1 + (s - 1)(m - 1)) / (T - 1)``: ``"outer"`` uses
    the outer optimization step, ``"inner"`` the MCMC step.
    """

    radii: tuple = field(default_factory=default_radii)
    mcmc_steps: int = 5000
    opt_steps: int = 5
    anneal_multiplier: float = 100.0
    violation_threshold: float = 0.005
    penalty: float = 100.0
    prior_sd: float = 10.0
    fixed_point_eps: float | None = None
    moment_eps: float = 0.0
    lambda_kl_floor: float = 1e-8
    seed: int = 0
    temperature_scale: float = 10.0
    temperature_stage: str = "outer"
    target_accept: float = 0.234
    adapt_exponent: float = 0.6
    initial_step: float = 0.5
    binding_ratio: float = 0.95
    kl_rtol: float = 1e-6

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii)
        if not radii:
            raise DomainError("at least one radius")
        if any(r < 0 or not math.isfinite(r) for r in radii):
            raise DomainError("radii must be finite and nonnegative")
        if any(b < a for a, b in zip(radii, radii[1:])):
            raise DomainError("radii must be nondecreasing")
        object.__setattr__(self, "radii", radii)
        for name in ("mcmc_steps", "opt_steps"):
            if int(getattr(self, name)) < 1:
                raise DomainError(f"{name} must be at least 1")
        if self.anneal_multiplier < 1:
            raise DomainError("anneal_multiplier must be at least 1")
        if self.temperature_stage not in ("outer", "inner"):
            raise DomainError("temperature_stage is 'outer' or 'inner'")
        if self.violation_threshold < 0 or self.penalty < 0 or self.prior_sd <= 0:
            raise DomainError("thresholds and penalty must be nonnegative, prior_sd positive")
        if not self.lambda_kl_floor > 0:
            raise DomainError("lambda_kl_floor must be positive")

    def to_dict(self):
        d = asdict(self)
        d["radii"] = list(self.radii)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise DomainError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "radii" in d:
            d["radii"] = tuple(d["radii"])
        return cls(**d)

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        if "radii" in kw:
            kw["radii"] = tuple(kw["radii"])
        return replace(self, **kw)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def temperature(self, outer_step, inner_step):
        s = outer_step if self.temperature_stage == "outer" else inner_step
        T = self.mcmc_steps
        return self.temperature_scale * (1.0 + (s - 1) * (self.anneal_multiplier - 1)) / max(T - 1, 1)


@dataclass(frozen=True)
class BoundRecord:
    delta: float
    lower: float | None = None
    upper: float | None = None
    kl_lower: float | None = None
    kl_upper: float | None = None
    binding_lower: bool | None = None
    binding_upper: bool | None = None
    feasible_lower: bool = True
    feasible_upper: bool = True


CSV_COLUMNS = ("delta", "lower", "upper", "kl_lower", "kl_upper", "binding_lower", "binding_upper")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    return repr(float(v))


def _parse(v, kind=float):
    if v == "" or v is None:
        return None
    if kind is bool:
        return v.strip().lower() in ("true", "1", "yes")
    return float(v)


@dataclass(frozen=True)
class BoundCurve:
    """Lower and upper bounds over a ladder of KL radii."""

    records: tuple = ()

    def __post_init__(self):
        recs = tuple(sorted(self.records, key=lambda r: r.delta))
        for r in recs:
            if r.lower is not None and r.upper is not None and r.lower > r.upper + 1e-12 * max(1, abs(r.upper)):
                raise DomainError(f"lower bound exceeds upper bound at delta={r.delta}")
        object.__setattr__(self, "records", recs)

    def __len__(self):
        return len(self.records)

    @property
    def deltas(self):
        return np.array([r.delta for r in self.records])

    def column(self, name):
        return np.array([np.nan if getattr(r, name) is None else getattr(r, name) for r in self.records], dtype=float)

    @property
    def lowers(self):
        return self.column("lower")

    @property
    def uppers(self):
        return self.column("upper")

    def merge(self, other: "BoundCurve"):
        """Combine a lower-only and an upper-only curve over the same radii."""
        by = {r.delta: r for r in self.records}
        out = []
        for r in other.records:
            if r.delta not in by:
                raise DimensionError("curves are on different radii")
            a = by[r.delta]
            kw = {}
            for side in ("lower", "upper"):
                src = a if getattr(a, side) is not None else r
                kw[side] = getattr(src, side)
                kw["kl_" + side] = getattr(src, "kl_" + side)
                kw["binding_" + side] = getattr(src, "binding_" + side)
                kw["feasible_" + side] = getattr(src, "feasible_" + side)
            out.append(BoundRecord(r.delta, **kw))
        return BoundCurve(tuple(out))

    def nesting_violation(self):
        """Largest amount by which an interval fails to contain the previous one."""
        lo, up = self.lowers, self.uppers
        worst = 0.0
        for a, b in zip(range(len(lo) - 1), range(1, len(lo))):
            if np.isfinite(lo[a]) and np.isfinite(lo[b]):
                worst = max(worst, lo[b] - lo[a])
            if np.isfinite(up[a]) and np.isfinite(up[b]):
                worst = max(worst, up[a] - up[b])
        return float(worst)

    def flattened(self, rtol=1e-3):
        """Whether both bounds changed by less than ``rtol`` (relative) over the last two radii."""
        if len(self.records) < 2:
            return False
        ok = True
        for col in (self.lowers, self.uppers):
            a, b = col[-2], col[-1]
            if np.isnan(a) and np.isnan(b):
                continue
            ok &= bool(abs(b - a) <= rtol * max(abs(a), abs(b), 1e-300))
        return ok

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.records:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path_or_text):
        text = path_or_text
        if "\n" not in str(path_or_text):
            with open(path_or_text, newline="") as fh:
                text = fh.read()
        rows = list(csv.DictReader(io.StringIO(text)))
        recs = []
        for row in rows:
            recs.append(BoundRecord(
                float(row["delta"]), _parse(row["lower"]), _parse(row["upper"]),
                _parse(row["kl_lower"]), _parse(row["kl_upper"]),
                _parse(row["binding_lower"], bool), _parse(row["binding_upper"], bool),
                row["lower"] != "" or row["upper"] != "", True))
        return cls(tuple(recs))


@dataclass(frozen=True)
class GlobalBoundParams:
    """Regularity constants of the cost for the entropic approximation error bound.

    ``L`` is a Lipschitz constant of the cost in the grid metric, ``C`` the
    diameter of the support, ``p`` the moment order and ``dims`` the
    dimensions of the second to last coordinates.
    """

    L: float
    C: float
    p: int = 1
    dims: tuple = (1,)

    def __post_init__(self):
        if not (self.L >= 0 and self.C >= 0):
            raise DomainError("L and C must be nonnegative")
        if int(self.p) < 1:
            raise DomainError("p must be at least 1")
        if not self.dims or any(int(d) < 1 for d in self.dims):
            raise DomainError("dimensions must be positive")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
