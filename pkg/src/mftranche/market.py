"""Core market objects: credit curves, recoveries, portfolios, tranches, ETL curves.

Conventions used throughout the library:

* Times are year fractions from the valuation date; payment grids are exact
  quarters (no day-count or calendar adjustments).
* Portfolio losses are expressed as fractions of total portfolio notional.
* Tranche expected losses (ETL) are fractions of tranche notional, i.e. the
  raw expected loss in the [attach, detach] slice divided by detach - attach.

All types are immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

__all__ = [
    "CreditCurve",
    "RecoverySpec",
    "Constituent",
    "Portfolio",
    "TrancheSpec",
    "EtlCurve",
    "default_probability",
    "cumulative_hazard",
    "portfolio_expected_loss",
]


_EPS = 1e-12


@dataclass(frozen=True)
class CreditCurve:
    """Term structure of unconditional default probabilities for one issuer.

    Pillars are (tenor, default probability) pairs with strictly increasing
    tenors and non-decreasing probabilities in [0, 1).  Interpolation is
    piecewise-constant in the forward hazard rate (cumulative hazard linear
    between pillars), which preserves monotonicity of the probability;
    beyond the last pillar the final segment's hazard rate is held flat.
    """

    issuer_id: str
    pillars: tuple[tuple[float, float], ...]

    def __post_init__(self):
        if not self.pillars:
            raise ValueError(f"curve {self.issuer_id!r}: at least one pillar required")
        pillars = tuple((float(t), float(p)) for t, p in self.pillars)
        object.__setattr__(self, "pillars", pillars)
        prev_t, prev_p = 0.0, 0.0
        for t, p in pillars:
            if t <= prev_t:
                raise ValueError(f"curve {self.issuer_id!r}: tenors must be strictly increasing and positive")
            if not 0.0 <= p < 1.0:
                raise ValueError(f"curve {self.issuer_id!r}: default probability {p} outside [0, 1)")
            if p < prev_p:
                raise ValueError(f"curve {self.issuer_id!r}: default probabilities must be non-decreasing")
            prev_t, prev_p = t, p

    def _hazard_nodes(self) -> tuple[np.ndarray, np.ndarray]:
        ts = np.array([0.0] + [t for t, _ in self.pillars])
        hs = np.array([0.0] + [-math.log1p(-p) for _, p in self.pillars])
        return ts, hs

    def cumulative_hazard(self, t: float) -> float:
        """Cumulative hazard h(t) = -log(1 - p(t)); linear between pillars."""
        if t < 0:
            raise ValueError("t must be >= 0")
        ts, hs = self._hazard_nodes()
        if t <= ts[-1]:
            return float(np.interp(t, ts, hs))
        # flat extrapolation of the last forward hazard rate
        last_rate = (hs[-1] - hs[-2]) / (ts[-1] - ts[-2])
        return float(hs[-1] + last_rate * (t - ts[-1]))

    def default_probability(self, t: float) -> float:
        """Unconditional default probability at horizon t."""
        return -math.expm1(-self.cumulative_hazard(t))

    @staticmethod
    def from_flat_hazard(issuer_id: str, hazard_rate: float, tenors: Sequence[float] = (1.0, 3.0, 5.0, 7.0, 10.0)) -> "CreditCurve":
        """Convenience constructor for a constant-hazard curve."""
        return CreditCurve(issuer_id, tuple((t, -math.expm1(-hazard_rate * t)) for t in tenors))


def default_probability(curve: CreditCurve, t: float) -> float:
    return curve.default_probability(t)


def cumulative_hazard(curve: CreditCurve, t: float) -> float:
    return curve.cumulative_hazard(t)


@dataclass(frozen=True)
class RecoverySpec:
    """Recovery assumption for one name.

    Either a deterministic rate, or a conditional hook mapping the systemic
    factor draw to a recovery fraction.  A hook receives a mapping
    factor_id -> value where values may be scalars or numpy arrays (one entry
    per simulation path) and must operate elementwise; its output must stay
    in [0, 1] for every draw.
    """

    kind: str  # "deterministic" | "conditional"
    rate: float = 0.0
    hook: Optional[Callable[[Mapping[str, np.ndarray]], np.ndarray]] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind == "deterministic":
            if not 0.0 <= self.rate <= 1.0:
                raise ValueError(f"deterministic recovery rate {self.rate} outside [0, 1]")
        elif self.kind == "conditional":
            if self.hook is None:
                raise ValueError("conditional recovery requires a hook")
        else:
            raise ValueError(f"unknown recovery kind {self.kind!r}")

    @staticmethod
    def fixed(rate: float) -> "RecoverySpec":
        return RecoverySpec("deterministic", rate=rate)

    @staticmethod
    def conditional(hook: Callable[[Mapping[str, np.ndarray]], np.ndarray]) -> "RecoverySpec":
        return RecoverySpec("conditional", hook=hook)


@dataclass(frozen=True)
class Constituent:
    """One name in a portfolio.

    ``recovery_override`` is the contractual payout recovery of a
    fixed-recovery trade: it replaces the recovery in the loss payout but
    leaves default probabilities (and hence the default dynamics) untouched.
    """

    issuer_id: str
    notional: float
    recovery: RecoverySpec
    recovery_override: Optional[float] = None

    def __post_init__(self):
        if self.notional <= 0:
            raise ValueError(f"{self.issuer_id!r}: notional must be positive")
        if self.recovery_override is not None and not 0.0 <= self.recovery_override <= 1.0:
            raise ValueError(f"{self.issuer_id!r}: recovery override outside [0, 1]")


@dataclass(frozen=True)
class Portfolio:
    constituents: tuple[Constituent, ...]

    def __post_init__(self):
        object.__setattr__(self, "constituents", tuple(self.constituents))
        if not self.constituents:
            raise ValueError("portfolio must contain at least one constituent")
        ids = [c.issuer_id for c in self.constituents]
        if len(set(ids)) != len(ids):
            raise ValueError("issuer ids must be unique within a portfolio")

    @property
    def total_notional(self) -> float:
        return float(sum(c.notional for c in self.constituents))

    @property
    def weights(self) -> np.ndarray:
        """Notional weights, summing to one."""
        n = np.array([c.notional for c in self.constituents])
        return n / n.sum()

    @property
    def issuer_ids(self) -> tuple[str, ...]:
        return tuple(c.issuer_id for c in self.constituents)

    def with_recovery_override(self, rate: float) -> "Portfolio":
        """Copy of the portfolio with a contractual payout recovery on every name."""
        return Portfolio(tuple(
            Constituent(c.issuer_id, c.notional, c.recovery, recovery_override=rate)
            for c in self.constituents))


def quarterly_grid(maturity: float) -> tuple[float, ...]:
    """Quarterly payment dates generated backwards from maturity.

    If the maturity is not a whole number of quarters the first period is a
    short stub.  Dates are exact year fractions; the last point is maturity.
    """
    if maturity <= 0:
        raise ValueError("maturity must be positive")
    n_back = int(math.floor(maturity / 0.25 + 1e-9))
    pts = [maturity - 0.25 * k for k in range(n_back + 1)]
    pts = sorted(p for p in pts if p > _EPS)
    return tuple(pts)


@dataclass(frozen=True)
class TrancheSpec:
    """A loss slice [attach, detach] of a portfolio, with its payment grid."""

    attach: float
    detach: float
    maturity: float
    payment_grid: tuple[float, ...] = ()

    def __post_init__(self):
        if not 0.0 <= self.attach < self.detach <= 1.0:
            raise ValueError(f"require 0 <= attach < detach <= 1, got [{self.attach}, {self.detach}]")
        if self.maturity <= 0:
            raise ValueError("maturity must be positive")
        grid = tuple(float(t) for t in self.payment_grid) or quarterly_grid(self.maturity)
        if sorted(grid) != list(grid):
            raise ValueError("payment grid must be sorted")
        if abs(grid[-1] - self.maturity) > _EPS:
            raise ValueError("last payment date must equal maturity")
        object.__setattr__(self, "payment_grid", grid)

    @property
    def width(self) -> float:
        return self.detach - self.attach


@dataclass(frozen=True)
class EtlCurve:
    """Expected tranche loss per date, as fractions of tranche notional.

    Points are (t, etl, stderr).  The curve must be non-decreasing in t up to
    Monte Carlo noise (three combined standard errors).
    """

    points: tuple[tuple[float, float, float], ...]

    def __post_init__(self):
        pts = []
        prev_t = -1.0
        for t, etl, se in self.points:
            t, etl, se = float(t), float(etl), float(se)
            if t <= prev_t:
                raise ValueError("curve dates must be strictly increasing")
            if se < 0:
                raise ValueError("stderr must be non-negative")
            if etl < -1e-9 or etl > 1.0 + 1e-9:
                raise ValueError(f"etl {etl} outside [0, 1]")
            pts.append((t, min(max(etl, 0.0), 1.0), se))
            prev_t = t
        for (t0, e0, s0), (t1, e1, s1) in zip(pts, pts[1:]):
            if e1 < e0 - 3.0 * (s0 + s1) - 1e-9:
                raise ValueError(f"etl decreases from {e0} at t={t0} to {e1} at t={t1} beyond MC noise")
        object.__setattr__(self, "points", tuple(pts))

    @property
    def dates(self) -> np.ndarray:
        return np.array([p[0] for p in self.points])

    @property
    def values(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])


def portfolio_expected_loss(portfolio: Portfolio, curves: Mapping[str, CreditCurve],
                            t: float, laws=None, copula=None) -> float:
    """Unconditional expected portfolio loss at t, as a fraction of notional.

    Computes sum_j w_j (1 - R_j) p_j(t).  Deterministic recoveries (and
    contractual overrides) enter directly; conditional recovery hooks are
    replaced by their unconditional mean, obtained by integrating the hook
    over the factor law at t (requires ``laws`` and ``copula``).
    """
    from .factors import expectation  # local import to avoid a cycle

    w = portfolio.weights
    total = 0.0
    for wj, c in zip(w, portfolio.constituents):
        if c.issuer_id not in curves:
            raise KeyError(f"no credit curve for issuer {c.issuer_id!r}")
        p = curves[c.issuer_id].default_probability(t)
        if c.recovery_override is not None:
            rbar = c.recovery_override
        elif c.recovery.kind == "deterministic":
            rbar = c.recovery.rate
        else:
            if laws is None or copula is None:
                raise ValueError("conditional recovery hooks require factor laws and copula to compute the mean recovery")
            rbar = expectation(laws, copula, t, lambda values: c.recovery.hook(values))
        total += wj * (1.0 - rbar) * p
    return float(total)
