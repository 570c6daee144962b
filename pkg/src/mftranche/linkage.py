"""Issuer-to-factor linkage: conditional default probabilities and their calibration.

The conditional default probability of issuer j given the factor vector is

    p_j(X, t) = 1 - c_j(t) * exp(-b_j(t) * sum_i beta_ij X_i)

Writing h = -log(1 - p_j(t)) for the unconditional cumulative hazard, the
hazard is split into a systemic budget gamma(h) * h and an idiosyncratic
budget (1 - gamma(h)) * h, where the cumulative systemic fraction

    gamma(h) = (1 - exp(-alpha h)) / (alpha h)

is the running average of the marginal fraction exp(-alpha h); riskier names
(larger h) carry proportionally more idiosyncratic risk.  The scaling b_j(t)
is then the root of

    log E[exp(-b * sum_i beta_ij X_i)] = -gamma(h) * h

which ties the model to the single-name curve: averaging conditional
survival over the factor law reproduces 1 - p_j(t) exactly (tower property).
c_j(t) = (1 - p_j(t)) ** (1 - gamma) absorbs the idiosyncratic budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .factors import FactorCopula, FactorDraw, MarginalFactorLaw, joint_atoms
from .market import CreditCurve

__all__ = [
    "LinkageSpec",
    "LinkageCalibration",
    "CalibrationError",
    "systemic_fraction",
    "marginal_systemic_fraction",
    "idiosyncratic_factor",
    "hazard_budgets",
    "solve_scaling",
    "loading_distribution",
    "calibrate_b",
    "conditional_default_probability",
]

RESIDUAL_TOL = 1e-10  # max |log-survival| residual accepted from the root solve


class CalibrationError(RuntimeError):
    pass


def marginal_systemic_fraction(alpha: float, h) -> np.ndarray:
    """Instantaneous systemic share exp(-alpha h) of hazard accrual."""
    return np.exp(-alpha * np.asarray(h, dtype=float))


def systemic_fraction(alpha: float, h):
    """Cumulative systemic fraction gamma = (1 - exp(-alpha h)) / (alpha h).

    Continuous at h = 0 with gamma(0) = 1; strictly decreasing in h.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    h_arr = np.asarray(h, dtype=float)
    if np.any(h_arr < 0):
        raise ValueError("cumulative hazard must be non-negative")
    x = alpha * h_arr
    small = x < 1e-8
    with np.errstate(divide="ignore", invalid="ignore"):
        gamma = np.where(small, 1.0 - x / 2.0 + x * x / 6.0, -np.expm1(-x) / np.where(small, 1.0, x))
    return float(gamma) if np.isscalar(h) else gamma


def idiosyncratic_factor(gamma, p):
    """c = (1 - p) ** (1 - gamma): survival share kept idiosyncratic."""
    g = np.asarray(gamma, dtype=float)
    p_arr = np.asarray(p, dtype=float)
    if np.any((p_arr < 0) | (p_arr >= 1)):
        raise ValueError("p must lie in [0, 1)")
    if np.any((g <= 0) | (g > 1)):
        raise ValueError("gamma must lie in (0, 1]")
    c = np.exp((1.0 - g) * np.log1p(-p_arr))
    return float(c) if np.isscalar(p) else c


def hazard_budgets(alpha: float, h: float) -> tuple[float, float]:
    """Split of the cumulative hazard h into (systemic, idiosyncratic) budgets.

    systemic = gamma(h) h = (1 - exp(-alpha h)) / alpha, idiosyncratic is the
    remainder; both are increasing in h and sum to h exactly.
    """
    if h < 0:
        raise ValueError("cumulative hazard must be non-negative")
    systemic = -math.expm1(-alpha * h) / alpha
    return systemic, h - systemic


@dataclass(frozen=True)
class LinkageSpec:
    """Relative factor exposures and systemic-decay parameter of one issuer.

    Exposure weights are non-negative and normalized to sum to one; together
    with the unit-mean normalization of the factor laws this pins down the
    joint scale degeneracy (the model is invariant under scaling X up and b
    down by the same amount).
    """

    issuer_id: str
    betas: Mapping[str, float]
    alpha: float

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"{self.issuer_id!r}: alpha must be positive")
        items = {str(k): float(v) for k, v in dict(self.betas).items()}
        if not items:
            raise ValueError(f"{self.issuer_id!r}: at least one factor exposure required")
        if any(v < 0 for v in items.values()):
            raise ValueError(f"{self.issuer_id!r}: negative exposure weights are not allowed")
        total = sum(items.values())
        if total <= 0:
            raise ValueError(f"{self.issuer_id!r}: at least one positive exposure weight required")
        object.__setattr__(self, "betas", {k: v / total for k, v in items.items()})

    @property
    def factor_ids(self) -> tuple[str, ...]:
        return tuple(self.betas)

    def single_factor(self) -> str | None:
        """The unique factor id if this name loads on exactly one factor."""
        active = [f for f, b in self.betas.items() if b > 0]
        return active[0] if len(active) == 1 else None


@dataclass(frozen=True)
class LinkageCalibration:
    """Cached (gamma, c, b) per grid date for one issuer."""

    issuer_id: str
    ts: tuple[float, ...]
    gamma: tuple[float, ...]
    c: tuple[float, ...]
    b: tuple[float, ...]

    def __post_init__(self):
        n = len(self.ts)
        if not (len(self.gamma) == len(self.c) == len(self.b) == n):
            raise ValueError("calibration arrays must have equal length")
        object.__setattr__(self, "ts", tuple(float(x) for x in self.ts))
        object.__setattr__(self, "gamma", tuple(float(x) for x in self.gamma))
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "b", tuple(float(x) for x in self.b))

    def at(self, t: float) -> tuple[float, float, float]:
        """(gamma, c, b) at a grid date; raises KeyError off the grid."""
        for i, ti in enumerate(self.ts):
            if abs(ti - t) < 1e-12:
                return self.gamma[i], self.c[i], self.b[i]
        raise KeyError(f"{self.issuer_id!r}: date {t} not on the calibration grid")

    def to_dict(self) -> dict:
        return {"issuer_id": self.issuer_id, "ts": list(self.ts), "gamma": list(self.gamma),
                "c": list(self.c), "b": list(self.b)}

    @staticmethod
    def from_dict(d: dict) -> "LinkageCalibration":
        return LinkageCalibration(d["issuer_id"], tuple(d["ts"]), tuple(d["gamma"]),
                                  tuple(d["c"]), tuple(d["b"]))


def loading_distribution(spec: LinkageSpec, laws: Mapping[str, MarginalFactorLaw],
                         copula: FactorCopula, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Discrete law (values, weights) of the issuer's loading s = sum_i beta_i X_i at t."""
    active = [f for f, b in spec.betas.items() if b > 0]
    pts, w = joint_atoms(laws, copula, t, factor_ids=active)
    beta = np.array([spec.betas[f] for f in active])
    return pts @ beta, w


def solve_scaling(s_values: np.ndarray, weights: np.ndarray, systemic_budget: float) -> float:
    """Solve log E[exp(-b s)] = -systemic_budget for b >= 0.

    The map b -> log E[exp(-b s)] is decreasing from 0 toward log P(s at its
    minimum); the root exists iff the budget is attainable.
    """
    if systemic_budget < 0:
        raise ValueError("systemic budget must be non-negative")
    if systemic_budget == 0.0:
        return 0.0

    def log_mgf(b):
        return math.log(float(weights @ np.exp(-b * s_values)))

    target = -systemic_budget
    b_hi = 1.0
    for _ in range(200):
        if log_mgf(b_hi) <= target:
            break
        b_hi *= 2.0
    else:
        raise CalibrationError(
            f"systemic budget {systemic_budget:.6g} not attainable: "
            f"log-survival floor {log_mgf(b_hi):.6g} > target {target:.6g} "
            "(mass at zero loading caps the systemic hazard)")
    b = brentq(lambda x: log_mgf(x) - target, 0.0, b_hi, xtol=1e-15, rtol=8.9e-16, maxiter=200)
    residual = log_mgf(b) - target
    if abs(residual) > RESIDUAL_TOL:
        raise CalibrationError(f"scaling solve residual {residual:.3e} exceeds {RESIDUAL_TOL}")
    return float(b)


def calibrate_b(spec: LinkageSpec, curve: CreditCurve, laws: Mapping[str, MarginalFactorLaw],
                copula: FactorCopula, tenor_grid: Sequence[float]) -> LinkageCalibration:
    """Calibrate (gamma, c, b) on a grid of dates for one issuer.

    Independent per issuer, so issuers may be calibrated in parallel; the
    result is immutable and safe to share.
    """
    gs, cs, bs = [], [], []
    for t in tenor_grid:
        p = curve.default_probability(t)
        h = curve.cumulative_hazard(t)
        gamma = float(systemic_fraction(spec.alpha, h))
        c = float(idiosyncratic_factor(gamma, p))
        if p == 0.0:
            b = 0.0
        else:
            systemic, _ = hazard_budgets(spec.alpha, h)
            s_values, weights = loading_distribution(spec, laws, copula, t)
            b = solve_scaling(s_values, weights, systemic)
        gs.append(gamma)
        cs.append(c)
        bs.append(b)
    return LinkageCalibration(spec.issuer_id, tuple(tenor_grid), tuple(gs), tuple(cs), tuple(bs))


def conditional_default_probability(calib: LinkageCalibration, spec: LinkageSpec,
                                    draw: FactorDraw, t: float | None = None) -> float:
    """p_j(X, t) = 1 - c exp(-b sum_i beta_i X_i) at a calibrated date."""
    t = draw.t if t is None else t
    _, c, b = calib.at(t)
    values = draw.value_map()
    s = sum(beta * values[fid] for fid, beta in spec.betas.items())
    return -math.expm1(math.log(c) - b * s)
