"""Calibrate a factor's per-tenor marginal law to index tranche ETL targets.

The decision variables are the per-tenor probability masses on the fixed
support grid.  All structural constraints are linear in those masses:

* simplex: q >= 0, sum q = 1 per tenor,
* increasing process: the CDF at a longer tenor lies pointwise at or below
  the CDF at every shorter tenor.

The model ETL of a tranche cell is an atom-weighted sum of conditional
normal-approximation tranche losses, where the per-issuer scaling b is
itself recalibrated to the candidate law (so the tower property holds at
every iterate).  That inner recalibration makes the map q -> model ETL
mildly nonlinear, so the fit alternates:

1. freeze the b's at the current law and solve the resulting convex QP
   (weighted least squares + a small CDF-curvature penalty) subject to the
   linear constraints, then
2. damp the step until the true objective (with b's recalibrated) decreases.

Tenors are fitted shortest first; each subsequent tenor is constrained below
the previous tenor's fitted CDF, and every iterate of the optimizer is
feasible by construction.  After fitting, the support is rescaled so the
last tenor's mean is one (the model carries no absolute factor scale).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import cvxpy as cp
import numpy as np

from .factors import MarginalFactorLaw, default_support
from .linkage import LinkageSpec, hazard_budgets, idiosyncratic_factor, solve_scaling
from .loss import normal_etl
from .market import CreditCurve, Portfolio

__all__ = [
    "EtlTargetSurface",
    "CalibrationReport",
    "CalibConfig",
    "InfeasibleTargetsError",
    "calibrate_marginals",
    "model_etl_grid",
]


class InfeasibleTargetsError(ValueError):
    """Targets violate the arbitrage-shape invariants and cannot be fitted."""


@dataclass(frozen=True)
class EtlTargetSurface:
    """Market ETL targets per tranche and tenor, with optional fit weights."""

    index_id: str
    tranches: tuple[tuple[float, float], ...]
    tenors: tuple[float, ...]
    targets: np.ndarray  # (n_tranches, n_tenors)
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        tranches = tuple((float(a), float(d)) for a, d in self.tranches)
        tenors = tuple(float(t) for t in self.tenors)
        targets = np.asarray(self.targets, dtype=float).copy()
        if sorted(tenors) != list(tenors) or len(set(tenors)) != len(tenors):
            raise ValueError("tenors must be strictly increasing")
        for a, d in tranches:
            if not 0.0 <= a < d <= 1.0:
                raise ValueError(f"bad tranche [{a}, {d}]")
        if targets.shape != (len(tranches), len(tenors)):
            raise ValueError(f"targets shape {targets.shape} does not match "
                             f"({len(tranches)}, {len(tenors)})")
        if np.any((targets < 0) | (targets > 1)):
            raise InfeasibleTargetsError("ETL targets must lie in [0, 1]")
        order = np.argsort([a for a, _ in tranches])
        for col in range(len(tenors)):
            etl_sorted = targets[order, col]
            if np.any(np.diff(etl_sorted) > 1e-12):
                raise InfeasibleTargetsError(
                    f"{self.index_id}: ETLs must not increase toward senior tranches "
                    f"at tenor {tenors[col]}")
        if np.any(np.diff(targets, axis=1) < -1e-12):
            raise InfeasibleTargetsError(
                f"{self.index_id}: per-tranche ETL must be non-decreasing in tenor")
        weights = (np.ones_like(targets) if self.weights is None
                   else np.asarray(self.weights, dtype=float).copy())
        if weights.shape != targets.shape or np.any(weights < 0):
            raise ValueError("weights must be non-negative and match the target shape")
        targets.flags.writeable = False
        weights.flags.writeable = False
        object.__setattr__(self, "tranches", tranches)
        object.__setattr__(self, "tenors", tenors)
        object.__setattr__(self, "targets", targets)
        object.__setattr__(self, "weights", weights)


@dataclass(frozen=True)
class CalibrationReport:
    law: MarginalFactorLaw
    model_etl: np.ndarray  # (n_tranches, n_tenors)
    errors: np.ndarray  # model - target
    objective: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class CalibConfig:
    support: Optional[np.ndarray] = None
    reg_weight: float = 1e-4
    max_iter: int = 500
    tol: float = 1e-12
    solver: str = "CLARABEL"
    normalize_scale: bool = True


class _IndexSlice:
    """Per-issuer inputs of one index at one tenor: budgets, severities, weights."""

    def __init__(self, portfolio: Portfolio, curves: Mapping[str, CreditCurve],
                 linkage: Mapping[str, LinkageSpec], t: float, support: np.ndarray):
        self.t = t
        self.support = support
        w = portfolio.weights
        self.lgd = np.empty((len(support), len(w)))  # per atom and name
        self.budget = np.empty(len(w))
        self.log_c = np.empty(len(w))
        for j, cst in enumerate(portfolio.constituents):
            spec = linkage[cst.issuer_id]
            curve = curves[cst.issuer_id]
            p = curve.default_probability(t)
            h = curve.cumulative_hazard(t)
            systemic, _ = hazard_budgets(spec.alpha, h)
            gamma = 1.0 if h == 0 else systemic / h
            self.budget[j] = systemic
            self.log_c[j] = math.log(idiosyncratic_factor(gamma, p)) if p > 0 else 0.0
            rate = cst.recovery_override
            if rate is None and cst.recovery.kind == "deterministic":
                rate = cst.recovery.rate
            if rate is not None:
                self.lgd[:, j] = w[j] * (1.0 - rate)
            else:
                fid = spec.single_factor()
                r = np.asarray(cst.recovery.hook({fid: support}), dtype=float)
                self.lgd[:, j] = w[j] * (1.0 - r)

    def moments(self, pmf: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-atom conditional loss moments with b recalibrated to ``pmf``."""
        b = np.array([solve_scaling(self.support, pmf, bud) if bud > 0 else 0.0
                      for bud in self.budget])
        p = -np.expm1(self.log_c[None, :] - b[None, :] * self.support[:, None])
        mu = (self.lgd * p).sum(axis=1)
        var = (self.lgd * self.lgd * p * (1.0 - p)).sum(axis=1)
        return mu, var

    def etl_matrix(self, pmf: np.ndarray, tranches: Sequence[tuple[float, float]]) -> np.ndarray:
        """G[c, k]: conditional ETL of cell c at atom k (b frozen at ``pmf``)."""
        mu, var = self.moments(pmf)
        return np.vstack([normal_etl(mu, var, a, d) for a, d in tranches])


def _second_difference(n: int) -> np.ndarray:
    d2 = np.zeros((n - 2, n))
    for i in range(n - 2):
        d2[i, i:i + 3] = (1.0, -2.0, 1.0)
    return d2


def _solve_qp(g: np.ndarray, y: np.ndarray, wgt: np.ndarray, reg: float,
              cdf_cap: Optional[np.ndarray], solver: str) -> np.ndarray:
    n_atoms = g.shape[1]
    q = cp.Variable(n_atoms)
    cdf = cp.cumsum(q)
    resid = cp.multiply(np.sqrt(wgt), g @ q - y)
    d2 = _second_difference(n_atoms)
    objective = cp.sum_squares(resid) + reg * cp.sum_squares(d2 @ cdf)
    constraints = [q >= 0, cp.sum(q) == 1]
    if cdf_cap is not None:
        constraints.append(cdf[:-1] <= cdf_cap[:-1])
    prob = cp.Problem(cp.Minimize(objective), constraints)
    prob.solve(solver=solver)
    if q.value is None:
        raise RuntimeError(f"law-fit QP failed with status {prob.status}")
    out = np.clip(np.asarray(q.value, dtype=float), 0.0, None)
    out /= out.sum()
    if cdf_cap is not None:
        # trim solver tolerance so the cap holds exactly
        excess = np.clip(np.cumsum(out)[:-1] - cdf_cap[:-1], 0.0, None)
        if excess.max(initial=0.0) > 0:
            cum = np.minimum(np.cumsum(out), np.concatenate([cdf_cap[:-1], [1.0]]))
            cum = np.maximum.accumulate(cum)
            cum[-1] = 1.0
            out = np.diff(np.concatenate([[0.0], cum]))
    return out


def _true_objective(sl: _IndexSlice, pmf: np.ndarray, tranches, y, wgt, reg) -> tuple[float, np.ndarray]:
    g = sl.etl_matrix(pmf, tranches)
    fit = g @ pmf
    d2 = _second_difference(len(pmf))
    obj = float(wgt @ (fit - y) ** 2 + reg * np.sum((d2 @ np.cumsum(pmf)) ** 2))
    return obj, fit


def calibrate_marginals(index_portfolio: Portfolio, curves: Mapping[str, CreditCurve],
                        linkage: Mapping[str, LinkageSpec], targets: EtlTargetSurface,
                        config: CalibConfig = CalibConfig()) -> tuple[MarginalFactorLaw, CalibrationReport]:
    """Fit one factor's marginal law to the index's ETL target surface.

    Every index constituent must load solely on the factor being calibrated.
    Raises InfeasibleTargetsError before any optimization when the targets
    violate the shape invariants; non-convergence is reported on the returned
    CalibrationReport rather than raised.
    """
    factor_ids = set()
    for cst in index_portfolio.constituents:
        spec = linkage.get(cst.issuer_id)
        if spec is None:
            raise KeyError(f"no linkage spec for {cst.issuer_id!r}")
        single = spec.single_factor()
        if single is None:
            raise ValueError(f"{cst.issuer_id!r} loads on several factors; "
                             "index calibration requires one-hot exposures")
        factor_ids.add(single)
    if len(factor_ids) != 1:
        raise ValueError(f"index spans several factors: {sorted(factor_ids)}")
    factor_id = factor_ids.pop()

    support = np.asarray(config.support, dtype=float) if config.support is not None else default_support()
    n_atoms = len(support)
    pmf_rows = []
    fits = np.empty_like(targets.targets)
    total_iterations = 0
    converged = True
    prev_cdf = None
    init = np.exp(-support)
    init /= init.sum()
    for col, tenor in enumerate(targets.tenors):
        sl = _IndexSlice(index_portfolio, curves, linkage, tenor, support)
        y = targets.targets[:, col]
        wgt = targets.weights[:, col]
        pmf = pmf_rows[-1].copy() if pmf_rows else init
        obj, fit = _true_objective(sl, pmf, targets.tranches, y, wgt, config.reg_weight)
        it = 0
        for it in range(1, config.max_iter + 1):
            g = sl.etl_matrix(pmf, targets.tranches)
            q_star = _solve_qp(g, y, wgt, config.reg_weight, prev_cdf, config.solver)
            eta = 1.0
            accepted = False
            while eta > 1e-4:
                cand = pmf + eta * (q_star - pmf)
                cand = np.clip(cand, 0.0, None)
                cand /= cand.sum()
                cand_obj, cand_fit = _true_objective(sl, cand, targets.tranches, y, wgt, config.reg_weight)
                if cand_obj <= obj + 1e-15:
                    accepted = True
                    break
                eta *= 0.5
            if not accepted:
                break
            improvement = obj - cand_obj
            pmf, obj, fit = cand, cand_obj, cand_fit
            if improvement < config.tol:
                break
        else:
            converged = False
        total_iterations += it
        pmf_rows.append(pmf)
        fits[:, col] = fit
        prev_cdf = np.cumsum(pmf)
        prev_cdf[-1] = 1.0

    law = MarginalFactorLaw(factor_id, targets.tenors, support, np.vstack(pmf_rows))
    if config.normalize_scale:
        law = law.normalized()
        # scale invariance: b rescales with the support, the fit is unchanged
        for col, tenor in enumerate(targets.tenors):
            sl = _IndexSlice(index_portfolio, curves, linkage, tenor, law.support)
            fits[:, col] = sl.etl_matrix(law.probs[col], targets.tranches) @ law.probs[col]
    errors = fits - targets.targets
    objective = float((targets.weights * errors ** 2).sum())
    report = CalibrationReport(law, fits, errors, objective, total_iterations, converged)
    return law, report


def model_etl_grid(index_portfolio: Portfolio, curves: Mapping[str, CreditCurve],
                   linkage: Mapping[str, LinkageSpec], law: MarginalFactorLaw,
                   attach: float, detach: float, t: float) -> float:
    """Deterministic single-factor tranche ETL: exact summation over the law's atoms."""
    sl = _IndexSlice(index_portfolio, curves, linkage, t, law.support)
    pmf = law.pmf_at(t)
    mu, var = sl.moments(pmf)
    return float(pmf @ normal_etl(mu, var, attach, detach))
