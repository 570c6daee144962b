"""Full default-time Monte Carlo on co-monotone factor paths.

This is the brute-force validation engine for the semi-analytic pricer: it
simulates actual default times and evaluates the exact tranche payoff with
no normal approximation.  One correlated uniform vector is drawn per path
and reused across all horizons, so each factor path is the non-decreasing
co-monotone path through its marginal laws; given the path, every name
defaults independently at the first grid date where its own uniform falls
below the (increasing) conditional cumulative default profile.

Tranche prices depend only on the per-date joint distribution of default
indicators, so this engine and the semi-analytic pricer must agree within
Monte Carlo error; it is kept out of the production pricing path because
single-name risk converges hopelessly slowly through digital payoffs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from . import rng as rngmod
from .loss import PortfolioParams
from .market import EtlCurve, Portfolio, TrancheSpec
from .model import PricingModel

__all__ = ["DefaultScenario", "simulate_scenarios", "oracle_etl", "etl_from_scenarios"]

_PROFILE_TOL = 1e-9  # conditional-profile decreases beyond this abort the run

NO_DEFAULT = math.inf


@dataclass(frozen=True)
class DefaultScenario:
    """Simulated default times (inf if none) and realized market recoveries."""

    path_id: int
    issuer_ids: tuple[str, ...]
    default_times: np.ndarray
    recoveries: np.ndarray

    def __post_init__(self):
        dt = np.asarray(self.default_times, dtype=float)
        rec = np.asarray(self.recoveries, dtype=float)
        if dt.shape != (len(self.issuer_ids),) or rec.shape != dt.shape:
            raise ValueError("scenario arrays must align with issuer ids")
        if np.any(dt <= 0):
            raise ValueError("default times must be positive")
        if np.any((rec < 0) | (rec > 1)):
            raise ValueError("recoveries must lie in [0, 1]")
        dt.flags.writeable = False
        rec.flags.writeable = False
        object.__setattr__(self, "default_times", dt)
        object.__setattr__(self, "recoveries", rec)


class _ChunkSimulator:
    """Vectorized default-time simulation for one chunk of paths."""

    def __init__(self, portfolio: Portfolio, model: PricingModel, grid: Sequence[float]):
        self.portfolio = portfolio
        self.model = model
        self.grid = [float(t) for t in grid]
        if sorted(self.grid) != self.grid or len(set(self.grid)) != len(self.grid):
            raise ValueError("horizon grid must be strictly increasing")
        self.params = [PortfolioParams(portfolio, model, t) for t in self.grid]
        self.cdfs = [[model.laws[f].cdf_at(t) for f in model.factor_ids] for t in self.grid]
        self.supports = [model.laws[f].support for f in model.factor_ids]
        self.n_names = len(portfolio.constituents)
        self.n_factors = model.copula.n_factors

    def run(self, u_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (default date index or -1, realized recovery, defaulted-by masks).

        masks has shape (n_dates, n_paths, n_names): name defaulted by date m.
        """
        n = u_raw.shape[0]
        u_factor = self.model.copula.correlate_uniforms(u_raw[:, :self.n_factors])
        v_name = u_raw[:, self.n_factors:]
        tau_idx = np.full((n, self.n_names), -1, dtype=np.int64)
        recov = np.zeros((n, self.n_names))
        masks = np.zeros((len(self.grid), n, self.n_names), dtype=bool)
        profile_prev = np.zeros((n, self.n_names))
        for m, t in enumerate(self.grid):
            x = np.empty((n, self.n_factors))
            for i in range(self.n_factors):
                idx = np.searchsorted(self.cdfs[m][i], u_factor[:, i], side="left")
                x[:, i] = self.supports[i][idx]
            prof = self.params[m].conditional_probabilities(x)
            dip = profile_prev - prof
            worst = float(dip.max(initial=0.0))
            if worst > _PROFILE_TOL:
                j_bad = int(np.unravel_index(np.argmax(dip), dip.shape)[1])
                raise RuntimeError(
                    f"conditional default profile decreases by {worst:.3e} for issuer "
                    f"{self.portfolio.constituents[j_bad].issuer_id!r} at t={t}: "
                    "the factor laws / linkage are inconsistent in time")
            prof = np.maximum(prof, profile_prev)  # clamp float noise below tolerance
            newly = (v_name < prof) & (tau_idx < 0)
            if np.any(newly):
                mkt_lgd = self.params[m].market_loss_given_default(x)
                w = self.portfolio.weights
                rec_m = 1.0 - mkt_lgd / w[None, :]
                tau_idx[newly] = m
                recov[newly] = rec_m[newly]
            masks[m] = tau_idx >= 0
            profile_prev = prof
        return tau_idx, recov, masks


def simulate_scenarios(portfolio: Portfolio, model: PricingModel, horizon_grid: Sequence[float],
                       n_paths: int, seed: int) -> Iterator[DefaultScenario]:
    """Stream of per-path default scenarios (chunked internally)."""
    sim = _ChunkSimulator(portfolio, model, horizon_grid)
    ids = portfolio.issuer_ids
    grid = np.asarray(sim.grid)
    n_cols = sim.n_factors + sim.n_names
    for ci, a, b in rngmod.chunk_bounds(n_paths):
        u_raw = rngmod.uniform_chunk(seed, rngmod.STREAM_ORACLE, 0, ci, b - a, n_cols)
        tau_idx, recov, _ = sim.run(u_raw)
        times = np.where(tau_idx >= 0, grid[np.clip(tau_idx, 0, None)], NO_DEFAULT)
        for r in range(b - a):
            yield DefaultScenario(a + r, ids, times[r], recov[r])


def _tranche_loss(portfolio_loss: np.ndarray, attach: float, detach: float) -> np.ndarray:
    return (np.clip(portfolio_loss - attach, 0.0, None)
            - np.clip(portfolio_loss - detach, 0.0, None)) / (detach - attach)


def oracle_etl(portfolio: Portfolio, model: PricingModel, tranche: TrancheSpec,
               n_paths: int, seed: int,
               grid: Optional[Sequence[float]] = None) -> EtlCurve:
    """Empirical expected tranche loss curve from the default-time simulation."""
    grid = list(grid) if grid is not None else list(tranche.payment_grid)
    sim = _ChunkSimulator(portfolio, model, grid)
    w = portfolio.weights
    override = np.array([np.nan if c.recovery_override is None else c.recovery_override
                         for c in portfolio.constituents])
    n_cols = sim.n_factors + sim.n_names
    s1 = np.zeros(len(grid))
    s2 = np.zeros(len(grid))
    for ci, a, b in rngmod.chunk_bounds(n_paths):
        u_raw = rngmod.uniform_chunk(seed, rngmod.STREAM_ORACLE, 0, ci, b - a, n_cols)
        _, recov, masks = sim.run(u_raw)
        payout_rec = np.where(np.isnan(override)[None, :], recov, override[None, :])
        severity = w[None, :] * (1.0 - payout_rec)
        for m in range(len(grid)):
            loss = (severity * masks[m]).sum(axis=1)
            tl = _tranche_loss(loss, tranche.attach, tranche.detach)
            s1[m] += tl.sum()
            s2[m] += (tl * tl).sum()
    mean = s1 / n_paths
    var = np.maximum(s2 - n_paths * mean * mean, 0.0) / max(n_paths - 1, 1)
    se = np.sqrt(var / n_paths)
    return EtlCurve(tuple((t, mean[m], se[m]) for m, t in enumerate(grid)))


def etl_from_scenarios(scenarios: Iterable[DefaultScenario], portfolio: Portfolio,
                       tranche: TrancheSpec,
                       grid: Optional[Sequence[float]] = None) -> EtlCurve:
    """ETL curve from a scenario stream (slower than oracle_etl; API form)."""
    grid = list(grid) if grid is not None else list(tranche.payment_grid)
    w = portfolio.weights
    override = np.array([np.nan if c.recovery_override is None else c.recovery_override
                         for c in portfolio.constituents])
    s1 = np.zeros(len(grid))
    s2 = np.zeros(len(grid))
    n = 0
    for sc in scenarios:
        if sc.issuer_ids != portfolio.issuer_ids:
            raise ValueError("scenario issuers do not match the portfolio")
        payout_rec = np.where(np.isnan(override), sc.recoveries, override)
        severity = w * (1.0 - payout_rec)
        n += 1
        for m, t in enumerate(grid):
            loss = float((severity * (sc.default_times <= t)).sum())
            tl = float(_tranche_loss(np.asarray([loss]), tranche.attach, tranche.detach)[0])
            s1[m] += tl
            s2[m] += tl * tl
    if n == 0:
        raise ValueError("no scenarios supplied")
    mean = s1 / n
    var = np.maximum(s2 - n * mean * mean, 0.0) / max(n - 1, 1)
    se = np.sqrt(var / n)
    return EtlCurve(tuple((t, mean[m], se[m]) for m, t in enumerate(grid)))
