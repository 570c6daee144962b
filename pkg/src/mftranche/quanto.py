"""Quanto adjustment of tranche ETLs via the conditional loss gap.

Protection denominated in a foreign currency is worth more when the payout
currency strengthens exactly in the states where losses are large.  The
loss-side coordinate correlated with the exchange rate is the *conditional
loss gap*: the difference between the conditional expected losses of two
unit-notional reference portfolios given the factor draw.  Unlike the raw
realized-loss difference it carries no idiosyncratic noise, so it drops
straight into the semi-analytic simulation.

Two passes:

1. simulate the factor vector and record the conditional loss gap per draw,
   building its empirical marginal law at each horizon;
2. re-run the simulation, read each draw's gap percentile off the pass-1
   law, couple it to the FX rate through a bivariate Gaussian copula with
   correlation rho, and convert the conditional ETL pathwise.

The FX rate is lognormal with cumulative volatility scaling as
sigma * sqrt(t / T_ref) and E[FX_t] = 1 (no quanto drift), so at rho = 0 the
adjustment vanishes in expectation.  The passes use distinct random streams
so the empirical law is never evaluated on its own construction draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import norm

from . import rng as rngmod
from .factors import FactorDraw
from .loss import PortfolioParams
from .market import EtlCurve, Portfolio, TrancheSpec
from .model import PricingModel
from .pricer import SamcConfig, _DateEngine, _mean_stderr, _run_chunks

__all__ = [
    "FxSpec",
    "LossGapLaw",
    "QuantoResult",
    "conditional_loss_gap",
    "build_loss_gap_law",
    "quanto_etl",
]


@dataclass(frozen=True)
class FxSpec:
    """Lognormal FX with cumulative vol at a reference tenor and a gap correlation."""

    cumulative_vol: float
    corr: float
    ref_tenor: float = 5.0

    def __post_init__(self):
        if self.cumulative_vol < 0:
            raise ValueError("cumulative volatility must be non-negative")
        if not -1.0 <= self.corr <= 1.0:
            raise ValueError("correlation must lie in [-1, 1]")
        if self.ref_tenor <= 0:
            raise ValueError("reference tenor must be positive")

    def vol_at(self, t: float) -> float:
        return self.cumulative_vol * math.sqrt(t / self.ref_tenor)


@dataclass(frozen=True)
class LossGapLaw:
    """Empirical marginal law of the conditional loss gap at one horizon."""

    t: float
    samples: np.ndarray  # sorted

    def __post_init__(self):
        s = np.sort(np.asarray(self.samples, dtype=float))
        if s.size == 0:
            raise ValueError("empirical law needs at least one sample")
        s.flags.writeable = False
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "t", float(self.t))

    def u_of(self, values: np.ndarray) -> np.ndarray:
        """Midpoint-rank empirical CDF, clamped inside (0, 1)."""
        v = np.asarray(values, dtype=float)
        lo = np.searchsorted(self.samples, v, side="left")
        hi = np.searchsorted(self.samples, v, side="right")
        n = self.samples.size
        u = (lo + hi) / 2.0 / n
        return np.clip(u, 0.5 / n, 1.0 - 0.5 / n)


@dataclass(frozen=True)
class QuantoResult:
    base: EtlCurve
    quanto: EtlCurve
    adjustments: tuple[tuple[float, float, float], ...]  # (t, adjustment, stderr)


def _unit(portfolio: Portfolio) -> Portfolio:
    # conditional means are already fractions of the portfolio's own notional,
    # which is exactly the unit-notional convention the gap requires
    return portfolio


def conditional_loss_gap(draw: FactorDraw, portfolio_a: Portfolio, portfolio_b: Portfolio,
                         model: PricingModel) -> float:
    """Conditional expected loss of a minus that of b at the draw, unit notionals."""
    pa = PortfolioParams(_unit(portfolio_a), model, draw.t)
    pb = PortfolioParams(_unit(portfolio_b), model, draw.t)
    x = draw.values[None, :]
    return float(pa.moments(x)[0][0] - pb.moments(x)[0][0])


class _GapEngine:
    def __init__(self, portfolio_a: Portfolio, portfolio_b: Portfolio,
                 model: PricingModel, t: float):
        self.ea = _DateEngine(_unit(portfolio_a), model, t, use_cache=True)
        self.eb = _DateEngine(_unit(portfolio_b), model, t, use_cache=True)

    def gap(self, u: np.ndarray) -> np.ndarray:
        return self.ea.moments(u)[0] - self.eb.moments(u)[0]


def build_loss_gap_law(model: PricingModel, portfolio_a: Portfolio, portfolio_b: Portfolio,
                       t: float, n_paths: int, seed: int) -> LossGapLaw:
    """Pass 1: empirical law of the conditional loss gap over factor draws."""
    engine = _GapEngine(portfolio_a, portfolio_b, model, t)
    cfg = SamcConfig(n_paths=n_paths, seed=seed, stream=rngmod.STREAM_QUANTO_PASS1)

    def work(u_raw):
        return (engine.gap(model.copula.correlate_uniforms(u_raw)),)

    chunks = _run_chunks(cfg, 0, model.copula.n_factors, work)
    return LossGapLaw(t, np.concatenate([c[0] for c in chunks]))


def quanto_etl(portfolio: Portfolio, tranche: TrancheSpec, model: PricingModel,
               fx: FxSpec, gap_laws: Mapping[float, LossGapLaw],
               gap_portfolios: tuple[Portfolio, Portfolio],
               config: SamcConfig) -> QuantoResult:
    """Pass 2: base and currency-converted ETL curves plus the per-date adjustment.

    ``gap_laws`` maps each payment date to its pass-1 law.  Per path the gap
    percentile u is mapped to a standard normal, correlated with an
    independent normal via rho, and exponentiated into the unit-mean
    lognormal FX factor multiplying the conditional ETL.
    """
    portfolio_a, portfolio_b = gap_portfolios
    base_pts, quanto_pts, adj_pts = [], [], []
    n_cols = model.copula.n_factors + 1  # extra column drives the FX residual
    rho = fx.corr
    for di, t in enumerate(tranche.payment_grid):
        try:
            law = gap_laws[t]
        except KeyError:
            raise KeyError(f"no loss-gap law for horizon t={t}") from None
        engine = _DateEngine(portfolio, model, t, config.use_many_to_one)
        gap_engine = _GapEngine(portfolio_a, portfolio_b, model, t)
        s = fx.vol_at(t)

        def work(u_raw, _engine=engine, _gap=gap_engine, _law=law, _s=s):
            u = model.copula.correlate_uniforms(u_raw[:, :-1])
            etl = _engine.etl(u, tranche.attach, tranche.detach)
            z_gap = norm.ppf(_law.u_of(_gap.gap(u)))
            eps = norm.ppf(np.clip(u_raw[:, -1], 1e-12, 1.0 - 1e-12))
            z_fx = rho * z_gap + math.sqrt(max(1.0 - rho * rho, 0.0)) * eps
            fx_rate = np.exp(_s * z_fx - 0.5 * _s * _s)
            quanto = fx_rate * etl
            diff = quanto - etl
            return (float(etl.sum()), float((etl * etl).sum()),
                    float(quanto.sum()), float((quanto * quanto).sum()),
                    float(diff.sum()), float((diff * diff).sum()))

        cfg = SamcConfig(n_paths=config.n_paths, seed=config.seed,
                         use_many_to_one=config.use_many_to_one,
                         threads=config.threads, stream=rngmod.STREAM_QUANTO_PASS2)
        sums = _run_chunks(cfg, di, n_cols, work)
        n = config.n_paths
        b_mean, b_se = _mean_stderr([(x[0], x[1]) for x in sums], n)
        q_mean, q_se = _mean_stderr([(x[2], x[3]) for x in sums], n)
        a_mean, a_se = _mean_stderr([(x[4], x[5]) for x in sums], n)
        base_pts.append((t, b_mean, b_se))
        quanto_pts.append((t, q_mean, q_se))
        adj_pts.append((t, a_mean, a_se))
    return QuantoResult(EtlCurve(tuple(base_pts)), EtlCurve(tuple(quanto_pts)), tuple(adj_pts))
