"""Assembled pricing model: curves, factor laws, copula and linkage, with caches.

The model holds all calibrated market inputs and lazily computes the
per-issuer (gamma, c, b) linkage values at each priced date, plus the joint
factor atoms used for multi-dimensional expectations.  Both caches are
keyed so that results are reproducible and can be persisted to disk; the
cache never changes values, only runtime.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import linkage as lk
from .factors import FactorCopula, MarginalFactorLaw
from .linkage import LinkageCalibration, LinkageSpec
from .market import CreditCurve, Portfolio

__all__ = ["PricingModel"]


@dataclass
class PricingModel:
    curves: Mapping[str, CreditCurve]
    laws: Mapping[str, MarginalFactorLaw]
    copula: FactorCopula
    linkage: Mapping[str, LinkageSpec]

    _link_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _atom_cache: dict = field(default_factory=dict, repr=False, compare=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def __post_init__(self):
        for fid in self.copula.factor_ids:
            if fid not in self.laws:
                raise KeyError(f"copula references factor {fid!r} without a marginal law")
        for issuer, spec in self.linkage.items():
            if issuer not in self.curves:
                raise KeyError(f"linkage for {issuer!r} has no credit curve")
            for fid in spec.betas:
                if fid not in self.copula.factor_ids:
                    raise KeyError(f"{issuer!r} loads on unknown factor {fid!r}")

    @property
    def factor_ids(self) -> tuple[str, ...]:
        return self.copula.factor_ids

    def spec_for(self, issuer_id: str) -> LinkageSpec:
        try:
            return self.linkage[issuer_id]
        except KeyError:
            raise KeyError(f"issuer {issuer_id!r} is not calibrated (no linkage spec)") from None

    def loading_atoms(self, issuer_id: str, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Discrete law of the issuer's factor loading at t (cached per factor subset)."""
        spec = self.spec_for(issuer_id)
        active = tuple(f for f, b in spec.betas.items() if b > 0)
        key = (round(t, 12), active)
        with self._lock:
            cached = self._atom_cache.get(key)
        if cached is None:
            from .factors import joint_atoms
            cached = joint_atoms(self.laws, self.copula, t, factor_ids=active)
            with self._lock:
                self._atom_cache[key] = cached
        pts, w = cached
        beta = np.array([spec.betas[f] for f in active])
        return pts @ beta, w

    def linkage_at(self, issuer_id: str, t: float) -> tuple[float, float, float]:
        """(gamma, c, b) for an issuer at date t, solving and caching on demand.

        The hazard budgets are evaluated exactly from the credit curve at
        every priced date and b is re-solved against the factor law at that
        date, so the tower property holds exactly on the whole grid.
        """
        key = (issuer_id, round(t, 12))
        with self._lock:
            cached = self._link_cache.get(key)
        if cached is not None:
            return cached
        spec = self.spec_for(issuer_id)
        curve = self.curves[issuer_id]
        p = curve.default_probability(t)
        h = curve.cumulative_hazard(t)
        gamma = float(lk.systemic_fraction(spec.alpha, h))
        c = float(lk.idiosyncratic_factor(gamma, p))
        if p == 0.0:
            b = 0.0
        else:
            systemic, _ = lk.hazard_budgets(spec.alpha, h)
            s_values, weights = self.loading_atoms(issuer_id, t)
            b = lk.solve_scaling(s_values, weights, systemic)
        with self._lock:
            self._link_cache[key] = (gamma, c, b)
        return gamma, c, b

    def calibration_for(self, issuer_id: str, grid: Sequence[float]) -> LinkageCalibration:
        vals = [self.linkage_at(issuer_id, t) for t in grid]
        return LinkageCalibration(issuer_id, tuple(grid),
                                  tuple(v[0] for v in vals), tuple(v[1] for v in vals),
                                  tuple(v[2] for v in vals))

    def precompute(self, issuer_ids: Sequence[str], grid: Sequence[float]) -> None:
        for issuer in issuer_ids:
            for t in grid:
                self.linkage_at(issuer, t)

    # -- single-factor (many-to-one) structure ---------------------------------

    def factor_of(self, issuer_id: str) -> Optional[str]:
        return self.spec_for(issuer_id).single_factor()

    def is_many_to_one(self, portfolio: Portfolio) -> bool:
        """True when every name loads on a single factor."""
        return all(self.factor_of(c.issuer_id) is not None for c in portfolio.constituents)

    # -- perturbed copies -------------------------------------------------------

    def with_copula(self, copula: FactorCopula) -> "PricingModel":
        return PricingModel(self.curves, self.laws, copula, self.linkage)

    def with_uniform_correlation(self, rho: float) -> "PricingModel":
        return self.with_copula(self.copula.with_uniform_correlation(rho))

    def with_bumped_curves(self, bump: float, mode: str = "additive",
                           issuer_ids: Optional[Sequence[str]] = None) -> "PricingModel":
        """Copy with hazard-bumped curves; factor laws stay frozen.

        ``additive`` shifts every pillar's cumulative hazard by bump * tenor
        (a parallel hazard-rate bump); ``multiplicative`` scales hazards by
        (1 + bump).  The linkage re-solves lazily against the new curves.
        """
        if mode not in ("additive", "multiplicative"):
            raise ValueError(f"unknown bump mode {mode!r}")
        targets = set(issuer_ids) if issuer_ids is not None else set(self.curves)
        new_curves = {}
        for issuer, curve in self.curves.items():
            if issuer not in targets:
                new_curves[issuer] = curve
                continue
            pillars = []
            for t, p in curve.pillars:
                h = -np.log1p(-p)
                h_new = h + bump * t if mode == "additive" else h * (1.0 + bump)
                if h_new < 0:
                    raise ValueError(f"bump drives {issuer!r} hazard negative at tenor {t}")
                p_new = float(-np.expm1(-h_new))
                if not 0.0 <= p_new < 1.0:
                    raise ValueError(f"bump drives {issuer!r} default probability out of [0, 1)")
                pillars.append((t, p_new))
            new_curves[issuer] = CreditCurve(issuer, tuple(pillars))
        return PricingModel(new_curves, self.laws, self.copula, self.linkage)

    # -- persistence ------------------------------------------------------------

    def market_hash(self) -> str:
        """Hash of all inputs that determine the linkage values."""
        payload = {
            "curves": {k: list(map(list, v.pillars)) for k, v in sorted(self.curves.items())},
            "laws": {k: {"tenors": list(v.tenors), "support": v.support.tolist(),
                         "probs": v.probs.tolist()} for k, v in sorted(self.laws.items())},
            "copula": {"factor_ids": list(self.copula.factor_ids),
                       "correlation": self.copula.correlation.tolist()},
            "linkage": {k: {"betas": dict(sorted(v.betas.items())), "alpha": v.alpha}
                        for k, v in sorted(self.linkage.items())},
        }
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()

    def save_linkage_cache(self, path) -> None:
        with self._lock:
            entries = [{"issuer_id": k[0], "t": k[1],
                        "gamma": v[0], "c": v[1], "b": v[2]}
                       for k, v in sorted(self._link_cache.items())]
        doc = {"market_hash": self.market_hash(), "entries": entries}
        with open(path, "w") as fh:
            json.dump(doc, fh)

    def load_linkage_cache(self, path) -> int:
        """Load cached linkage values; ignored (returns 0) on market-data mismatch."""
        with open(path) as fh:
            doc = json.load(fh)
        if doc.get("market_hash") != self.market_hash():
            return 0
        with self._lock:
            for e in doc["entries"]:
                self._link_cache[(e["issuer_id"], e["t"])] = (e["gamma"], e["c"], e["b"])
            return len(doc["entries"])
