"""Strict JSON input/output for market data, model files and targets.

Documents are validated field by field and unknown fields are rejected, so a
typo in an input file fails loudly instead of being silently ignored.  Factor
laws and copulas round-trip bit-exactly through save/load (JSON emits the
shortest repr of each float, which parses back to the identical double).
"""

from __future__ import annotations

import json
from typing import Mapping

import numpy as np

from .calibration import EtlTargetSurface
from .factors import FactorCopula, MarginalFactorLaw
from .linkage import LinkageSpec
from .market import Constituent, CreditCurve, Portfolio, RecoverySpec, TrancheSpec

__all__ = [
    "load_curves", "save_curves",
    "load_portfolio", "save_portfolio",
    "load_factor_laws", "save_factor_laws",
    "load_copula", "save_copula",
    "load_linkage", "save_linkage",
    "load_targets", "save_targets",
    "load_tranches", "save_tranches",
]


class SchemaError(ValueError):
    pass


def _check_fields(obj: dict, required: set, optional: set = frozenset(), where: str = "") -> None:
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected an object, got {type(obj).__name__}")
    missing = required - obj.keys()
    unknown = obj.keys() - required - optional
    if missing:
        raise SchemaError(f"{where}: missing fields {sorted(missing)}")
    if unknown:
        raise SchemaError(f"{where}: unknown fields {sorted(unknown)}")


def _read(path) -> object:
    with open(path) as fh:
        return json.load(fh)


def _write(path, doc) -> None:
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


# -- curves.json ----------------------------------------------------------------

def load_curves(path) -> dict[str, CreditCurve]:
    doc = _read(path)
    if not isinstance(doc, list):
        raise SchemaError("curves document must be an array")
    curves = {}
    for i, item in enumerate(doc):
        _check_fields(item, {"issuer_id", "pillars"}, where=f"curves[{i}]")
        pillars = []
        for j, p in enumerate(item["pillars"]):
            _check_fields(p, {"tenor", "pd"}, where=f"curves[{i}].pillars[{j}]")
            pillars.append((float(p["tenor"]), float(p["pd"])))
        curve = CreditCurve(str(item["issuer_id"]), tuple(pillars))
        if curve.issuer_id in curves:
            raise SchemaError(f"duplicate curve for issuer {curve.issuer_id!r}")
        curves[curve.issuer_id] = curve
    return curves


def save_curves(path, curves: Mapping[str, CreditCurve]) -> None:
    _write(path, [{"issuer_id": c.issuer_id,
                   "pillars": [{"tenor": t, "pd": p} for t, p in c.pillars]}
                  for c in curves.values()])


# -- portfolio.json --------------------------------------------------------------

def load_portfolio(path) -> Portfolio:
    doc = _read(path)
    if not isinstance(doc, list):
        raise SchemaError("portfolio document must be an array")
    constituents = []
    for i, item in enumerate(doc):
        _check_fields(item, {"issuer_id", "notional", "recovery"},
                      optional={"recovery_override"}, where=f"portfolio[{i}]")
        rec = item["recovery"]
        _check_fields(rec, {"kind"}, optional={"rate"}, where=f"portfolio[{i}].recovery")
        if rec["kind"] != "deterministic":
            raise SchemaError(f"portfolio[{i}]: recovery kind {rec['kind']!r} cannot be loaded "
                              "from JSON; conditional hooks are constructed programmatically")
        spec = RecoverySpec.fixed(float(rec.get("rate", 0.0)))
        override = item.get("recovery_override")
        constituents.append(Constituent(str(item["issuer_id"]), float(item["notional"]), spec,
                                        None if override is None else float(override)))
    return Portfolio(tuple(constituents))


def save_portfolio(path, portfolio: Portfolio) -> None:
    out = []
    for c in portfolio.constituents:
        if c.recovery.kind != "deterministic":
            raise SchemaError(f"{c.issuer_id!r}: conditional recovery hooks cannot be saved to JSON")
        item = {"issuer_id": c.issuer_id, "notional": c.notional,
                "recovery": {"kind": "deterministic", "rate": c.recovery.rate}}
        if c.recovery_override is not None:
            item["recovery_override"] = c.recovery_override
        out.append(item)
    _write(path, out)


# -- factors.json ----------------------------------------------------------------

def load_factor_laws(path) -> dict[str, MarginalFactorLaw]:
    doc = _read(path)
    if not isinstance(doc, list):
        raise SchemaError("factors document must be an array")
    laws = {}
    for i, item in enumerate(doc):
        _check_fields(item, {"factor_id", "tenors", "support", "probs"}, where=f"factors[{i}]")
        law = MarginalFactorLaw(str(item["factor_id"]), tuple(item["tenors"]),
                                np.asarray(item["support"], dtype=float),
                                np.asarray(item["probs"], dtype=float))
        if law.factor_id in laws:
            raise SchemaError(f"duplicate law for factor {law.factor_id!r}")
        laws[law.factor_id] = law
    return laws


def save_factor_laws(path, laws: Mapping[str, MarginalFactorLaw]) -> None:
    _write(path, [{"factor_id": law.factor_id, "tenors": list(law.tenors),
                   "support": law.support.tolist(), "probs": law.probs.tolist()}
                  for law in laws.values()])


# -- copula.json -----------------------------------------------------------------

def load_copula(path) -> FactorCopula:
    doc = _read(path)
    _check_fields(doc, {"factor_ids", "correlation"}, where="copula")
    return FactorCopula(tuple(doc["factor_ids"]), np.asarray(doc["correlation"], dtype=float))


def save_copula(path, copula: FactorCopula) -> None:
    _write(path, {"factor_ids": list(copula.factor_ids),
                  "correlation": copula.correlation.tolist()})


# -- linkage.json ----------------------------------------------------------------

def load_linkage(path) -> dict[str, LinkageSpec]:
    doc = _read(path)
    if not isinstance(doc, list):
        raise SchemaError("linkage document must be an array")
    specs = {}
    for i, item in enumerate(doc):
        _check_fields(item, {"issuer_id", "betas", "alpha"}, where=f"linkage[{i}]")
        spec = LinkageSpec(str(item["issuer_id"]),
                           {str(k): float(v) for k, v in item["betas"].items()},
                           float(item["alpha"]))
        if spec.issuer_id in specs:
            raise SchemaError(f"duplicate linkage for issuer {spec.issuer_id!r}")
        specs[spec.issuer_id] = spec
    return specs


def save_linkage(path, specs: Mapping[str, LinkageSpec]) -> None:
    _write(path, [{"issuer_id": s.issuer_id, "betas": dict(s.betas), "alpha": s.alpha}
                  for s in specs.values()])


# -- targets.json ----------------------------------------------------------------

def load_targets(path) -> EtlTargetSurface:
    doc = _read(path)
    _check_fields(doc, {"index_id", "tranches", "tenors", "etl"},
                  optional={"weights"}, where="targets")
    tranches = []
    for j, tr in enumerate(doc["tranches"]):
        _check_fields(tr, {"attach", "detach"}, where=f"targets.tranches[{j}]")
        tranches.append((float(tr["attach"]), float(tr["detach"])))
    weights = doc.get("weights")
    return EtlTargetSurface(str(doc["index_id"]), tuple(tranches), tuple(doc["tenors"]),
                            np.asarray(doc["etl"], dtype=float),
                            None if weights is None else np.asarray(weights, dtype=float))


def save_targets(path, targets: EtlTargetSurface) -> None:
    _write(path, {"index_id": targets.index_id,
                  "tranches": [{"attach": a, "detach": d} for a, d in targets.tranches],
                  "tenors": list(targets.tenors),
                  "etl": targets.targets.tolist(),
                  "weights": targets.weights.tolist()})


# -- tranches.json ---------------------------------------------------------------

def load_tranches(path) -> list[TrancheSpec]:
    doc = _read(path)
    if not isinstance(doc, list):
        raise SchemaError("tranches document must be an array")
    out = []
    for i, item in enumerate(doc):
        _check_fields(item, {"attach", "detach", "maturity"}, where=f"tranches[{i}]")
        out.append(TrancheSpec(float(item["attach"]), float(item["detach"]),
                               float(item["maturity"])))
    return out


def save_tranches(path, tranches) -> None:
    _write(path, [{"attach": t.attach, "detach": t.detach, "maturity": t.maturity}
                  for t in tranches])
