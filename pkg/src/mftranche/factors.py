"""Discrete marginal laws of the market factors and their Gaussian coupling.

Each market factor X^i_t is a non-negative increasing process observed
through its marginal distribution per tenor: a probability mass function on
a fixed ascending support grid (shared across tenors for that factor).  The
increasing-process property translates into a pointwise cross-tenor CDF
constraint: for t1 < t2 and every x, CDF_t1(x) >= CDF_t2(x).

The joint distribution across factors at a fixed horizon is specified by a
Gaussian copula on the marginal laws.  A draw is produced by mapping
independent normals through the correlation loading, converting to uniforms,
and inverting each factor's marginal CDF (generalized inverse).

Intermediate horizons between calibrated tenors use linear interpolation of
the CDF in t; outside the calibrated range the nearest tenor's law is held
flat.  Flat extension below the first tenor is deliberate: it guarantees the
conditional cumulative default profile stays monotone along co-monotone
factor paths on that segment, which the default-time simulation requires.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm, qmc

__all__ = [
    "MarginalFactorLaw",
    "FactorCopula",
    "FactorDraw",
    "ComonotoneReduction",
    "sample_joint",
    "comonotone_path",
    "expectation",
    "joint_atoms",
    "reduce_if_comonotone",
    "default_support",
    "UNIFORM_CLIP",
]

# clamp for copula uniforms at the boundaries, per design: u in [1e-12, 1-1e-12]
UNIFORM_CLIP = 1e-12

_SOBOL_LOG2_POINTS = 16  # deterministic quadrature size for 3+ factor expectations
_SOBOL_SEED = 20121  # fixed scramble seed: part of the numerical contract


def default_support(n_atoms: int = 64, x_min: float = 0.02, x_max: float = 40.0) -> np.ndarray:
    """Default factor support: an atom at zero then a geometric grid."""
    if n_atoms < 2:
        raise ValueError("need at least two atoms")
    return np.concatenate([[0.0], np.geomspace(x_min, x_max, n_atoms - 1)])


@dataclass(frozen=True)
class MarginalFactorLaw:
    """Per-tenor discrete distribution of one market factor on a fixed support.

    probs[m][k] is the probability that X at tenors[m] equals support[k].
    """

    factor_id: str
    tenors: tuple[float, ...]
    support: np.ndarray
    probs: np.ndarray  # shape (n_tenors, n_atoms)

    def __post_init__(self):
        tenors = tuple(float(t) for t in self.tenors)
        support = np.asarray(self.support, dtype=float).copy()
        probs = np.atleast_2d(np.asarray(self.probs, dtype=float)).copy()
        if sorted(tenors) != list(tenors) or len(set(tenors)) != len(tenors) or (tenors and tenors[0] <= 0):
            raise ValueError(f"law {self.factor_id!r}: tenors must be positive and strictly increasing")
        if support.ndim != 1 or len(support) < 1:
            raise ValueError(f"law {self.factor_id!r}: support must be a 1-d grid")
        if np.any(support < 0) or np.any(np.diff(support) <= 0):
            raise ValueError(f"law {self.factor_id!r}: support must be non-negative and ascending")
        if probs.shape != (len(tenors), len(support)):
            raise ValueError(f"law {self.factor_id!r}: probs shape {probs.shape} does not match "
                             f"({len(tenors)}, {len(support)})")
        if np.any(probs < -1e-12):
            raise ValueError(f"law {self.factor_id!r}: negative probabilities")
        probs = np.clip(probs, 0.0, None)
        sums = probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError(f"law {self.factor_id!r}: probabilities must sum to one per tenor")
        probs /= sums[:, None]
        cdf = np.cumsum(probs, axis=1)
        # increasing process: CDFs ordered pointwise across tenors
        if np.any(np.diff(cdf, axis=0) > 1e-9):
            raise ValueError(f"law {self.factor_id!r}: cross-tenor CDF monotonicity violated "
                             "(X must be an increasing process)")
        support.flags.writeable = False
        probs.flags.writeable = False
        object.__setattr__(self, "tenors", tenors)
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    def pmf_at(self, t: float) -> np.ndarray:
        """PMF at horizon t: linear CDF interpolation in t, flat outside the tenor range."""
        if t <= 0:
            raise ValueError("t must be positive")
        ts = self.tenors
        if t <= ts[0]:
            return self.probs[0]
        if t >= ts[-1]:
            return self.probs[-1]
        j = int(np.searchsorted(ts, t, side="right"))
        w = (t - ts[j - 1]) / (ts[j] - ts[j - 1])
        # CDF interpolation on a shared support grid == PMF interpolation
        return (1.0 - w) * self.probs[j - 1] + w * self.probs[j]

    def cdf_at(self, t: float) -> np.ndarray:
        cdf = np.cumsum(self.pmf_at(t))
        cdf[-1] = 1.0
        return cdf

    def inverse_cdf(self, u, t: float):
        """Generalized inverse CDF: smallest atom x with CDF(x) >= u."""
        cdf = self.cdf_at(t)
        idx = np.searchsorted(cdf, np.clip(u, UNIFORM_CLIP, 1.0 - UNIFORM_CLIP), side="left")
        return self.support[idx]

    def mean_at(self, t: float) -> float:
        return float(self.pmf_at(t) @ self.support)

    def rescaled(self, scale: float) -> "MarginalFactorLaw":
        """Multiply the support by ``scale`` (models have no absolute factor scale)."""
        if scale <= 0:
            raise ValueError("scale must be positive")
        return MarginalFactorLaw(self.factor_id, self.tenors, self.support * scale, self.probs)

    def normalized(self) -> "MarginalFactorLaw":
        """Rescale so the mean at the last tenor equals one."""
        m = self.mean_at(self.tenors[-1])
        if m <= 0:
            raise ValueError(f"law {self.factor_id!r}: cannot normalize a zero-mean law")
        return self.rescaled(1.0 / m)


@dataclass(frozen=True)
class FactorCopula:
    """Gaussian coupling of the market factors: correlation matrix with unit diagonal."""

    factor_ids: tuple[str, ...]
    correlation: np.ndarray

    def __post_init__(self):
        ids = tuple(self.factor_ids)
        corr = np.asarray(self.correlation, dtype=float).copy()
        n = len(ids)
        if len(set(ids)) != n or n == 0:
            raise ValueError("factor ids must be unique and non-empty")
        if corr.shape != (n, n):
            raise ValueError(f"correlation shape {corr.shape} does not match {n} factors")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise ValueError("correlation matrix must be symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise ValueError("correlation diagonal must be one")
        if np.any(np.abs(corr) > 1.0 + 1e-12):
            raise ValueError("correlations must lie in [-1, 1]")
        if np.linalg.eigvalsh(corr).min() < -1e-10:
            raise ValueError("correlation matrix is not positive semi-definite")
        corr.flags.writeable = False
        object.__setattr__(self, "factor_ids", ids)
        object.__setattr__(self, "correlation", corr)

    @property
    def n_factors(self) -> int:
        return len(self.factor_ids)

    def is_comonotone(self) -> bool:
        return bool(np.all(self.correlation >= 1.0 - 1e-12))

    def loading_matrix(self) -> np.ndarray:
        """Matrix A with A A^T = correlation, applied to independent normals."""
        if self.is_comonotone():
            # exact single-driver factorization: every component equals z_1
            a = np.zeros((self.n_factors, self.n_factors))
            a[:, 0] = 1.0
            return a
        try:
            return np.linalg.cholesky(self.correlation)
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(self.correlation)
            return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))

    def correlate_uniforms(self, u_raw: np.ndarray) -> np.ndarray:
        """Map raw iid uniforms (n, d) to copula-correlated uniforms (n, d).

        The fully comonotone case copies the first column exactly (no
        normal-space round trip), so a correlation-one model is driven by a
        genuinely single uniform.
        """
        u_raw = np.clip(u_raw, UNIFORM_CLIP, 1.0 - UNIFORM_CLIP)
        if self.is_comonotone():
            return np.repeat(u_raw[:, :1], self.n_factors, axis=1)
        z = norm.ppf(u_raw)
        # einsum keeps the reduction single-threaded and bit-reproducible
        zc = np.einsum("nk,ik->ni", z, self.loading_matrix())
        return np.clip(norm.cdf(zc), UNIFORM_CLIP, 1.0 - UNIFORM_CLIP)

    def with_uniform_correlation(self, rho: float) -> "FactorCopula":
        n = self.n_factors
        corr = np.full((n, n), float(rho))
        np.fill_diagonal(corr, 1.0)
        return FactorCopula(self.factor_ids, corr)

    @staticmethod
    def uniform(factor_ids: Sequence[str], rho: float) -> "FactorCopula":
        n = len(factor_ids)
        corr = np.full((n, n), float(rho))
        np.fill_diagonal(corr, 1.0)
        return FactorCopula(tuple(factor_ids), corr)


@dataclass(frozen=True)
class FactorDraw:
    """One realization of the factor vector at horizon t."""

    t: float
    factor_ids: tuple[str, ...]
    values: np.ndarray
    uniforms: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        uniforms = np.asarray(self.uniforms, dtype=float)
        if values.shape != (len(self.factor_ids),) or uniforms.shape != values.shape:
            raise ValueError("draw vectors must align with factor ids")
        if np.any(values < 0):
            raise ValueError("factor values must be non-negative")
        values.flags.writeable = False
        uniforms.flags.writeable = False
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "uniforms", uniforms)
        object.__setattr__(self, "factor_ids", tuple(self.factor_ids))

    def value_map(self) -> dict[str, float]:
        return dict(zip(self.factor_ids, self.values))


def _law_for(laws: Mapping[str, MarginalFactorLaw], factor_id: str) -> MarginalFactorLaw:
    try:
        return laws[factor_id]
    except KeyError:
        raise KeyError(f"no marginal law for factor {factor_id!r}") from None


def sample_joint(copula: FactorCopula, laws: Mapping[str, MarginalFactorLaw],
                 t: float, rng: np.random.Generator) -> FactorDraw:
    """Draw one correlated factor vector at horizon t."""
    u_raw = rng.random((1, copula.n_factors))
    u = copula.correlate_uniforms(u_raw)[0]
    values = np.array([_law_for(laws, fid).inverse_cdf(u[i], t)
                       for i, fid in enumerate(copula.factor_ids)])
    return FactorDraw(t, copula.factor_ids, values, u)


def comonotone_path(laws: Mapping[str, MarginalFactorLaw], u: float,
                    ts: Optional[Sequence[float]] = None) -> dict[str, np.ndarray]:
    """Factor paths over time for a fixed uniform: X_t = inverse-CDF_t(u).

    Because cross-tenor CDFs are ordered, each path is non-decreasing in t.
    """
    if not 0.0 < u < 1.0:
        raise ValueError("u must lie strictly inside (0, 1)")
    out = {}
    for fid, law in laws.items():
        grid = tuple(ts) if ts is not None else law.tenors
        out[fid] = np.array([law.inverse_cdf(u, t) for t in grid])
    return out


def _bivariate_normal_cdf(h: np.ndarray, k: np.ndarray, rho: float) -> np.ndarray:
    """P(Z1 <= h_i, Z2 <= k_j) on the grid (h x k) for standard bivariate normals.

    Uses Gauss-Legendre quadrature of the conditional-normal representation
    Phi2(h, k) = int_{-inf}^{h} phi(z) Phi((k - rho z) / sqrt(1 - rho^2)) dz,
    accurate to ~1e-12 away from |rho| = 1; node count grows as |rho| -> 1.
    """
    s = math.sqrt(max(1.0 - rho * rho, 0.0))
    n_nodes = min(4000, max(200, int(48.0 / max(s, 1e-12))))
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    out = np.zeros((len(h), len(k)))
    lo = -8.5
    for i, hi in enumerate(h):
        if hi <= lo:
            continue
        z = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        w = 0.5 * (hi - lo) * weights * norm.pdf(z)
        out[i, :] = (norm.cdf((k[None, :] - rho * z[:, None]) / s) * w[:, None]).sum(axis=0)
    return out


def _bivariate_copula_cdf(levels_a: np.ndarray, levels_b: np.ndarray, rho: float) -> np.ndarray:
    """Gaussian copula CDF C(u, v) on the grid of marginal CDF levels."""
    if abs(rho) >= 1.0 - 1e-12:
        ua, vb = np.meshgrid(levels_a, levels_b, indexing="ij")
        return np.minimum(ua, vb) if rho > 0 else np.clip(ua + vb - 1.0, 0.0, None)
    out = np.zeros((len(levels_a), len(levels_b)))
    ia = (levels_a > 0) & (levels_a < 1)
    ib = (levels_b > 0) & (levels_b < 1)
    za = norm.ppf(levels_a[ia])
    zb = norm.ppf(levels_b[ib])
    if za.size and zb.size:
        out[np.ix_(ia, ib)] = _bivariate_normal_cdf(za, zb, rho)
    # boundaries: C(0, .) = C(., 0) = 0, C(1, v) = v, C(u, 1) = u
    out[levels_a >= 1.0, :] = levels_b[None, :]
    out[:, levels_b >= 1.0] = levels_a[:, None]
    out[levels_a <= 0.0, :] = 0.0
    out[:, levels_b <= 0.0] = 0.0
    return out


def joint_atoms(laws: Mapping[str, MarginalFactorLaw], copula: FactorCopula, t: float,
                factor_ids: Optional[Sequence[str]] = None) -> tuple[np.ndarray, np.ndarray]:
    """Discrete approximation of the joint factor law at t.

    Returns (points, weights): points has one row per atom of the joint law
    (columns ordered like ``factor_ids``), weights sum to one.  Exact for one
    or two factors (tensor summation with Gaussian-copula cell probabilities);
    three or more factors use a deterministic scrambled-Sobol quadrature.
    """
    fids = tuple(factor_ids) if factor_ids is not None else copula.factor_ids
    idx = [copula.factor_ids.index(f) for f in fids]
    d = len(fids)
    if d == 1:
        law = _law_for(laws, fids[0])
        pmf = law.pmf_at(t)
        keep = pmf > 0
        return law.support[keep, None].copy(), pmf[keep].copy()
    if d == 2:
        la, lb = _law_for(laws, fids[0]), _law_for(laws, fids[1])
        rho = float(copula.correlation[idx[0], idx[1]])
        fa = np.concatenate([[0.0], np.cumsum(la.pmf_at(t))])
        fb = np.concatenate([[0.0], np.cumsum(lb.pmf_at(t))])
        fa[-1] = fb[-1] = 1.0
        cop = _bivariate_copula_cdf(fa, fb, rho)
        cell = cop[1:, 1:] - cop[:-1, 1:] - cop[1:, :-1] + cop[:-1, :-1]
        cell = np.clip(cell, 0.0, None)
        cell /= cell.sum()
        xa, xb = np.meshgrid(la.support, lb.support, indexing="ij")
        keep = cell.ravel() > 0
        pts = np.column_stack([xa.ravel(), xb.ravel()])[keep]
        return pts, cell.ravel()[keep]
    sub_corr = copula.correlation[np.ix_(idx, idx)]
    sub = FactorCopula(fids, sub_corr)
    if sub.is_comonotone():
        # exact one-dimensional summation over the merged CDF segments
        red = ComonotoneReduction(fids, tuple(_law_for(laws, fid) for fid in fids))
        w, pts = red.segments(t)
        return pts, w
    # 3+ factors: deterministic low-discrepancy quadrature of the copula integral
    sob = qmc.Sobol(d=d, scramble=True, seed=_SOBOL_SEED)
    u_raw = sob.random_base2(_SOBOL_LOG2_POINTS)
    u = sub.correlate_uniforms(u_raw)
    pts = np.column_stack([_law_for(laws, fid).inverse_cdf(u[:, i], t) for i, fid in enumerate(fids)])
    w = np.full(len(pts), 1.0 / len(pts))
    return pts, w


def expectation(laws: Mapping[str, MarginalFactorLaw], copula: FactorCopula, t: float,
                f: Callable[[Mapping[str, np.ndarray]], np.ndarray]) -> float:
    """E[f(X_t)] over the joint factor law.

    ``f`` receives a mapping factor_id -> array of atom values and must
    return an array of the same length (elementwise functional).
    """
    pts, w = joint_atoms(laws, copula, t)
    values = np.asarray(f({fid: pts[:, i] for i, fid in enumerate(copula.factor_ids)}), dtype=float)
    return float(w @ values)


@dataclass(frozen=True)
class ComonotoneReduction:
    """Single-driver representation of a fully correlated factor set.

    With all pairwise correlations at one, a single uniform u drives every
    factor through its own monotone inverse CDF, so unconditional quantities
    become one-dimensional integrals evaluable by exact summation.
    """

    factor_ids: tuple[str, ...]
    laws: tuple[MarginalFactorLaw, ...]

    def values_at(self, u, t: float) -> np.ndarray:
        """Factor matrix for driver uniforms u: shape (len(u), n_factors)."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.column_stack([law.inverse_cdf(u, t) for law in self.laws])

    def segments(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Exact quadrature of the driver uniform: (weights, factor matrix).

        Partitions (0, 1] at the union of all factors' CDF levels; within a
        segment every factor value is constant.
        """
        levels = np.unique(np.concatenate([law.cdf_at(t) for law in self.laws] + [np.array([0.0, 1.0])]))
        levels = levels[(levels > 0.0) & (levels <= 1.0)]
        lo = np.concatenate([[0.0], levels[:-1]])
        weights = levels - lo
        mids = 0.5 * (lo + levels)
        return weights, self.values_at(mids, t)


def reduce_if_comonotone(copula: FactorCopula,
                         laws: Mapping[str, MarginalFactorLaw]) -> Optional[ComonotoneReduction]:
    """Single-factor representation when all correlations equal one, else None."""
    if not copula.is_comonotone():
        return None
    return ComonotoneReduction(copula.factor_ids,
                               tuple(_law_for(laws, fid) for fid in copula.factor_ids))
