"""Independent per-edge linear mixed model: the univariate comparator.

Each edge vector gets its own model a = beta * z + g + eps with
g ~ N(0, sigma_g * Lambda) and eps ~ N(0, sigma_eps * I). After rotating into
the kinship eigenbasis the likelihood is profiled over the variance ratio
delta = sigma_eps / sigma_g on a log grid refined by golden section; GLS at
the optimum gives beta, its standard error and a Wald p-value. Multiplicity
is handled by Bonferroni across edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .core import GenotypeVector, Kinship, ModelData

__all__ = ["EdgeLmmFit", "SingleEdgeFit", "fit_all_edges", "fit_edge_lmm"]

DELTA_GRID = np.logspace(-5.0, 5.0, 61)
_GOLDEN_ITERS = 40
_INVPHI = (np.sqrt(5.0) - 1.0) / 2.0


def _profile_stats(atil: np.ndarray, ztil: np.ndarray, d: np.ndarray,
                   delta: np.ndarray):
    """Per-edge GLS statistics at per-edge variance ratios.

    atil: (M, N) rotated edge vectors; delta: (M,). Returns (ll, beta,
    sigma_g, swz2) where swz2 is the genotype precision sum(z~^2 / (d+delta)).
    """
    n = ztil.size
    w = 1.0 / (d[None, :] + delta[:, None])
    zw = w * ztil[None, :]
    swz2 = zw @ ztil
    beta = np.einsum("en,en->e", zw, atil) / swz2
    resid = atil - beta[:, None] * ztil[None, :]
    sigma_g = np.einsum("en,en->e", w, resid * resid) / n
    sigma_g = np.maximum(sigma_g, 1e-300)
    ll = (-0.5 * n * (np.log(2.0 * np.pi) + np.log(sigma_g) + 1.0)
          + 0.5 * np.log(w).sum(axis=1))
    return ll, beta, sigma_g, swz2


def _profile_delta(atil: np.ndarray, ztil: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Profiled maximum-likelihood variance ratio per edge: coarse log grid,
    then golden-section refinement inside the bracketing grid cells. The
    result never scores below the best grid point."""
    m = atil.shape[0]
    grid_ll = np.empty((DELTA_GRID.size, m))
    for j, delta in enumerate(DELTA_GRID):
        grid_ll[j] = _profile_stats(atil, ztil, d, np.full(m, delta))[0]
    best = np.argmax(grid_ll, axis=0)
    log_grid = np.log(DELTA_GRID)
    lo = log_grid[np.maximum(best - 1, 0)]
    hi = log_grid[np.minimum(best + 1, DELTA_GRID.size - 1)]

    x1 = hi - _INVPHI * (hi - lo)
    x2 = lo + _INVPHI * (hi - lo)
    f1 = _profile_stats(atil, ztil, d, np.exp(x1))[0]
    f2 = _profile_stats(atil, ztil, d, np.exp(x2))[0]
    for _ in range(_GOLDEN_ITERS):
        left = f1 > f2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x1 = hi - _INVPHI * (hi - lo)
        x2 = lo + _INVPHI * (hi - lo)
        # one fresh evaluation per edge; the other interior value carries over
        probe = np.where(left, x1, x2)
        f_probe = _profile_stats(atil, ztil, d, np.exp(probe))[0]
        f1_old = f1
        f1 = np.where(left, f_probe, f2)
        f2 = np.where(left, f1_old, f_probe)
    refined = np.exp(0.5 * (lo + hi))

    ll_ref = _profile_stats(atil, ztil, d, refined)[0]
    ll_grid_best = grid_ll[best, np.arange(m)]
    return np.where(ll_ref >= ll_grid_best, refined, DELTA_GRID[best])


@dataclass(frozen=True)
class SingleEdgeFit:
    beta: float
    se: float
    pvalue: float
    sigma_g: float
    sigma_eps: float
    delta: float


@dataclass(frozen=True)
class EdgeLmmFit:
    """Per-edge estimates across the whole network, plus the Bonferroni call."""

    beta: np.ndarray       # (E,)
    se: np.ndarray
    pvalue: np.ndarray
    sigma_g: np.ndarray
    sigma_eps: np.ndarray
    delta: np.ndarray
    significant: np.ndarray  # (E,) bool
    skipped: tuple
    bonferroni_alpha: float
    n_nodes: int


def _fit_rotated(atil: np.ndarray, ztil: np.ndarray, d: np.ndarray):
    delta = _profile_delta(atil, ztil, d)
    ll, beta, sigma_g, swz2 = _profile_stats(atil, ztil, d, delta)
    se = np.sqrt(sigma_g / swz2)
    zstat = np.where(se > 0, beta / se, 0.0)
    pvalue = np.clip(2.0 * ndtr(-np.abs(zstat)), np.finfo(float).tiny, 1.0)
    return beta, se, pvalue, sigma_g, sigma_g * delta, delta, ll


def fit_edge_lmm(edge_values, genotype, kinship: Kinship) -> SingleEdgeFit:
    """Maximum-likelihood mixed-model fit of one (already projected) edge."""
    a = np.asarray(edge_values, dtype=np.float64)
    if isinstance(genotype, GenotypeVector):
        z = genotype.standardized()
    else:
        z = np.asarray(genotype, dtype=np.float64)
    if a.shape != z.shape or a.size != kinship.n_subjects:
        raise ValueError("edge, genotype and kinship sizes disagree")
    if np.var(a) == 0.0:
        raise ValueError("edge has zero variance; nothing to fit")
    q = kinship.eigenvectors
    atil = (q.T @ a)[None, :]
    ztil = q.T @ z
    beta, se, p, sg, s_eps, delta, _ = _fit_rotated(atil, ztil, kinship.eigenvalues)
    return SingleEdgeFit(beta=float(beta[0]), se=float(se[0]),
                         pvalue=float(p[0]), sigma_g=float(sg[0]),
                         sigma_eps=float(s_eps[0]), delta=float(delta[0]))


def fit_all_edges(data: ModelData, alpha: float = 0.05) -> EdgeLmmFit:
    """Fit every edge independently; an edge is significant iff its Wald
    p-value clears alpha / E. Zero-variance edges are skipped with NaN
    estimates and p = 1."""
    q = data.kinship.eigenvectors
    d = data.kinship.eigenvalues
    ztil = q.T @ data.genotype
    e_count = data.n_edges

    keep = data.edges.var(axis=1) > 0.0
    skipped = tuple(int(i) for i in np.flatnonzero(~keep))

    beta = np.full(e_count, np.nan)
    se = np.full(e_count, np.nan)
    pvalue = np.ones(e_count)
    sigma_g = np.full(e_count, np.nan)
    sigma_eps = np.full(e_count, np.nan)
    delta = np.full(e_count, np.nan)

    if keep.any():
        atil = data.edges[keep] @ q
        b, s, p, sg, s_eps, dlt, _ = _fit_rotated(atil, ztil, d)
        beta[keep], se[keep], pvalue[keep] = b, s, p
        sigma_g[keep], sigma_eps[keep], delta[keep] = sg, s_eps, dlt

    threshold = alpha / e_count
    significant = pvalue < threshold
    return EdgeLmmFit(beta=beta, se=se, pvalue=pvalue, sigma_g=sigma_g,
                      sigma_eps=sigma_eps, delta=delta, significant=significant,
                      skipped=skipped, bonferroni_alpha=alpha,
                      n_nodes=data.n_nodes)
