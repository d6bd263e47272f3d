"""Posterior decision rules, the metric suite, and BIC-based model selection
over the component budget and the shrinkage scale."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple, Sequence

import numpy as np
from joblib import Parallel, delayed

from .core import GenotypeVector, ModelData, edge_pairs, marginal_log_likelihood
from .sampler import (
    NumericalAbortError,
    PosteriorSamples,
    SamplerConfig,
    align_chains,
    gelman_rubin,
    run_chain,
)

__all__ = [
    "FitSummary",
    "GridCell",
    "GridSearchResult",
    "Metrics",
    "bic_from_loglik",
    "bic_score",
    "compute_metrics",
    "declare_variant",
    "edge_intervals",
    "grid_search",
    "select_subnetworks",
    "significant_edges",
    "summarize_fit",
]


def _as_chains(samples) -> list[PosteriorSamples]:
    """Normalize to a list of chains, slot-aligned so per-component pooling
    is meaningful (slot labels are arbitrary per chain)."""
    if isinstance(samples, PosteriorSamples):
        return [samples]
    chains = list(samples)
    if not chains:
        raise ValueError("no posterior samples given")
    return align_chains(chains) if len(chains) > 1 else chains


def _pooled(chains: Sequence[PosteriorSamples], name: str) -> np.ndarray:
    return np.concatenate([getattr(c, name) for c in chains], axis=0)


def select_subnetworks(samples, cutoff: float = 0.5) -> list[int]:
    """Median-probability rule: component h is selected iff the posterior mean
    of its inclusion indicator strictly exceeds the cutoff."""
    tau_mean = _pooled(_as_chains(samples), "tau").mean(axis=0)
    return [int(h) for h in np.flatnonzero(tau_mean > cutoff)]


def declare_variant(selected: Sequence[int]) -> str:
    """'null' when no component survives selection, else 'risk'."""
    return "risk" if len(selected) else "null"


def edge_intervals(samples, level: float = 0.95):
    """Equal-tailed credible interval of every assembled effect-matrix edge."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    draws = _pooled(_as_chains(samples), "theta_edges")
    half = (1.0 - level) / 2.0
    lo, hi = np.quantile(draws, [half, 1.0 - half], axis=0)
    return lo, hi


def significant_edges(samples, level: float = 0.95) -> np.ndarray:
    """Boolean mask of edges whose credible interval excludes zero."""
    lo, hi = edge_intervals(samples, level)
    return (lo > 0.0) | (hi < 0.0)


class Metrics(NamedTuple):
    rmse: float
    sensitivity: float | None
    specificity: float | None


def compute_metrics(fit: "FitSummary", truth, dataset) -> Metrics:
    """Prediction-scale RMSE plus edge-selection sensitivity/specificity.

    RMSE averages (theta_hat - theta_true)_kl * z_i over subjects and
    unordered edges, i.e. the error of the genetic fixed-effect signal on the
    simulated genotypes. Sensitivity is undefined (None) under a null truth.
    """
    genotype = getattr(dataset, "genotype", dataset)
    if isinstance(genotype, GenotypeVector):
        z = genotype.standardized()
    else:
        z = np.asarray(genotype, dtype=np.float64)
    pairs = edge_pairs(truth.theta.shape[0])
    te_true = truth.theta[pairs[:, 0], pairs[:, 1]]
    diff = fit.edge_mean - te_true
    rmse = float(np.sqrt(np.mean((diff[:, None] * z[None, :]) ** 2)))

    sig = fit.significant
    support = truth.support
    n_support = int(support.sum())
    n_null = int((~support).sum())
    sen = float((sig & support).sum() / n_support) if n_support else None
    spe = float((~sig & ~support).sum() / n_null) if n_null else None
    return Metrics(rmse=rmse, sensitivity=sen, specificity=spe)


def bic_from_loglik(loglik: float, n_selected: int, n_nodes: int, n_eff: int) -> float:
    """-2 * loglik + d * log(n_eff) with d = (V + 1) per selected component."""
    return -2.0 * loglik + n_selected * (n_nodes + 1) * np.log(n_eff)


def _selected_edge_means(chains, selected):
    """Posterior mean of the effect matrix assembled from the selected
    components only, evaluated per draw then averaged."""
    pairs = edge_pairs(chains[0].n_nodes)
    eta = _pooled(chains, "eta")[:, selected]
    theta = _pooled(chains, "theta")[:, selected, :]
    te = np.einsum("kh,khe,khe->ke", eta,
                   theta[:, :, pairs[:, 0]], theta[:, :, pairs[:, 1]])
    return te.mean(axis=0)


def bic_score(data: ModelData, samples, cutoff: float = 0.5) -> float:
    """Plug-in BIC: likelihood at the selected-components posterior-mean effect
    matrix and posterior-mean variance field; effective sample size is the
    (projected) subject count times the edge count. Lower is better."""
    chains = _as_chains(samples)
    selected = select_subnetworks(chains, cutoff)
    if selected:
        te_hat = _selected_edge_means(chains, selected)
    else:
        te_hat = np.zeros(data.n_edges)
    sigma_a = _pooled(chains, "sigma_a").mean(axis=0)
    sigma_e = _pooled(chains, "sigma_e").mean(axis=0)
    ll = marginal_log_likelihood(data, te_hat, sigma_a, sigma_e)
    return float(bic_from_loglik(ll, len(selected), data.n_nodes,
                                 data.n_subjects * data.n_edges))


@dataclass
class FitSummary:
    """Everything the decision rules and reports need from a fit."""

    n_nodes: int
    n_components: int
    eta_mean: np.ndarray
    eta_sd: np.ndarray
    tau_mean: np.ndarray
    theta_mean: np.ndarray      # (V, V)
    edge_mean: np.ndarray       # (E,)
    edge_lo: np.ndarray
    edge_hi: np.ndarray
    significant: np.ndarray     # (E,) bool
    selected_components: tuple
    bic: float
    sigma_a_mean: np.ndarray
    sigma_e_mean: np.ndarray
    heritability_median: float
    log_likelihood_mean: float
    acceptance_sigma_a: float
    acceptance_sigma_e: float
    credible_level: float
    selection_cutoff: float
    n_kept_total: int
    rhat: dict | None = None
    rhat_constant: tuple = ()

    @property
    def n_selected(self) -> int:
        return len(self.selected_components)

    def significant_pairs(self) -> np.ndarray:
        return edge_pairs(self.n_nodes)[self.significant]

    def to_dict(self) -> dict:
        d = {
            "n_nodes": self.n_nodes,
            "n_components": self.n_components,
            "eta_mean": self.eta_mean.tolist(),
            "eta_sd": self.eta_sd.tolist(),
            "tau_mean": self.tau_mean.tolist(),
            "theta_mean": self.theta_mean.tolist(),
            "edge_mean": self.edge_mean.tolist(),
            "edge_lo": self.edge_lo.tolist(),
            "edge_hi": self.edge_hi.tolist(),
            "significant": [bool(s) for s in self.significant],
            "selected_components": list(self.selected_components),
            "bic": self.bic,
            "sigma_a_mean": self.sigma_a_mean.tolist(),
            "sigma_e_mean": self.sigma_e_mean.tolist(),
            "heritability_median": self.heritability_median,
            "log_likelihood_mean": self.log_likelihood_mean,
            "acceptance_sigma_a": self.acceptance_sigma_a,
            "acceptance_sigma_e": self.acceptance_sigma_e,
            "credible_level": self.credible_level,
            "selection_cutoff": self.selection_cutoff,
            "n_kept_total": self.n_kept_total,
            "rhat": self.rhat,
            "rhat_constant": list(self.rhat_constant),
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FitSummary":
        return cls(
            n_nodes=int(d["n_nodes"]),
            n_components=int(d["n_components"]),
            eta_mean=np.asarray(d["eta_mean"], dtype=float),
            eta_sd=np.asarray(d["eta_sd"], dtype=float),
            tau_mean=np.asarray(d["tau_mean"], dtype=float),
            theta_mean=np.asarray(d["theta_mean"], dtype=float),
            edge_mean=np.asarray(d["edge_mean"], dtype=float),
            edge_lo=np.asarray(d["edge_lo"], dtype=float),
            edge_hi=np.asarray(d["edge_hi"], dtype=float),
            significant=np.asarray(d["significant"], dtype=bool),
            selected_components=tuple(d["selected_components"]),
            bic=float(d["bic"]),
            sigma_a_mean=np.asarray(d["sigma_a_mean"], dtype=float),
            sigma_e_mean=np.asarray(d["sigma_e_mean"], dtype=float),
            heritability_median=float(d["heritability_median"]),
            log_likelihood_mean=float(d["log_likelihood_mean"]),
            acceptance_sigma_a=float(d["acceptance_sigma_a"]),
            acceptance_sigma_e=float(d["acceptance_sigma_e"]),
            credible_level=float(d["credible_level"]),
            selection_cutoff=float(d["selection_cutoff"]),
            n_kept_total=int(d["n_kept_total"]),
            rhat=d.get("rhat"),
            rhat_constant=tuple(d.get("rhat_constant", ())),
        )


def summarize_fit(chains, data: ModelData, level: float = 0.95,
                  cutoff: float = 0.5, rhat_seed: int = 0) -> FitSummary:
    """Pool the chains and compute every posterior summary the decision rules
    use. Component slots are aligned across chains by posterior weight first;
    R-hat is attached when two or more chains are available."""
    chains = _as_chains(chains)
    eta = _pooled(chains, "eta")
    tau = _pooled(chains, "tau")
    te = _pooled(chains, "theta_edges")
    sa = _pooled(chains, "sigma_a")
    se = _pooled(chains, "sigma_e")
    ll = _pooled(chains, "log_likelihood")

    v = chains[0].n_nodes
    edge_mean = te.mean(axis=0)
    lo, hi = edge_intervals(chains, level)
    sig = (lo > 0.0) | (hi < 0.0)
    selected = select_subnetworks(chains, cutoff)

    theta_mean = np.zeros((v, v))
    rows, cols = np.triu_indices(v, k=1)
    theta_mean[rows, cols] = edge_mean
    theta_mean[cols, rows] = edge_mean

    rhat = None
    constant = ()
    if len(chains) >= 2:
        gr = gelman_rubin(chains, seed=rhat_seed, align=False)
        rhat = gr.rhat
        constant = tuple(sorted(gr.constant))

    herit = np.median((sa / (sa + se)).mean(axis=0))
    return FitSummary(
        n_nodes=v,
        n_components=chains[0].n_components,
        eta_mean=eta.mean(axis=0),
        eta_sd=eta.std(axis=0, ddof=1) if eta.shape[0] > 1 else np.zeros(eta.shape[1]),
        tau_mean=tau.mean(axis=0),
        theta_mean=theta_mean,
        edge_mean=edge_mean,
        edge_lo=lo,
        edge_hi=hi,
        significant=sig,
        selected_components=tuple(selected),
        bic=bic_score(data, chains, cutoff),
        sigma_a_mean=sa.mean(axis=0),
        sigma_e_mean=se.mean(axis=0),
        heritability_median=float(herit),
        log_likelihood_mean=float(ll.mean()),
        acceptance_sigma_a=float(np.mean([c.acceptance_sigma_a for c in chains])),
        acceptance_sigma_e=float(np.mean([c.acceptance_sigma_e for c in chains])),
        credible_level=level,
        selection_cutoff=cutoff,
        n_kept_total=eta.shape[0],
        rhat=rhat,
        rhat_constant=constant,
    )


@dataclass
class GridCell:
    n_components: int
    nu: float
    bic: float | None
    summary: FitSummary | None
    error: str | None = None


@dataclass
class GridSearchResult:
    n_components: int
    nu: float
    summary: FitSummary
    cells: list


def _pick_best(cells: Sequence[GridCell]) -> GridCell:
    """Minimal BIC; exact ties break toward smaller H, then smaller nu."""
    ok = [c for c in cells if c.error is None]
    if not ok:
        raise RuntimeError("every grid cell failed; nothing to select")
    return min(ok, key=lambda c: (c.bic, c.n_components, c.nu))


def _fit_cell(data, config, cell_index, n_comp, nu, level, cutoff):
    hyper = replace(config.hyper, nu=float(nu))
    cfg = replace(config, hyper=hyper)
    try:
        chains = [
            run_chain(data, cfg, n_comp,
                      seed=np.random.SeedSequence(
                          cfg.seed, spawn_key=(cell_index, c)),
                      chain_index=c)
            for c in range(cfg.n_chains)
        ]
    except NumericalAbortError as err:
        return GridCell(n_components=n_comp, nu=float(nu), bic=None,
                        summary=None, error=str(err))
    summary = summarize_fit(chains, data, level=level, cutoff=cutoff)
    return GridCell(n_components=n_comp, nu=float(nu), bic=summary.bic,
                    summary=summary)


def grid_search(data: ModelData, h_grid, nu_grid, config: SamplerConfig,
                level: float = 0.95, cutoff: float = 0.5,
                n_jobs: int = 1) -> GridSearchResult:
    """One full fit per (H, nu) cell under seeds split from the master seed;
    aborted cells are skipped with a warning. Deterministic given the seed."""
    combos = [(h, nu) for h in h_grid for nu in nu_grid]
    if not combos:
        raise ValueError("empty model-selection grid")
    if n_jobs != 1 and len(combos) > 1:
        cells = Parallel(n_jobs=n_jobs)(
            delayed(_fit_cell)(data, config, i, h, nu, level, cutoff)
            for i, (h, nu) in enumerate(combos))
    else:
        cells = [_fit_cell(data, config, i, h, nu, level, cutoff)
                 for i, (h, nu) in enumerate(combos)]
    for cell in cells:
        if cell.error is not None:
            warnings.warn(
                f"grid cell (H={cell.n_components}, nu={cell.nu}) failed: "
                f"{cell.error}", RuntimeWarning)
    best = _pick_best(cells)
    return GridSearchResult(n_components=best.n_components, nu=best.nu,
                            summary=best.summary, cells=list(cells))
