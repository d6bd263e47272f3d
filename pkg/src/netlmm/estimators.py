"""Estimator front-ends with the scikit-learn fit/predict surface.

``X`` is the raw dosage vector for one variant, shape (n_subjects,) or
(n_subjects, 1); ``y`` is the network phenotype, either subject-major edge
rows (n_subjects, E) in canonical (k < l) order or a stack of symmetric
hollow matrices (n_subjects, V, V). Kinship and covariates enter through
``fit`` keyword arguments; both estimators project covariates out before
fitting and standardize dosages with the training mean/scale.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator

from . import baseline as _baseline
from .core import (
    GenotypeVector,
    HyperParams,
    Kinship,
    ModelData,
    NetworkPhenotype,
    edge_pairs,
)
from .projection import CovariateMatrix, prepare_model_data
from .sampler import SamplerConfig, run_chains
from .selection import summarize_fit

__all__ = ["EdgewiseLMM", "NetworkMixedModel"]


def _check_genotype(X) -> np.ndarray:
    x = np.asarray(X, dtype=np.float64)
    if x.ndim == 2:
        if x.shape[1] != 1:
            raise ValueError("expected a single genotype column")
        x = x[:, 0]
    if x.ndim != 1:
        raise ValueError("genotype must be a vector or single-column matrix")
    return x


def _check_network(y, n_subjects: int) -> NetworkPhenotype:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 3:
        phen = NetworkPhenotype.from_matrices(y)
    elif y.ndim == 2:
        phen = NetworkPhenotype.from_edge_rows(y)
    else:
        raise ValueError("y must be (n, E) edge rows or an (n, V, V) stack")
    if phen.n_subjects != n_subjects:
        raise ValueError("X and y disagree on the number of subjects")
    return phen


def _prepare(x: np.ndarray, y, kinship, covariates, snp_id: str):
    phen = _check_network(y, x.size)
    genotype = GenotypeVector(x, snp_id=snp_id)
    if kinship is None:
        kin = Kinship.identity(x.size)
    elif isinstance(kinship, Kinship):
        kin = kinship
    else:
        kin = Kinship.from_matrix(kinship)
    cov = None
    if covariates is not None:
        cov = covariates if isinstance(covariates, CovariateMatrix) \
            else CovariateMatrix(np.asarray(covariates, dtype=np.float64))
    return prepare_model_data(phen, genotype, kin, cov), phen


class NetworkMixedModel(BaseEstimator):
    """Network-response mixed model with sparse rank-one effect components.

    Hyperparameters mirror the sampler priors: ``n_components`` is the
    component budget H, ``nu`` the Laplace shrinkage rate on loadings,
    ``omega`` the slab variance of component weights, and (``ig_shape``,
    ``ig_scale``) the inverse-gamma prior on the per-edge variances. ``fit``
    runs ``n_chains`` MCMC chains and pools them for inference.
    """

    def __init__(self, n_components=3, nu=1.0, omega=1.0, spike_constant=100.0,
                 ig_shape=0.01, ig_scale=0.01, tau_prior=0.5,
                 n_iterations=7000, burn_in=2000, thinning=1, n_chains=1,
                 mh_step_a=0.1, mh_step_e=0.1, adapt_mh=True,
                 credible_level=0.95, selection_cutoff=0.5,
                 random_state=0, n_jobs=1):
        self.n_components = n_components
        self.nu = nu
        self.omega = omega
        self.spike_constant = spike_constant
        self.ig_shape = ig_shape
        self.ig_scale = ig_scale
        self.tau_prior = tau_prior
        self.n_iterations = n_iterations
        self.burn_in = burn_in
        self.thinning = thinning
        self.n_chains = n_chains
        self.mh_step_a = mh_step_a
        self.mh_step_e = mh_step_e
        self.adapt_mh = adapt_mh
        self.credible_level = credible_level
        self.selection_cutoff = selection_cutoff
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _sampler_config(self) -> SamplerConfig:
        hyper = HyperParams(omega=self.omega, nu=self.nu, alpha=self.ig_shape,
                            beta=self.ig_scale, spike_constant=self.spike_constant,
                            rho1=self.mh_step_a, rho2=self.mh_step_e,
                            tau_prior=self.tau_prior)
        return SamplerConfig(n_iterations=self.n_iterations, burn_in=self.burn_in,
                             thinning=self.thinning, n_chains=self.n_chains,
                             seed=self.random_state, hyper=hyper,
                             adapt_mh=self.adapt_mh)

    def fit(self, X, y, kinship=None, covariates=None, snp_id="snp"):
        x = _check_genotype(X)
        data, phen = _prepare(x, y, kinship, covariates, snp_id)
        config = self._sampler_config()
        chains = run_chains(data, config, n_components=self.n_components,
                            n_jobs=self.n_jobs)
        summary = summarize_fit(chains, data, level=self.credible_level,
                                cutoff=self.selection_cutoff)
        self.genotype_mean_ = float(x.mean())
        self.genotype_scale_ = float(x.std())
        self.n_nodes_ = phen.n_nodes
        self.data_ = data
        self.chains_ = chains
        self.summary_ = summary
        self.theta_mean_ = summary.theta_mean
        self.eta_mean_ = summary.eta_mean
        self.tau_mean_ = summary.tau_mean
        self.selected_components_ = summary.selected_components
        self.significant_edges_ = summary.significant
        self.rhat_ = summary.rhat
        self.bic_ = summary.bic
        return self

    def predict(self, X) -> np.ndarray:
        """Genetic fixed-effect prediction theta_hat * z for new dosages,
        returned as (n, E) edge rows in canonical order."""
        if not hasattr(self, "summary_"):
            raise RuntimeError("fit the model before calling predict")
        x = _check_genotype(X)
        z = (x - self.genotype_mean_) / self.genotype_scale_
        return z[:, None] * self.summary_.edge_mean[None, :]

    def significant_edge_pairs(self) -> np.ndarray:
        if not hasattr(self, "summary_"):
            raise RuntimeError("fit the model before querying edges")
        return edge_pairs(self.n_nodes_)[self.significant_edges_]


class EdgewiseLMM(BaseEstimator):
    """Per-edge mixed-model baseline with Bonferroni edge selection."""

    def __init__(self, alpha=0.05):
        self.alpha = alpha

    def fit(self, X, y, kinship=None, covariates=None, snp_id="snp"):
        x = _check_genotype(X)
        data, phen = _prepare(x, y, kinship, covariates, snp_id)
        result = _baseline.fit_all_edges(data, alpha=self.alpha)
        self.genotype_mean_ = float(x.mean())
        self.genotype_scale_ = float(x.std())
        self.n_nodes_ = phen.n_nodes
        self.data_ = data
        self.result_ = result
        self.beta_ = result.beta
        self.se_ = result.se
        self.pvalues_ = result.pvalue
        self.sigma_g_ = result.sigma_g
        self.sigma_eps_ = result.sigma_eps
        self.significant_edges_ = result.significant
        return self

    def predict(self, X) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise RuntimeError("fit the model before calling predict")
        x = _check_genotype(X)
        z = (x - self.genotype_mean_) / self.genotype_scale_
        beta = np.where(np.isfinite(self.beta_), self.beta_, 0.0)
        return z[:, None] * beta[None, :]

    def significant_edge_pairs(self) -> np.ndarray:
        if not hasattr(self, "result_"):
            raise RuntimeError("fit the model before querying edges")
        return edge_pairs(self.n_nodes_)[self.significant_edges_]
