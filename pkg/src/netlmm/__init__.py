"""Mixed-effect regression for network-valued phenotypes under sample
relatedness, with sparse rank-one decomposition of the genetic effect matrix,
an MCMC sampler, covariate projection, BIC model selection, a simulation
harness and a per-edge mixed-model baseline."""

from .baseline import EdgeLmmFit, fit_all_edges, fit_edge_lmm
from .core import (
    EffectComponents,
    GenotypeVector,
    HyperParams,
    Kinship,
    ModelData,
    NetworkPhenotype,
    VarianceField,
    assemble_theta,
    edge_covariance_logdet,
    edge_covariance_solve,
    edge_pairs,
    log_likelihood,
    residual_for_component,
    theta_edge_values,
)
from .estimators import EdgewiseLMM, NetworkMixedModel
from .projection import (
    CovariateMatrix,
    ProjectionOperator,
    build_projection,
    prepare_model_data,
    project_dataset,
)
from .sampler import (
    ChainState,
    NumericalAbortError,
    PosteriorSamples,
    SamplerConfig,
    gelman_rubin,
    run_chain,
    run_chains,
    sample_inverse_gaussian,
)
from .selection import (
    FitSummary,
    GridSearchResult,
    Metrics,
    bic_score,
    compute_metrics,
    declare_variant,
    grid_search,
    select_subnetworks,
    significant_edges,
    summarize_fit,
)
from .simulate import GroundTruth, Scenario, SimulatedDataset, generate_dataset, generate_kinship

__version__ = "0.1.0"

__all__ = [
    "ChainState",
    "CovariateMatrix",
    "EdgeLmmFit",
    "EdgewiseLMM",
    "EffectComponents",
    "FitSummary",
    "GenotypeVector",
    "GridSearchResult",
    "GroundTruth",
    "HyperParams",
    "Kinship",
    "Metrics",
    "ModelData",
    "NetworkMixedModel",
    "NetworkPhenotype",
    "NumericalAbortError",
    "PosteriorSamples",
    "ProjectionOperator",
    "SamplerConfig",
    "Scenario",
    "SimulatedDataset",
    "VarianceField",
    "assemble_theta",
    "bic_score",
    "build_projection",
    "compute_metrics",
    "declare_variant",
    "edge_covariance_logdet",
    "edge_covariance_solve",
    "edge_pairs",
    "fit_all_edges",
    "fit_edge_lmm",
    "gelman_rubin",
    "generate_dataset",
    "generate_kinship",
    "grid_search",
    "log_likelihood",
    "prepare_model_data",
    "project_dataset",
    "residual_for_component",
    "run_chain",
    "run_chains",
    "sample_inverse_gaussian",
    "select_subnetworks",
    "significant_edges",
    "summarize_fit",
    "theta_edge_values",
]
