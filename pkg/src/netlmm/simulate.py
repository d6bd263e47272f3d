"""Synthetic data generator with known ground truth: family-block kinship,
uniform {0, 1, 2} genotypes, three standard nuisance covariates, sparse
rank-one effect components, and edge-wise kinship-structured noise."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import (
    EffectComponents,
    GenotypeVector,
    Kinship,
    NetworkPhenotype,
    assemble_theta,
    edge_pairs,
    n_edges,
    theta_edge_values,
)
from .projection import CovariateMatrix

__all__ = [
    "GroundTruth",
    "Scenario",
    "SimulatedDataset",
    "draw_edge_noise",
    "draw_polygenic_effects",
    "generate_dataset",
    "generate_kinship",
]

# Sub-seed for the per-edge covariate coefficients, shared by every scenario
# and replicate so the nuisance surface is fixed across the whole study.
_COEFFICIENT_SEED = 20230517

_COVARIATE_LABELS = ("binary", "uniform", "normal")


@dataclass(frozen=True)
class Scenario:
    """One cell of the simulation grid. Defaults follow the standard design:
    50-node networks, a single full-weight component, and edge variances
    (polygenic, environmental) = (1.5, 1.0)."""

    n_subjects: int = 100
    n_nodes: int = 50
    n_true_components: int = 1
    weights: tuple = (1.0,)
    sparsity: float = 0.5
    sigma_a_true: float = 1.5
    sigma_e_true: float = 1.0
    n_covariates: int = 3
    identity_kinship: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.n_subjects < 8:
            raise ValueError("need at least 8 subjects")
        if self.n_nodes < 3:
            raise ValueError("need at least 3 nodes")
        if not 0.0 <= self.sparsity <= 1.0:
            raise ValueError("sparsity must lie in [0, 1]")
        if len(self.weights) != self.n_true_components:
            raise ValueError("weights length must equal n_true_components")
        if self.sigma_a_true <= 0.0 or self.sigma_e_true <= 0.0:
            raise ValueError("true variance components must be positive")
        if self.n_covariates not in (0, 3):
            raise ValueError("n_covariates must be 0 or 3 (binary, uniform, normal)")

    def to_flat_dict(self) -> dict:
        return {
            "n_subjects": self.n_subjects,
            "n_nodes": self.n_nodes,
            "n_true_components": self.n_true_components,
            "weights": ",".join(repr(w) for w in self.weights),
            "sparsity": self.sparsity,
            "sigma_a_true": self.sigma_a_true,
            "sigma_e_true": self.sigma_e_true,
            "n_covariates": self.n_covariates,
            "identity_kinship": self.identity_kinship,
            "seed": self.seed,
        }

    @classmethod
    def from_flat_dict(cls, d: dict) -> "Scenario":
        d = dict(d)
        w = d.get("weights", (1.0,))
        if isinstance(w, str):
            w = tuple(float(x) for x in w.split(",") if x.strip())
        d["weights"] = tuple(w)
        return cls(**d)


@dataclass(frozen=True)
class GroundTruth:
    """Targets for the metric suite: true effect matrix, its edge support,
    per-component node supports, and the nuisance coefficients."""

    theta: np.ndarray               # (V, V)
    support: np.ndarray             # (E,) bool
    component_supports: np.ndarray  # (H, V) bool
    covariate_coefficients: np.ndarray | None  # (P, E) or None

    @property
    def n_nodes(self) -> int:
        return self.theta.shape[0]

    def support_pairs(self) -> np.ndarray:
        return edge_pairs(self.n_nodes)[self.support]


@dataclass(frozen=True)
class SimulatedDataset:
    phenotype: NetworkPhenotype
    genotype: GenotypeVector
    covariates: CovariateMatrix | None
    kinship: Kinship
    truth: GroundTruth
    scenario: Scenario


def generate_kinship(n_subjects: int, seed=None, identity: bool = False) -> Kinship:
    """Family-block relatedness: families of four with one 0.9 pair (twin-like)
    and 0.5 for the remaining within-family pairs; zero across families. The
    structure is deterministic, so ``seed`` is accepted only for interface
    symmetry. ``identity=True`` returns the unrelated-sample special case."""
    if n_subjects < 4:
        raise ValueError("need at least 4 subjects")
    if identity:
        return Kinship.identity(n_subjects)
    mat = np.zeros((n_subjects, n_subjects))
    start = 0
    while start < n_subjects:
        size = min(4, n_subjects - start)
        block = np.full((size, size), 0.5)
        np.fill_diagonal(block, 1.0)
        if size >= 2:
            block[0, 1] = block[1, 0] = 0.9
        mat[start:start + size, start:start + size] = block
        start += size
    return Kinship.from_matrix(mat)


def draw_polygenic_effects(kinship: Kinship, sigma_a: float, n_draws: int,
                           rng: np.random.Generator) -> np.ndarray:
    """(n_draws, N) rows each distributed N(0, sigma_a * Lambda)."""
    root = np.sqrt(kinship.eigenvalues)[:, None] * kinship.eigenvectors.T
    xi = rng.standard_normal((n_draws, kinship.n_subjects))
    return np.sqrt(sigma_a) * (xi @ root)


def draw_edge_noise(kinship: Kinship, sigma_a: float, sigma_e: float,
                    n_draws: int, rng: np.random.Generator) -> np.ndarray:
    """(n_draws, N) rows of combined polygenic plus environmental noise."""
    b = draw_polygenic_effects(kinship, sigma_a, n_draws, rng)
    e = np.sqrt(sigma_e) * rng.standard_normal((n_draws, kinship.n_subjects))
    return b + e


def _component_supports(scenario: Scenario, rng: np.random.Generator) -> np.ndarray:
    """Boolean (H, V) supports. Components are kept node-disjoint while free
    nodes remain; a zero-weight component may reuse nodes once the pool is
    exhausted (it contributes nothing to the effect matrix either way)."""
    v = scenario.n_nodes
    n_zero = math.ceil(scenario.sparsity * v)
    n_active = v - n_zero
    if scenario.sparsity < 1.0 and n_active < 2:
        raise ValueError(
            f"sparsity {scenario.sparsity} leaves {n_active} active node(s); "
            "a rank-one component needs at least 2 to touch any edge"
        )
    supports = np.zeros((scenario.n_true_components, v), dtype=bool)
    if n_active == 0:
        return supports
    pool = list(rng.permutation(v))
    for h, weight in enumerate(scenario.weights):
        if len(pool) >= n_active:
            chosen = [pool.pop(0) for _ in range(n_active)]
        elif weight == 0.0:
            chosen = rng.choice(v, size=n_active, replace=False)
        else:
            raise ValueError(
                "not enough free nodes to keep nonzero-weight component "
                f"{h + 1} disjoint from the others"
            )
        supports[h, np.asarray(chosen, dtype=np.int64)] = True
    return supports


def generate_dataset(scenario: Scenario) -> SimulatedDataset:
    """Generate one replicate. Regeneration with the same scenario (same seed
    included) is bit-identical; the covariate coefficients come from their own
    fixed stream and are shared across replicates and settings."""
    rng = np.random.default_rng(np.random.SeedSequence(scenario.seed))
    n = scenario.n_subjects
    v = scenario.n_nodes
    e_count = n_edges(v)
    kinship = generate_kinship(n, identity=scenario.identity_kinship)

    genotype = GenotypeVector(rng.integers(0, 3, size=n).astype(float),
                              snp_id="simulated")
    z = genotype.standardized()

    covariates = None
    contrib = np.zeros((e_count, n))
    coef = None
    if scenario.n_covariates == 3:
        x = np.column_stack([
            (rng.random(n) < 0.5).astype(float),
            rng.uniform(-0.5, 0.5, size=n),
            rng.normal(-0.5, 0.5, size=n),
        ])
        covariates = CovariateMatrix(x, labels=_COVARIATE_LABELS)
        coef_rng = np.random.default_rng(np.random.SeedSequence(_COEFFICIENT_SEED))
        coef = coef_rng.normal(0.3, 0.5, size=(3, e_count))
        contrib = coef.T @ x.T

    supports = _component_supports(scenario, rng)
    h_count = scenario.n_true_components
    theta = np.zeros((h_count, v))
    for h in range(h_count):
        idx = np.flatnonzero(supports[h])
        magnitude = rng.uniform(0.5, 1.0, size=idx.size)
        sign = rng.integers(0, 2, size=idx.size) * 2.0 - 1.0
        theta[h, idx] = sign * magnitude
    weights = np.asarray(scenario.weights)
    effects = EffectComponents(
        eta=weights,
        tau=(weights != 0.0).astype(np.int64),
        theta=theta,
        local_scales=np.ones((h_count, v)),
    )
    theta_true = assemble_theta(effects)
    te_true = theta_edge_values(effects)

    b = draw_polygenic_effects(kinship, scenario.sigma_a_true, e_count, rng)
    eps = np.sqrt(scenario.sigma_e_true) * rng.standard_normal((e_count, n))
    edges = te_true[:, None] * z[None, :] + contrib + b + eps

    pairs = edge_pairs(v)
    nonzero = weights != 0.0
    support = np.zeros(e_count, dtype=bool)
    for h in np.flatnonzero(nonzero):
        support |= supports[h, pairs[:, 0]] & supports[h, pairs[:, 1]]

    truth = GroundTruth(
        theta=theta_true,
        support=support,
        component_supports=supports,
        covariate_coefficients=coef,
    )
    phenotype = NetworkPhenotype(edges=edges, n_nodes=v)
    return SimulatedDataset(
        phenotype=phenotype, genotype=genotype, covariates=covariates,
        kinship=kinship, truth=truth, scenario=scenario,
    )
