"""Domain types and per-edge covariance algebra for the network-response mixed model.

A network phenotype is a symmetric, hollow V x V matrix per subject. Everything
here is stored edge-major: the E = V(V-1)/2 unordered node pairs (k, l), k < l,
each carry one length-N vector of connection values. The marginal covariance of
edge (k, l) is sigma_a[kl] * Lambda + sigma_e[kl] * I, with Lambda the kinship
matrix; all solves run in the (cached) kinship eigenbasis.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "EffectComponents",
    "GenotypeVector",
    "HyperParams",
    "Kinship",
    "ModelData",
    "NetworkPhenotype",
    "VarianceField",
    "assemble_theta",
    "edge_covariance_logdet",
    "edge_covariance_solve",
    "edge_lookup",
    "edge_pairs",
    "log_likelihood",
    "marginal_log_likelihood",
    "n_edges",
    "nodes_from_edge_count",
    "residual_for_component",
    "theta_edge_values",
]


def n_edges(n_nodes: int) -> int:
    return n_nodes * (n_nodes - 1) // 2


def nodes_from_edge_count(count: int) -> int:
    """Invert E = V(V-1)/2; raises if count is not a valid edge count."""
    v = int(round((1.0 + np.sqrt(1.0 + 8.0 * count)) / 2.0))
    if n_edges(v) != count:
        raise ValueError(f"{count} is not V*(V-1)/2 for any integer V")
    return v


def edge_pairs(n_nodes: int) -> np.ndarray:
    """(E, 2) array of unordered node pairs in canonical order (k < l, row-major)."""
    rows, cols = np.triu_indices(n_nodes, k=1)
    return np.column_stack([rows, cols])


def edge_lookup(n_nodes: int) -> np.ndarray:
    """(V, V) map from node pair to canonical edge index; -1 on the diagonal."""
    lut = np.full((n_nodes, n_nodes), -1, dtype=np.int64)
    pairs = edge_pairs(n_nodes)
    idx = np.arange(len(pairs))
    lut[pairs[:, 0], pairs[:, 1]] = idx
    lut[pairs[:, 1], pairs[:, 0]] = idx
    return lut


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class NetworkPhenotype:
    """Edge-major store of N subjects x E unique connections.

    ``edges[e]`` is the length-N vector of values for the e-th canonical node
    pair. Symmetry and hollowness hold by construction: pair (k, l) and (l, k)
    share one row and diagonal entries are never stored.
    """

    edges: np.ndarray  # (E, N)
    n_nodes: int

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        if edges.ndim != 2:
            raise ValueError("edges must be a 2-d (n_edges, n_subjects) array")
        if edges.shape[0] != n_edges(self.n_nodes):
            raise ValueError(
                f"expected {n_edges(self.n_nodes)} edge vectors for "
                f"{self.n_nodes} nodes, got {edges.shape[0]}"
            )
        if not np.all(np.isfinite(edges)):
            raise ValueError("edge values must be finite")
        object.__setattr__(self, "edges", _readonly(edges))

    @property
    def n_subjects(self) -> int:
        return self.edges.shape[1]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def edge(self, k: int, l: int) -> np.ndarray:
        """Length-N vector for unordered pair (k, l); k == l is an error."""
        if k == l:
            raise ValueError("diagonal entries do not exist in a hollow network")
        idx = edge_lookup(self.n_nodes)[k, l]
        return self.edges[idx]

    @classmethod
    def from_matrices(cls, stack: np.ndarray, atol: float = 1e-8) -> "NetworkPhenotype":
        """Build from an (N, V, V) stack of symmetric hollow matrices."""
        stack = np.asarray(stack, dtype=np.float64)
        if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
            raise ValueError("expected an (n_subjects, V, V) stack")
        if np.max(np.abs(stack - stack.transpose(0, 2, 1))) > atol:
            raise ValueError("network matrices must be symmetric")
        v = stack.shape[1]
        if np.max(np.abs(stack[:, np.arange(v), np.arange(v)])) > atol:
            raise ValueError("network matrices must have zero diagonal")
        rows, cols = np.triu_indices(v, k=1)
        return cls(edges=stack[:, rows, cols].T, n_nodes=v)

    @classmethod
    def from_edge_rows(cls, rows: np.ndarray, n_nodes: int | None = None) -> "NetworkPhenotype":
        """Build from an (N, E) subject-major array in canonical edge order."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise ValueError("expected an (n_subjects, n_edges) array")
        if n_nodes is None:
            n_nodes = nodes_from_edge_count(rows.shape[1])
        return cls(edges=rows.T, n_nodes=n_nodes)

    def to_matrices(self) -> np.ndarray:
        out = np.zeros((self.n_subjects, self.n_nodes, self.n_nodes))
        rows, cols = np.triu_indices(self.n_nodes, k=1)
        out[:, rows, cols] = self.edges.T
        out[:, cols, rows] = self.edges.T
        return out


@dataclass(frozen=True)
class Kinship:
    """Symmetric PSD relatedness matrix with its eigendecomposition cached."""

    matrix: np.ndarray       # (N, N)
    eigenvectors: np.ndarray  # (N, N), columns are eigenvectors
    eigenvalues: np.ndarray   # (N,), nonnegative

    SYM_TOL = 1e-10
    RECON_TOL = 1e-8

    @classmethod
    def from_matrix(cls, matrix: np.ndarray, clamp_tol: float = 1e-8) -> "Kinship":
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError("kinship must be a square matrix")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("kinship entries must be finite")
        if np.max(np.abs(matrix - matrix.T)) > cls.SYM_TOL:
            raise ValueError(f"kinship is not symmetric to {cls.SYM_TOL}")
        sym = 0.5 * (matrix + matrix.T)
        evals, evecs = np.linalg.eigh(sym)
        if evals.min() < -clamp_tol:
            raise ValueError(
                f"kinship is not PSD: minimum eigenvalue {evals.min():.3e} "
                f"below -{clamp_tol:.0e}"
            )
        evals = np.maximum(evals, 0.0)
        recon = (evecs * evals) @ evecs.T
        if np.max(np.abs(recon - sym)) > cls.RECON_TOL:
            raise ValueError("eigendecomposition failed to reconstruct kinship")
        return cls(matrix=_readonly(sym), eigenvectors=_readonly(evecs),
                   eigenvalues=_readonly(evals))

    @classmethod
    def identity(cls, n: int) -> "Kinship":
        return cls.from_matrix(np.eye(n))

    @property
    def n_subjects(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class GenotypeVector:
    """Raw allele dosages for one variant (0/1/2 before normalization)."""

    values: np.ndarray
    snp_id: str = "snp"

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("genotype must be a 1-d vector with at least 2 entries")
        if not np.all(np.isfinite(values)):
            raise ValueError("genotype dosages must be finite")
        object.__setattr__(self, "values", _readonly(values))

    def standardized(self) -> np.ndarray:
        """Dosages centered to mean 0 and scaled to (population) variance 1."""
        sd = self.values.std()
        if sd == 0.0:
            raise ValueError(f"genotype {self.snp_id!r} is constant; cannot standardize")
        return (self.values - self.values.mean()) / sd


@dataclass
class EffectComponents:
    """Rank-one decomposition of the genetic effect matrix.

    Component h contributes eta[h] * outer(theta[h], theta[h]); tau[h] is its
    inclusion indicator and local_scales[h] the per-node shrinkage variances.
    """

    eta: np.ndarray           # (H,)
    tau: np.ndarray           # (H,) in {0, 1}
    theta: np.ndarray         # (H, V)
    local_scales: np.ndarray  # (H, V), strictly positive

    def __post_init__(self):
        self.eta = np.asarray(self.eta, dtype=np.float64).copy()
        self.tau = np.asarray(self.tau, dtype=np.int64).copy()
        self.theta = np.asarray(self.theta, dtype=np.float64).copy()
        self.local_scales = np.asarray(self.local_scales, dtype=np.float64).copy()
        self.validate()

    def validate(self):
        h, v = self.theta.shape
        if self.eta.shape != (h,) or self.tau.shape != (h,):
            raise ValueError("eta/tau length must match the number of components")
        if self.local_scales.shape != (h, v):
            raise ValueError("local_scales must match theta's shape")
        if not np.all(np.isin(self.tau, (0, 1))):
            raise ValueError("tau entries must be 0 or 1")
        if np.any((self.tau == 0) & (self.eta != 0.0)):
            raise ValueError("tau = 0 requires eta = 0")
        if np.any(self.local_scales <= 0.0):
            raise ValueError("local scales must be strictly positive")

    @property
    def n_components(self) -> int:
        return self.theta.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def zeros(cls, n_components: int, n_nodes: int) -> "EffectComponents":
        return cls(
            eta=np.zeros(n_components),
            tau=np.ones(n_components, dtype=np.int64),
            theta=np.zeros((n_components, n_nodes)),
            local_scales=np.ones((n_components, n_nodes)),
        )

    def copy(self) -> "EffectComponents":
        return EffectComponents(self.eta, self.tau, self.theta, self.local_scales)


@dataclass
class VarianceField:
    """Per-edge polygenic (sigma_a) and environmental (sigma_e) variances."""

    sigma_a: np.ndarray  # (E,)
    sigma_e: np.ndarray  # (E,)

    def __post_init__(self):
        self.sigma_a = np.asarray(self.sigma_a, dtype=np.float64).copy()
        self.sigma_e = np.asarray(self.sigma_e, dtype=np.float64).copy()
        self.validate()

    def validate(self):
        if self.sigma_a.shape != self.sigma_e.shape or self.sigma_a.ndim != 1:
            raise ValueError("sigma_a and sigma_e must be 1-d arrays of equal length")
        if np.any(self.sigma_a <= 0.0) or np.any(self.sigma_e <= 0.0):
            raise ValueError("variance components must be strictly positive")

    @property
    def n_edges(self) -> int:
        return self.sigma_a.shape[0]

    @classmethod
    def constant(cls, count: int, sigma_a: float = 1.0, sigma_e: float = 1.0) -> "VarianceField":
        return cls(np.full(count, float(sigma_a)), np.full(count, float(sigma_e)))

    def copy(self) -> "VarianceField":
        return VarianceField(self.sigma_a, self.sigma_e)


@dataclass(frozen=True)
class HyperParams:
    """Prior and proposal settings for the sampler.

    omega is the slab *variance* of the component weights; nu the Laplace rate
    on the loadings; (alpha, beta) the inverse-gamma shape/scale on the edge
    variances; spike_constant the ratio between slab and spike scales in the
    inclusion update; rho1/rho2 the random-walk step sizes.
    """

    omega: float = 1.0
    nu: float = 1.0
    alpha: float = 0.01
    beta: float = 0.01
    spike_constant: float = 100.0
    rho1: float = 0.1
    rho2: float = 0.1
    tau_prior: float = 0.5

    def __post_init__(self):
        for name in ("omega", "nu", "alpha", "beta", "spike_constant", "rho1", "rho2"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0.0:
                raise ValueError(f"{name} must be a positive finite number")
        if self.spike_constant < 10.0:
            raise ValueError("spike_constant must be at least 10")
        if not 0.0 < self.tau_prior < 1.0:
            raise ValueError("tau_prior must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class ModelData:
    """Fit-ready dataset: edge-major phenotype, standardized (and possibly
    projected) genotype, and the matching kinship. ``n_removed`` records how
    many covariate dimensions were projected out of the original sample."""

    edges: np.ndarray    # (E, n)
    genotype: np.ndarray  # (n,)
    kinship: Kinship
    n_nodes: int
    n_removed: int = 0
    subject_ids: tuple = field(default_factory=tuple)

    def __post_init__(self):
        edges = np.asarray(self.edges, dtype=np.float64)
        z = np.asarray(self.genotype, dtype=np.float64)
        if edges.shape != (n_edges(self.n_nodes), z.size):
            raise ValueError("edges array does not match node count / sample size")
        if self.kinship.n_subjects != z.size:
            raise ValueError("kinship size does not match the sample size")
        object.__setattr__(self, "edges", _readonly(edges))
        object.__setattr__(self, "genotype", _readonly(z))

    @property
    def n_subjects(self) -> int:
        return self.genotype.size

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.edges, self.genotype, self.kinship.matrix):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(str(self.n_nodes).encode())
        return h.hexdigest()


def _genotype_values(genotype) -> np.ndarray:
    if isinstance(genotype, GenotypeVector):
        return genotype.standardized()
    return np.asarray(genotype, dtype=np.float64)


def theta_edge_values(effects: EffectComponents) -> np.ndarray:
    """Assembled effect matrix evaluated at the canonical edges, shape (E,)."""
    pairs = edge_pairs(effects.n_nodes)
    return np.einsum(
        "h,he,he->e", effects.eta,
        effects.theta[:, pairs[:, 0]], effects.theta[:, pairs[:, 1]],
    )


def assemble_theta(effects: EffectComponents) -> np.ndarray:
    """Sum of weighted outer products with the diagonal hollowed out.

    Built by mirroring the edge-major values, so the result is bitwise
    symmetric and bitwise hollow."""
    v = effects.n_nodes
    te = theta_edge_values(effects)
    rows, cols = np.triu_indices(v, k=1)
    out = np.zeros((v, v))
    out[rows, cols] = te
    out[cols, rows] = te
    return out


def _edge_weights(edge, variance: VarianceField, kinship: Kinship):
    """1 / (sigma_a * d_i + sigma_e) for one edge, plus the edge index."""
    k, l = edge
    idx = edge_lookup(int(nodes_from_edge_count(variance.n_edges)))[k, l]
    if idx < 0:
        raise ValueError("diagonal entries carry no covariance")
    sa = variance.sigma_a[idx]
    se = variance.sigma_e[idx]
    if sa <= 0.0 or se <= 0.0:
        raise ValueError("variance components must be strictly positive")
    return 1.0 / (sa * kinship.eigenvalues + se), idx


def edge_covariance_solve(edge, variance: VarianceField, kinship: Kinship,
                          rhs: np.ndarray) -> np.ndarray:
    """Apply (sigma_a * Lambda + sigma_e * I)^{-1} to ``rhs`` in the eigenbasis."""
    w, _ = _edge_weights(edge, variance, kinship)
    q = kinship.eigenvectors
    return q @ (w * (q.T @ np.asarray(rhs, dtype=np.float64)))


def edge_covariance_logdet(edge, variance: VarianceField, kinship: Kinship) -> float:
    """log det(sigma_a * Lambda + sigma_e * I) for one edge."""
    w, _ = _edge_weights(edge, variance, kinship)
    return float(-np.log(w).sum())


def marginal_log_likelihood(data: ModelData, theta_edges: np.ndarray,
                            sigma_a: np.ndarray, sigma_e: np.ndarray) -> float:
    """Sum over edges of the Gaussian log-density of a_kl with mean
    theta_kl * z and covariance sigma_a[kl] * Lambda + sigma_e[kl] * I."""
    q = data.kinship.eigenvectors
    d = data.kinship.eigenvalues
    ztil = q.T @ data.genotype
    ytil = data.edges @ q
    resid = ytil - np.asarray(theta_edges)[:, None] * ztil[None, :]
    cov = np.asarray(sigma_a)[:, None] * d[None, :] + np.asarray(sigma_e)[:, None]
    if np.any(cov <= 0.0):
        raise ValueError("variance components must be strictly positive")
    return float(
        -0.5 * (resid.size * np.log(2.0 * np.pi)
                + np.log(cov).sum()
                + (resid * resid / cov).sum())
    )


def log_likelihood(data: NetworkPhenotype, genotype, effects: EffectComponents,
                   variance: VarianceField, kinship: Kinship) -> float:
    """Marginal log-likelihood of the full edge-major dataset."""
    z = _genotype_values(genotype)
    if z.size != data.n_subjects or kinship.n_subjects != data.n_subjects:
        raise ValueError("genotype/kinship size does not match the phenotype")
    if effects.n_nodes != data.n_nodes or variance.n_edges != data.n_edges:
        raise ValueError("effects/variance shape does not match the phenotype")
    md = ModelData(edges=data.edges, genotype=z, kinship=kinship, n_nodes=data.n_nodes)
    return marginal_log_likelihood(md, theta_edge_values(effects),
                                   variance.sigma_a, variance.sigma_e)


def residual_for_component(data: NetworkPhenotype, genotype,
                           effects: EffectComponents, h: int) -> np.ndarray:
    """Edge-major residuals after removing every component except h.

    Returns the (E, N) array of a_kl minus the fixed-effect contribution of
    all components h' != h, i.e. the working response of the h-th component.
    """
    if not 0 <= h < effects.n_components:
        raise IndexError(f"component index {h} out of range")
    z = _genotype_values(genotype)
    pairs = edge_pairs(effects.n_nodes)
    own = effects.eta[h] * effects.theta[h, pairs[:, 0]] * effects.theta[h, pairs[:, 1]]
    others = theta_edge_values(effects) - own
    return data.edges - others[:, None] * z[None, :]
