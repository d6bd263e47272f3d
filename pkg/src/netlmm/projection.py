"""Covariate adjustment by projection onto the null space of the design.

Rather than estimating nuisance fixed effects, the phenotype, genotype and
kinship are all multiplied by U, an orthonormal basis of the orthogonal
complement of the covariate column space. The projected data follow the same
mixed model with the same effect matrix and variance parameters, on N - P
effective samples.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import GenotypeVector, Kinship, ModelData, NetworkPhenotype

__all__ = [
    "CovariateMatrix",
    "ProjectionOperator",
    "build_projection",
    "prepare_model_data",
    "project_dataset",
]

_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class CovariateMatrix:
    """N x P design of non-genetic covariates; must have full column rank."""

    X: np.ndarray
    labels: tuple = ()

    def __post_init__(self):
        x = np.asarray(self.X, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("covariates must form a 2-d (N, P) matrix")
        if not np.all(np.isfinite(x)):
            raise ValueError("covariate entries must be finite")
        n, p = x.shape
        if p >= n:
            raise ValueError(f"need fewer covariates than samples (P={p}, N={n})")
        if p > 0:
            sv = np.linalg.svd(x, compute_uv=False)
            if sv[-1] <= 1e-10 * sv[0]:
                raise ValueError("covariate matrix is rank deficient")
        labels = tuple(self.labels) if self.labels else tuple(f"x{j+1}" for j in range(p))
        if len(labels) != p:
            raise ValueError("label count must match the number of columns")
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def empty(cls, n: int) -> "CovariateMatrix":
        return cls(np.empty((n, 0)))

    @property
    def n_subjects(self) -> int:
        return self.X.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class ProjectionOperator:
    """(N - P) x N matrix U with U U^T = I and U X = 0."""

    U: np.ndarray

    def __post_init__(self):
        u = np.ascontiguousarray(self.U, dtype=np.float64)
        if u.ndim != 2 or u.shape[0] > u.shape[1]:
            raise ValueError("U must be (N - P) x N with P >= 0")
        gram = u @ u.T
        if np.max(np.abs(gram - np.eye(u.shape[0]))) > _ORTHO_TOL:
            raise ValueError("rows of U are not orthonormal")
        object.__setattr__(self, "U", u)

    @property
    def n_in(self) -> int:
        return self.U.shape[1]

    @property
    def n_out(self) -> int:
        return self.U.shape[0]


def build_projection(covariates: CovariateMatrix) -> ProjectionOperator:
    """Orthonormal basis of the null space of the covariate design.

    Eigendecomposes W = I - X (X^T X)^{-1} X^T and keeps the eigenvectors with
    eigenvalue 1 (threshold 0.5; a projector's spectrum is {0, 1}). With no
    covariates this is the identity.
    """
    x = covariates.X
    n, p = x.shape
    if p == 0:
        return ProjectionOperator(np.eye(n))
    w = np.eye(n) - x @ np.linalg.solve(x.T @ x, x.T)
    w = 0.5 * (w + w.T)
    evals, evecs = np.linalg.eigh(w)
    keep = evals > 0.5
    if keep.sum() != n - p:
        raise ValueError("projector rank does not equal N - P; design is degenerate")
    u = evecs[:, keep].T
    op = ProjectionOperator(u)
    if np.max(np.abs(u @ x)) > _ORTHO_TOL:
        raise ValueError("projection failed to annihilate the covariates")
    if np.max(np.abs(u.T @ u - w)) > _ORTHO_TOL:
        raise ValueError("U^T U does not reproduce the projector")
    return op


def project_dataset(op: ProjectionOperator, data: NetworkPhenotype,
                    genotype, kinship: Kinship):
    """Apply U to every edge vector, the genotype, and the kinship.

    ``genotype`` may be a GenotypeVector (standardized first) or an already
    standardized array; the projected genotype is deliberately not
    re-standardized. Returns (edges', z', kinship') with N - P rows.
    """
    u = op.U
    if op.n_in != data.n_subjects:
        raise ValueError("projection size does not match the dataset")
    if isinstance(genotype, GenotypeVector):
        z = genotype.standardized()
    else:
        z = np.asarray(genotype, dtype=np.float64)
    if z.size != op.n_in or kinship.n_subjects != op.n_in:
        raise ValueError("genotype/kinship size does not match the projection")
    edges = data.edges @ u.T
    z_proj = u @ z
    lam = u @ kinship.matrix @ u.T
    kin_proj = Kinship.from_matrix(0.5 * (lam + lam.T))
    phen = NetworkPhenotype(edges=edges, n_nodes=data.n_nodes)
    return phen, z_proj, kin_proj


def prepare_model_data(data: NetworkPhenotype, genotype: GenotypeVector,
                       kinship: Kinship, covariates: CovariateMatrix | None = None,
                       subject_ids=()) -> ModelData:
    """Standardize the genotype, project covariates out, and bundle a ModelData."""
    n = data.n_subjects
    if covariates is None:
        covariates = CovariateMatrix.empty(n)
    if covariates.n_subjects != n or kinship.n_subjects != n:
        raise ValueError("phenotype, genotype, kinship and covariates disagree on N")
    op = build_projection(covariates)
    phen, z, kin = project_dataset(op, data, genotype, kinship)
    if np.linalg.norm(z) < 1e-8:
        raise ValueError(
            f"genotype {genotype.snp_id!r} lies in the covariate span; "
            "nothing left to fit after projection"
        )
    return ModelData(edges=phen.edges, genotype=z, kinship=kin,
                     n_nodes=data.n_nodes, n_removed=covariates.n_covariates,
                     subject_ids=tuple(subject_ids))
