"""MCMC engine: Gibbs updates for loadings, local scales, weights and
inclusion indicators, random-walk Metropolis for the per-edge variance
components, chain orchestration and convergence diagnostics.

All heavy algebra runs in the kinship eigenbasis. For edge (k, l) with
covariance sigma_a * Lambda + sigma_e * I = Q diag(sigma_a * d + sigma_e) Q^T,
every quadratic form reduces to a weighted inner product of rotated vectors.
The chain state keeps three running caches per edge -- the elementwise inverse
covariance weights, the log-determinant, and the data/genotype cross moments
a~^T S^-1 z and z^T S^-1 z -- which the Metropolis steps update in place on
acceptance, so a full Gibbs sweep never re-factorizes anything.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from joblib import Parallel, delayed

from .core import (
    EffectComponents,
    HyperParams,
    ModelData,
    VarianceField,
    edge_lookup,
    edge_pairs,
    theta_edge_values,
)

__all__ = [
    "ChainState",
    "GelmanRubinResult",
    "NumericalAbortError",
    "PosteriorSamples",
    "RotatedData",
    "SamplerConfig",
    "gelman_rubin",
    "gibbs_update_eta",
    "gibbs_update_local_scale",
    "gibbs_update_tau",
    "gibbs_update_theta",
    "init_chain_state",
    "mh_update_sigma_a",
    "mh_update_sigma_e",
    "rotate_dataset",
    "run_chain",
    "run_chains",
    "sample_inverse_gaussian",
    "sweep",
]

# |theta| floor in the local-scale update; the conditional is improper at 0.
THETA_FLOOR = 1e-8
_MH_TARGET = 0.3


class NumericalAbortError(RuntimeError):
    """A parameter left the reals; carries the offending name and iteration."""

    def __init__(self, parameter: str, iteration: int):
        self.parameter = parameter
        self.iteration = iteration
        super().__init__(
            f"non-finite value in {parameter} at iteration {iteration}"
        )


@dataclass(frozen=True)
class SamplerConfig:
    """Chain settings. ``tau_warmup`` counts early burn-in sweeps during which
    the inclusion indicators stay at their initial value (1): starting from a
    diffuse initialization the weight conditional sits near zero until the
    loadings lock on, and an immediate indicator update would zero every
    component before that happens. -1 picks min(250, burn_in // 2)."""

    n_iterations: int = 7000
    burn_in: int = 2000
    thinning: int = 1
    n_chains: int = 1
    seed: int = 0
    hyper: HyperParams = field(default_factory=HyperParams)
    adapt_mh: bool = True
    tau_warmup: int = -1

    def __post_init__(self):
        if self.burn_in < 0 or self.burn_in >= self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if (self.n_iterations - self.burn_in) % self.thinning != 0:
            raise ValueError("(n_iterations - burn_in) must be divisible by thinning")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")
        if self.tau_warmup > self.burn_in:
            raise ValueError("tau_warmup cannot exceed burn_in")

    @property
    def n_kept(self) -> int:
        return (self.n_iterations - self.burn_in) // self.thinning

    @property
    def resolved_tau_warmup(self) -> int:
        if self.tau_warmup >= 0:
            return self.tau_warmup
        return min(250, self.burn_in // 2)


@dataclass(frozen=True)
class RotatedData:
    """Immutable eigenbasis view of a ModelData, shared read-only by chains."""

    n_nodes: int
    eigenvalues: np.ndarray     # (N,)
    z: np.ndarray               # (N,) rotated genotype
    z_sq: np.ndarray            # (N,)
    edges: np.ndarray           # (E, N) rotated edge vectors
    edges_z: np.ndarray         # (E, N) edges * z, for cross moments
    pairs: np.ndarray           # (E, 2)
    incident_edges: np.ndarray  # (V, V-1) edge ids touching node k
    incident_nodes: np.ndarray  # (V, V-1) the other endpoint
    data_hash: str

    @property
    def n_subjects(self) -> int:
        return self.z.size

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]


def rotate_dataset(data: ModelData) -> RotatedData:
    q = data.kinship.eigenvectors
    z = q.T @ data.genotype
    edges = data.edges @ q
    v = data.n_nodes
    lut = edge_lookup(v)
    incident_edges = np.empty((v, v - 1), dtype=np.int64)
    incident_nodes = np.empty((v, v - 1), dtype=np.int64)
    for k in range(v):
        others = np.concatenate([np.arange(k), np.arange(k + 1, v)])
        incident_nodes[k] = others
        incident_edges[k] = lut[k, others]
    return RotatedData(
        n_nodes=v,
        eigenvalues=data.kinship.eigenvalues.copy(),
        z=z,
        z_sq=z * z,
        edges=np.ascontiguousarray(edges),
        edges_z=np.ascontiguousarray(edges * z[None, :]),
        pairs=edge_pairs(v),
        incident_edges=incident_edges,
        incident_nodes=incident_nodes,
        data_hash=data.content_hash(),
    )


@dataclass
class ChainState:
    """Mutable sampler state plus the per-edge caches described above."""

    data: RotatedData
    hyper: HyperParams
    effects: EffectComponents
    variance: VarianceField
    iteration: int = 0
    rho_a: float = 0.1
    rho_e: float = 0.1
    weights: np.ndarray = None       # (E, N) 1/(sigma_a d + sigma_e)
    logdet: np.ndarray = None        # (E,)
    cross_moment: np.ndarray = None  # (E,) y~^T W z~
    z_precision: np.ndarray = None   # (E,) z~^T W z~
    accepted_a: int = 0
    proposed_a: int = 0
    accepted_e: int = 0
    proposed_e: int = 0
    edge_accepts_a: np.ndarray = None
    edge_accepts_e: np.ndarray = None

    def refresh_edge_caches(self, ids=None):
        """Recompute the covariance caches from the current variance field."""
        d = self.data.eigenvalues
        if ids is None:
            ids = np.arange(self.data.n_edges)
        cov = (self.variance.sigma_a[ids, None] * d[None, :]
               + self.variance.sigma_e[ids, None])
        w = 1.0 / cov
        self.weights[ids] = w
        self.logdet[ids] = np.log(cov).sum(axis=1)
        self.cross_moment[ids] = np.einsum("en,en->e", self.data.edges_z[ids], w)
        self.z_precision[ids] = w @ self.data.z_sq

    def reset_mh_counters(self):
        self.accepted_a = self.proposed_a = 0
        self.accepted_e = self.proposed_e = 0
        self.edge_accepts_a[:] = 0
        self.edge_accepts_e[:] = 0


def init_chain_state(data: RotatedData, hyper: HyperParams, n_components: int,
                     rng: np.random.Generator) -> ChainState:
    """Random initialization: theta ~ N(0, 0.1), eta ~ N(0, 1), tau = 1,
    all variance components at 1."""
    v = data.n_nodes
    e = data.n_edges
    theta0 = np.sqrt(0.1) * rng.standard_normal((n_components, v))
    eta0 = rng.standard_normal(n_components)
    effects = EffectComponents(
        eta=eta0,
        tau=np.ones(n_components, dtype=np.int64),
        theta=theta0,
        local_scales=np.ones((n_components, v)),
    )
    state = ChainState(
        data=data,
        hyper=hyper,
        effects=effects,
        variance=VarianceField.constant(e),
        rho_a=hyper.rho1,
        rho_e=hyper.rho2,
        weights=np.empty((e, data.n_subjects)),
        logdet=np.empty(e),
        cross_moment=np.empty(e),
        z_precision=np.empty(e),
        edge_accepts_a=np.zeros(e, dtype=np.int64),
        edge_accepts_e=np.zeros(e, dtype=np.int64),
    )
    state.refresh_edge_caches()
    return state


def sample_inverse_gaussian(mean, shape, rng: np.random.Generator):
    """Draw from InverseGaussian(mean, shape) by the transformation-with-
    rejection method: with chi a squared standard normal,
    y = mu + mu^2 chi / (2 lam) - (mu / 2 lam) sqrt(4 mu lam chi + mu^2 chi^2),
    returned with probability mu / (mu + y), else mu^2 / y."""
    mu = np.asarray(mean, dtype=np.float64)
    lam = np.asarray(shape, dtype=np.float64)
    if np.any(mu <= 0.0) or np.any(lam <= 0.0):
        raise ValueError("inverse-Gaussian mean and shape must be positive")
    out_shape = np.broadcast_shapes(mu.shape, lam.shape)
    chi = rng.standard_normal(out_shape) ** 2
    t = mu * chi
    s = np.sqrt(t * (t + 4.0 * lam))
    # same smaller quadratic root, written without cancellation:
    # t - s = -4 lam t / (t + s), so y = mu (s - t) / (s + t) in (0, mu]
    denom = s + t
    y = mu * np.where(denom > 0.0, (s - t) / np.where(denom > 0.0, denom, 1.0), 1.0)
    u = rng.random(out_shape)
    out = np.where(u <= mu / (mu + y), y, mu * mu / y)
    if out.ndim == 0:
        return float(out)
    return out


def _theta_conditional(state: ChainState, h: int, k: int):
    """Mean and variance of the normal full conditional of theta[h, k]."""
    eff = state.effects
    data = state.data
    ids = data.incident_edges[k]
    others = data.incident_nodes[k]
    t_other = eff.theta[:, others]
    theta_row = (eff.eta * eff.theta[:, k]) @ t_other
    th_l = t_other[h]
    eta_h = eff.eta[h]
    zp = state.z_precision[ids]
    cm = state.cross_moment[ids]
    prec = eta_h * eta_h * ((th_l * th_l) @ zp) + 1.0 / eff.local_scales[h, k]
    minus_h = theta_row - eta_h * eff.theta[h, k] * th_l
    num = eta_h * (th_l @ (cm - minus_h * zp))
    var = 1.0 / prec
    assert var > 0.0
    return var * num, var


def gibbs_update_theta(state: ChainState, h: int, k: int,
                       rng: np.random.Generator) -> float:
    mean, var = _theta_conditional(state, h, k)
    val = mean + np.sqrt(var) * rng.standard_normal()
    state.effects.theta[h, k] = val
    return val


def gibbs_update_local_scale(state: ChainState, h: int, k: int,
                             rng: np.random.Generator) -> float:
    """Draw 1/sigma_hk ~ InverseGaussian(nu / |theta_hk|, nu^2) and store the
    reciprocal; |theta_hk| is floored so the mean stays finite."""
    nu = state.hyper.nu
    mean = nu / max(abs(state.effects.theta[h, k]), THETA_FLOOR)
    inv = max(sample_inverse_gaussian(mean, nu * nu, rng), 1e-300)
    val = 1.0 / inv
    state.effects.local_scales[h, k] = val
    return val


def _update_local_scales(state: ChainState, rng: np.random.Generator):
    nu = state.hyper.nu
    mean = nu / np.maximum(np.abs(state.effects.theta), THETA_FLOOR)
    inv = np.maximum(sample_inverse_gaussian(mean, nu * nu, rng), 1e-300)
    state.effects.local_scales[:] = 1.0 / inv


def _eta_conditional(state: ChainState, h: int):
    """Mean and variance of the normal full conditional of eta[h] given tau=1."""
    eff = state.effects
    pa = state.data.pairs[:, 0]
    pb = state.data.pairs[:, 1]
    t1 = eff.theta[h, pa] * eff.theta[h, pb]
    te = np.einsum("h,he,he->e", eff.eta, eff.theta[:, pa], eff.theta[:, pb])
    minus_h = te - eff.eta[h] * t1
    s1 = (t1 * t1) @ state.z_precision
    s2 = t1 @ (state.cross_moment - minus_h * state.z_precision)
    var = 1.0 / (s1 + 1.0 / state.hyper.omega)
    return var * s2, var


def gibbs_update_eta(state: ChainState, h: int, rng: np.random.Generator) -> float:
    if state.effects.tau[h] == 0:
        state.effects.eta[h] = 0.0
        return 0.0
    mean, var = _eta_conditional(state, h)
    val = mean + np.sqrt(var) * rng.standard_normal()
    state.effects.eta[h] = val
    return val


def _tau_probability(state: ChainState, h: int) -> float:
    """P(tau_h = 1 | eta_h): spike weight l0 = (C/sqrt(w)) exp(-C^2 eta^2 / 2w),
    slab weight l1 = (1/sqrt(w)) exp(-eta^2 / 2w), combined with the prior odds
    (which cancel at the default tau_prior = 0.5)."""
    hp = state.hyper
    e = state.effects.eta[h]
    c = hp.spike_constant
    delta = (np.log(c) - 0.5 * (c * c - 1.0) * e * e / hp.omega
             + np.log(1.0 - hp.tau_prior) - np.log(hp.tau_prior))
    return float(1.0 / (1.0 + np.exp(min(delta, 700.0))))


def gibbs_update_tau(state: ChainState, h: int, rng: np.random.Generator) -> int:
    """Bernoulli inclusion update. A 1 -> 0 flip zeroes eta immediately; a
    0 -> 1 flip leaves eta at zero until the next weight update refreshes it."""
    p1 = _tau_probability(state, h)
    new = 1 if rng.random() < p1 else 0
    state.effects.tau[h] = new
    if new == 0:
        state.effects.eta[h] = 0.0
    return new


def _ig_logpdf_terms(x, alpha, beta):
    return (-alpha - 1.0) * np.log(x) - beta / x


def _mh_block(state: ChainState, rng: np.random.Generator, which: str,
              resid_sq: np.ndarray, quad: np.ndarray, ids: np.ndarray) -> int:
    """Vectorized random-walk Metropolis over the given edges for one variance
    coordinate. ``resid_sq`` and ``quad`` are rows aligned with ``ids``; caches
    and ``quad`` are updated in place for accepted proposals. Only the single
    edge's likelihood enters the ratio (all other edges cancel)."""
    data = state.data
    d = data.eigenvalues
    hp = state.hyper
    if which == "a":
        cur_field = state.variance.sigma_a
        rho = state.rho_a
    else:
        cur_field = state.variance.sigma_e
        rho = state.rho_e
    cur = cur_field[ids]
    prop = cur + rho * rng.standard_normal(ids.size)
    logu = np.log(rng.random(ids.size))
    valid = prop > 0.0
    # keep the vectorized math well-defined on rejected-by-sign rows
    prop_safe = np.where(valid, prop, cur)
    if which == "a":
        cov_p = prop_safe[:, None] * d[None, :] + state.variance.sigma_e[ids, None]
    else:
        cov_p = state.variance.sigma_a[ids, None] * d[None, :] + prop_safe[:, None]
    w_p = 1.0 / cov_p
    quad_p = np.einsum("en,en->e", resid_sq, w_p)
    logdet_p = np.log(cov_p).sum(axis=1)
    log_ratio = (
        -0.5 * (logdet_p - state.logdet[ids])
        - 0.5 * (quad_p - quad)
        + _ig_logpdf_terms(prop_safe, hp.alpha, hp.beta)
        - _ig_logpdf_terms(cur, hp.alpha, hp.beta)
    )
    accept = valid & (logu < log_ratio)
    acc_ids = ids[accept]
    if acc_ids.size:
        cur_field[acc_ids] = prop_safe[accept]
        state.weights[acc_ids] = w_p[accept]
        state.logdet[acc_ids] = logdet_p[accept]
        quad[accept] = quad_p[accept]
        state.cross_moment[acc_ids] = np.einsum(
            "en,en->e", data.edges_z[acc_ids], w_p[accept])
        state.z_precision[acc_ids] = w_p[accept] @ data.z_sq
    n_acc = int(accept.sum())
    if which == "a":
        state.proposed_a += ids.size
        state.accepted_a += n_acc
        state.edge_accepts_a[acc_ids] += 1
    else:
        state.proposed_e += ids.size
        state.accepted_e += n_acc
        state.edge_accepts_e[acc_ids] += 1
    return n_acc


def _edge_residual_sq(state: ChainState, idx: int) -> np.ndarray:
    eff = state.effects
    k, l = state.data.pairs[idx]
    te = float(eff.eta @ (eff.theta[:, k] * eff.theta[:, l]))
    r = state.data.edges[idx] - te * state.data.z
    return r * r


def mh_update_sigma_a(state: ChainState, edge, rng: np.random.Generator) -> float:
    """Single-edge Metropolis update of the polygenic variance."""
    idx = int(edge_lookup(state.data.n_nodes)[edge[0], edge[1]])
    rsq = _edge_residual_sq(state, idx)
    quad = np.array([rsq @ state.weights[idx]])
    _mh_block(state, rng, "a", rsq[None, :], quad, np.array([idx]))
    return float(state.variance.sigma_a[idx])


def mh_update_sigma_e(state: ChainState, edge, rng: np.random.Generator) -> float:
    """Single-edge Metropolis update of the environmental variance."""
    idx = int(edge_lookup(state.data.n_nodes)[edge[0], edge[1]])
    rsq = _edge_residual_sq(state, idx)
    quad = np.array([rsq @ state.weights[idx]])
    _mh_block(state, rng, "e", rsq[None, :], quad, np.array([idx]))
    return float(state.variance.sigma_e[idx])


def sweep(state: ChainState, rng: np.random.Generator, adapt: bool = False,
          update_tau: bool = True):
    """One full scan in fixed order: all theta, all local scales, all eta,
    all tau, all sigma_a, all sigma_e. Returns (theta_edges, quad) for the
    end-of-sweep state so the caller can read off the log-likelihood."""
    eff = state.effects
    n_comp, v = eff.theta.shape
    for h in range(n_comp):
        for k in range(v):
            gibbs_update_theta(state, h, k, rng)
    _update_local_scales(state, rng)
    for h in range(n_comp):
        gibbs_update_eta(state, h, rng)
    if update_tau:
        for h in range(n_comp):
            gibbs_update_tau(state, h, rng)
    te = theta_edge_values(eff)
    resid = state.data.edges - te[:, None] * state.data.z[None, :]
    resid_sq = resid * resid
    quad = np.einsum("en,en->e", resid_sq, state.weights)
    ids = np.arange(state.data.n_edges)
    acc_a = _mh_block(state, rng, "a", resid_sq, quad, ids)
    acc_e = _mh_block(state, rng, "e", resid_sq, quad, ids)
    if adapt:
        gamma = float(max(state.iteration, 1)) ** -0.6
        state.rho_a = float(np.clip(
            np.exp(np.log(state.rho_a) + gamma * (acc_a / ids.size - _MH_TARGET)),
            1e-5, 100.0))
        state.rho_e = float(np.clip(
            np.exp(np.log(state.rho_e) + gamma * (acc_e / ids.size - _MH_TARGET)),
            1e-5, 100.0))
    return te, quad


_STATE_FIELDS = ("theta", "eta", "tau", "local_scales")


def _check_finite(state: ChainState, iteration: int):
    for name in _STATE_FIELDS:
        if not np.all(np.isfinite(getattr(state.effects, name))):
            raise NumericalAbortError(name, iteration)
    if not np.all(np.isfinite(state.variance.sigma_a)):
        raise NumericalAbortError("sigma_a", iteration)
    if not np.all(np.isfinite(state.variance.sigma_e)):
        raise NumericalAbortError("sigma_e", iteration)


@dataclass(frozen=True)
class PosteriorSamples:
    """Thinned post-burn-in draws from one chain, with per-iteration assembled
    effect-matrix edge values and the log-likelihood trace."""

    eta: np.ndarray            # (K, H)
    tau: np.ndarray            # (K, H)
    theta: np.ndarray          # (K, H, V)
    sigma_a: np.ndarray        # (K, E)
    sigma_e: np.ndarray        # (K, E)
    theta_edges: np.ndarray    # (K, E)
    log_likelihood: np.ndarray  # (K,)
    n_nodes: int
    acceptance_sigma_a: float
    acceptance_sigma_e: float
    data_hash: str
    config: SamplerConfig
    chain_index: int = 0

    def __post_init__(self):
        if self.eta.shape[0] != self.config.n_kept:
            raise ValueError("kept draw count does not match the configuration")

    @property
    def n_kept(self) -> int:
        return self.eta.shape[0]

    @property
    def n_components(self) -> int:
        return self.eta.shape[1]

    def theta_mean_matrix(self) -> np.ndarray:
        """Posterior mean of the assembled effect matrix, as a V x V matrix."""
        v = self.n_nodes
        out = np.zeros((v, v))
        rows, cols = np.triu_indices(v, k=1)
        mean = self.theta_edges.mean(axis=0)
        out[rows, cols] = mean
        out[cols, rows] = mean
        return out


def run_chain(data, config: SamplerConfig, n_components: int = 3,
              seed=None, chain_index: int = 0) -> PosteriorSamples:
    """Run one chain. Deterministic given (seed, config, data): the transcript
    is a fixed sequence of generator calls from a PCG64 stream."""
    if isinstance(data, ModelData):
        data = rotate_dataset(data)
    if seed is None:
        seed = np.random.SeedSequence(config.seed, spawn_key=(chain_index,))
    rng = np.random.default_rng(seed)
    state = init_chain_state(data, config.hyper, n_components, rng)

    e = data.n_edges
    n = data.n_subjects
    kept = config.n_kept
    eta = np.empty((kept, n_components))
    tau = np.empty((kept, n_components))
    theta = np.empty((kept, n_components, data.n_nodes))
    sigma_a = np.empty((kept, e))
    sigma_e = np.empty((kept, e))
    theta_edges = np.empty((kept, e))
    loglik = np.empty(kept)
    log2pi = np.log(2.0 * np.pi)

    warmup = config.resolved_tau_warmup
    j = 0
    for t in range(1, config.n_iterations + 1):
        state.iteration = t
        te, quad = sweep(state, rng,
                         adapt=config.adapt_mh and t <= config.burn_in,
                         update_tau=t > warmup)
        _check_finite(state, t)
        if t == config.burn_in:
            state.reset_mh_counters()
        if t > config.burn_in and (t - config.burn_in) % config.thinning == 0:
            eta[j] = state.effects.eta
            tau[j] = state.effects.tau
            theta[j] = state.effects.theta
            sigma_a[j] = state.variance.sigma_a
            sigma_e[j] = state.variance.sigma_e
            theta_edges[j] = te
            loglik[j] = -0.5 * (e * n * log2pi + state.logdet.sum() + quad.sum())
            j += 1

    return PosteriorSamples(
        eta=eta, tau=tau, theta=theta, sigma_a=sigma_a, sigma_e=sigma_e,
        theta_edges=theta_edges, log_likelihood=loglik, n_nodes=data.n_nodes,
        acceptance_sigma_a=state.accepted_a / max(state.proposed_a, 1),
        acceptance_sigma_e=state.accepted_e / max(state.proposed_e, 1),
        data_hash=data.data_hash, config=config, chain_index=chain_index,
    )


def run_chains(data, config: SamplerConfig, n_components: int = 3,
               n_jobs: int = 1, spawn_prefix: tuple = ()) -> list[PosteriorSamples]:
    """Run config.n_chains chains with RNG streams split from the master seed.
    Results are independent of n_jobs; ``spawn_prefix`` namespaces the streams
    when several datasets share one master seed."""
    if isinstance(data, ModelData):
        data = rotate_dataset(data)
    seeds = [np.random.SeedSequence(config.seed, spawn_key=tuple(spawn_prefix) + (i,))
             for i in range(config.n_chains)]
    if config.n_chains > 1 and n_jobs != 1:
        return Parallel(n_jobs=n_jobs)(
            delayed(run_chain)(data, config, n_components, seed=s, chain_index=i)
            for i, s in enumerate(seeds))
    return [run_chain(data, config, n_components, seed=s, chain_index=i)
            for i, s in enumerate(seeds)]


def canonical_component_order(samples: PosteriorSamples) -> np.ndarray:
    """Slot permutation ordering components by descending posterior mean |eta|.

    Slot labels are arbitrary (which slot captures which subnetwork depends on
    the initialization), but within a chain they are sticky, so one global
    permutation per chain aligns chains for pooling and cross-chain
    diagnostics. The assembled effect matrix is invariant to this."""
    strength = np.abs(samples.eta).mean(axis=0)
    return np.argsort(-strength, kind="stable")


def with_component_order(samples: PosteriorSamples,
                         order: np.ndarray) -> PosteriorSamples:
    """Copy of the draws with component slots permuted."""
    return PosteriorSamples(
        eta=samples.eta[:, order],
        tau=samples.tau[:, order],
        theta=samples.theta[:, order, :],
        sigma_a=samples.sigma_a,
        sigma_e=samples.sigma_e,
        theta_edges=samples.theta_edges,
        log_likelihood=samples.log_likelihood,
        n_nodes=samples.n_nodes,
        acceptance_sigma_a=samples.acceptance_sigma_a,
        acceptance_sigma_e=samples.acceptance_sigma_e,
        data_hash=samples.data_hash,
        config=samples.config,
        chain_index=samples.chain_index,
    )


def align_chains(chains: Sequence[PosteriorSamples]) -> list[PosteriorSamples]:
    """Apply the canonical component order to every chain."""
    return [with_component_order(c, canonical_component_order(c)) for c in chains]


class GelmanRubinResult(NamedTuple):
    rhat: dict
    constant: frozenset


def gelman_rubin(chains: Sequence[PosteriorSamples], n_theta_entries: int = 10,
                 seed: int = 0, align: bool = True) -> GelmanRubinResult:
    """Classic potential scale reduction for the monitored scalars: the
    log-likelihood, every component weight, and a fixed random subset of
    assembled effect-matrix entries. Component slots are aligned across
    chains first (see canonical_component_order). Constant scalars report 1
    and are flagged rather than dividing by zero."""
    if len(chains) < 2:
        raise ValueError("Gelman-Rubin needs at least two chains")
    kept = {c.n_kept for c in chains}
    if len(kept) != 1:
        raise ValueError("chains must have equal numbers of kept draws")
    if kept.pop() < 50:
        raise ValueError("need at least 50 kept draws per chain")
    if align:
        chains = align_chains(chains)

    series = {"log_likelihood": np.stack([c.log_likelihood for c in chains])}
    n_comp = chains[0].n_components
    for h in range(n_comp):
        series[f"eta_{h + 1}"] = np.stack([c.eta[:, h] for c in chains])
    n_e = chains[0].theta_edges.shape[1]
    pick = np.sort(np.random.default_rng(seed).choice(
        n_e, size=min(n_theta_entries, n_e), replace=False))
    pairs = edge_pairs(chains[0].n_nodes)
    for idx in pick:
        k, l = pairs[idx]
        series[f"theta_{k + 1}_{l + 1}"] = np.stack(
            [c.theta_edges[:, idx] for c in chains])

    rhat = {}
    constant = set()
    for name, draws in series.items():
        n = draws.shape[1]
        within = draws.var(axis=1, ddof=1).mean()
        if within == 0.0:
            rhat[name] = 1.0
            constant.add(name)
            continue
        b_over_n = draws.mean(axis=1).var(ddof=1)
        var_plus = (n - 1) / n * within + b_over_n
        rhat[name] = float(max(np.sqrt(var_plus / within), 1.0))
    return GelmanRubinResult(rhat=rhat, constant=frozenset(constant))
