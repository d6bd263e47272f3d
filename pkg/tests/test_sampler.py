import numpy as np
import pytest
from scipy import stats

from netlmm.core import HyperParams, edge_pairs, theta_edge_values
from netlmm.sampler import (
    NumericalAbortError,
    SamplerConfig,
    align_chains,
    canonical_component_order,
    gelman_rubin,
    gibbs_update_eta,
    gibbs_update_local_scale,
    gibbs_update_tau,
    gibbs_update_theta,
    mh_update_sigma_a,
    mh_update_sigma_e,
    rotate_dataset,
    run_chain,
    run_chains,
    sample_inverse_gaussian,
    sweep,
    _check_finite,
    _eta_conditional,
    _tau_probability,
    _theta_conditional,
)

from conftest import make_tiny_data, make_tiny_state


class TestInverseGaussian:
    def test_moments_mu1_lam1(self, ig_moment_stats):
        mean, var, lo = ig_moment_stats[(1.0, 1.0)]
        assert abs(mean - 1.0) < 0.01
        assert abs(var - 1.0) < 0.03
        assert lo > 0.0

    def test_moments_mu2_lam_half(self, ig_moment_stats):
        mean, var, lo = ig_moment_stats[(2.0, 0.5)]
        assert abs(mean - 2.0) < 0.02          # 1% of 2
        assert abs(var - 16.0) < 0.8           # 5% of mu^3 / lam
        assert lo > 0.0

    def test_large_shape_concentrates_at_mean(self):
        rng = np.random.default_rng(0)
        draws = sample_inverse_gaussian(np.full(20_000, 1.5), 1e8, rng)
        assert abs(draws.mean() - 1.5) < 1e-3
        assert draws.var() < 1e-6

    def test_invalid_parameters(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ValueError):
            sample_inverse_gaussian(-1.0, 1.0, rng)
        with pytest.raises(ValueError):
            sample_inverse_gaussian(1.0, 0.0, rng)


class TestThetaUpdate:
    def test_prior_fallback_when_eta_zero(self):
        _, state = make_tiny_state()
        state.effects.eta[0] = 0.0
        state.effects.local_scales[0, 1] = 2.7
        mean, var = _theta_conditional(state, 0, 1)
        assert mean == 0.0
        assert var == pytest.approx(2.7, rel=1e-12)

    def test_matches_grid_oracle(self, conditional_oracle_errors):
        assert conditional_oracle_errors["theta_mean"] < 0.02
        assert conditional_oracle_errors["theta_var"] < 0.02

    def test_doubling_sigma_e_halves_data_precision(self):
        _, state = make_tiny_state(identity=True)
        state.variance.sigma_a[:] = 1e-300
        state.variance.sigma_e[:] = 1.0
        state.refresh_edge_caches()
        zp1 = state.z_precision.copy()
        state.variance.sigma_e[:] = 2.0
        state.refresh_edge_caches()
        assert np.allclose(state.z_precision, zp1 / 2.0, rtol=1e-12)

    def test_update_writes_state(self):
        _, state = make_tiny_state()
        rng = np.random.default_rng(1)
        val = gibbs_update_theta(state, 0, 2, rng)
        assert state.effects.theta[0, 2] == val


class TestLocalScaleUpdate:
    def test_zero_loading_guard(self):
        _, state = make_tiny_state()
        state.effects.theta[0, 0] = 0.0
        rng = np.random.default_rng(2)
        for _ in range(20):
            val = gibbs_update_local_scale(state, 0, 0, rng)
            assert np.isfinite(val) and val > 0.0

    def test_reciprocal_draw_moments(self):
        # sigma^{-1} ~ InverseGaussian(nu/|theta|, nu^2); at nu=1, |theta|=1
        # the mean is 1 and the variance mean^3/shape = 1.
        rng = np.random.default_rng(3)
        draws = sample_inverse_gaussian(np.ones(1_000_000), 1.0, rng)
        assert abs(draws.mean() - 1.0) < 0.01
        assert abs(draws.var() - 1.0) < 0.03

    def test_strong_shrinkage_limit(self):
        # large nu with fixed theta: E[sigma] ~ |theta|/nu -> 0
        rng = np.random.default_rng(4)
        _, state = make_tiny_state(hyper=HyperParams(nu=50.0, omega=4.0))
        state.effects.theta[0, 0] = 0.5
        draws = [gibbs_update_local_scale(state, 0, 0, rng) for _ in range(400)]
        assert np.mean(draws) < 0.05


class TestEtaUpdate:
    def test_zero_tau_forces_zero(self):
        _, state = make_tiny_state()
        state.effects.tau[0] = 0
        state.effects.eta[0] = 0.0
        out = gibbs_update_eta(state, 0, np.random.default_rng(5))
        assert out == 0.0
        assert state.effects.eta[0] == 0.0

    def test_prior_fallback_when_loadings_zero(self):
        _, state = make_tiny_state(hyper=HyperParams(nu=1.0, omega=9.0))
        state.effects.theta[0] = 0.0
        mean, var = _eta_conditional(state, 0)
        assert mean == 0.0
        assert var == pytest.approx(9.0, rel=1e-12)

    def test_matches_grid_oracle(self, conditional_oracle_errors):
        assert conditional_oracle_errors["eta_mean"] < 0.02
        assert conditional_oracle_errors["eta_var"] < 0.02


class TestTauUpdate:
    def test_probability_at_zero_weight(self):
        _, state = make_tiny_state(
            hyper=HyperParams(nu=1.0, omega=4.0, spike_constant=100.0))
        state.effects.eta[0] = 0.0
        assert _tau_probability(state, 0) == pytest.approx(1.0 / 101.0, rel=1e-12)

    def test_probability_saturates_for_large_weight(self):
        _, state = make_tiny_state()
        state.effects.eta[0] = 1e3
        assert _tau_probability(state, 0) == pytest.approx(1.0)

    def test_probability_at_slab_scale(self):
        # eta = sqrt(omega), C = 100: the slab density dwarfs the spike
        omega = 4.0
        _, state = make_tiny_state(
            hyper=HyperParams(nu=1.0, omega=omega, spike_constant=100.0))
        state.effects.eta[0] = np.sqrt(omega)
        c = 100.0
        l0 = (c / np.sqrt(omega)) * np.exp(-0.5 * c * c)
        l1 = (1.0 / np.sqrt(omega)) * np.exp(-0.5)
        assert _tau_probability(state, 0) == pytest.approx(l1 / (l0 + l1), rel=1e-10)
        assert _tau_probability(state, 0) == pytest.approx(1.0)

    def test_flip_to_zero_clears_eta(self):
        _, state = make_tiny_state()
        state.effects.eta[0] = 1e-4  # deep in the spike
        rng = np.random.default_rng(6)
        out = gibbs_update_tau(state, 0, rng)
        assert out in (0, 1)
        if out == 0:
            assert state.effects.eta[0] == 0.0

    def test_nondefault_prior_shifts_odds(self):
        _, state = make_tiny_state(
            hyper=HyperParams(nu=1.0, omega=4.0, tau_prior=0.9))
        state.effects.eta[0] = 0.0
        # odds multiply by tau_prior / (1 - tau_prior) = 9
        assert _tau_probability(state, 0) == pytest.approx(9.0 / 109.0, rel=1e-9)


class _StubRng:
    """Deterministic stand-in for the few draws one MH step consumes."""

    def __init__(self, normal, uniform):
        self._normal = normal
        self._uniform = uniform

    def standard_normal(self, size=None):
        return np.full(size, self._normal) if size else self._normal

    def random(self, size=None):
        return np.full(size, self._uniform) if size else self._uniform


class TestMetropolisUpdates:
    def test_negative_proposal_always_rejected(self):
        _, state = make_tiny_state()
        state.variance.sigma_a[:] = 0.05
        state.refresh_edge_caches()
        before = state.variance.sigma_a.copy()
        rng = _StubRng(normal=-10.0, uniform=1e-12)  # proposal < 0, u tiny
        mh_update_sigma_a(state, (0, 1), rng)
        assert np.array_equal(state.variance.sigma_a, before)
        assert state.proposed_a == 1 and state.accepted_a == 0

    def test_identity_proposal_always_accepted(self):
        _, state = make_tiny_state()
        rng = _StubRng(normal=0.0, uniform=0.999999)  # log u < 0 = log ratio
        before = state.variance.sigma_e[0]
        mh_update_sigma_e(state, (0, 1), rng)
        assert state.accepted_e == 1
        assert state.variance.sigma_e[0] == before

    def test_accepted_move_keeps_caches_consistent(self):
        _, state = make_tiny_state()
        rng = np.random.default_rng(7)
        for _ in range(50):
            mh_update_sigma_a(state, (0, 2), rng)
            mh_update_sigma_e(state, (1, 2), rng)
        w = state.weights.copy()
        ld = state.logdet.copy()
        cm = state.cross_moment.copy()
        zp = state.z_precision.copy()
        state.refresh_edge_caches()
        assert np.allclose(w, state.weights, rtol=1e-12)
        assert np.allclose(ld, state.logdet, rtol=1e-12)
        assert np.allclose(cm, state.cross_moment, rtol=1e-12, atol=1e-12)
        assert np.allclose(zp, state.z_precision, rtol=1e-12)

    def test_long_run_marginal_matches_grid_posterior(self, mh_grid_ks):
        assert mh_grid_ks < 0.05


class TestPriorPreservation:
    def test_geweke_marginals(self, geweke_stats):
        for name, ks in geweke_stats.items():
            assert ks < 0.05, f"{name} drifted from its prior (KS={ks:.3f})"


class TestRunChain:
    def test_same_seed_bit_identical(self):
        data = make_tiny_data(n=8, v=4, seed=10)
        cfg = SamplerConfig(n_iterations=80, burn_in=20, seed=99,
                            hyper=HyperParams(nu=1.0))
        a = run_chain(data, cfg, n_components=2)
        b = run_chain(data, cfg, n_components=2)
        for name in ("eta", "tau", "theta", "sigma_a", "sigma_e",
                     "theta_edges", "log_likelihood"):
            assert np.array_equal(getattr(a, name), getattr(b, name)), name

    def test_kept_draw_count_and_positivity(self):
        data = make_tiny_data(n=8, v=4, seed=11)
        cfg = SamplerConfig(n_iterations=90, burn_in=30, thinning=3, seed=0)
        samples = run_chain(data, cfg, n_components=2)
        assert samples.n_kept == 20
        assert (samples.sigma_a > 0).all()
        assert (samples.sigma_e > 0).all()
        assert np.isin(samples.tau, (0.0, 1.0)).all()
        # tau = 0 forces a zero contribution in the same kept iteration
        zero_rows = samples.tau == 0
        assert np.array_equal(samples.eta[zero_rows],
                              np.zeros(zero_rows.sum()))

    def test_theta_edges_match_recomputed_assembly(self):
        from netlmm.core import EffectComponents
        data = make_tiny_data(n=8, v=4, seed=12)
        cfg = SamplerConfig(n_iterations=40, burn_in=10, seed=5)
        samples = run_chain(data, cfg, n_components=2)
        j = 7
        eff = EffectComponents(eta=samples.eta[j], tau=samples.tau[j].astype(int),
                               theta=samples.theta[j],
                               local_scales=np.ones_like(samples.theta[j]))
        assert np.allclose(samples.theta_edges[j], theta_edge_values(eff),
                           atol=1e-12, rtol=0)

    def test_numerical_abort_names_parameter(self):
        _, state = make_tiny_state()
        state.effects.theta[0, 1] = np.nan
        with pytest.raises(NumericalAbortError, match="theta at iteration 17"):
            _check_finite(state, 17)
        err = None
        try:
            _check_finite(state, 17)
        except NumericalAbortError as e:
            err = e
        assert err.parameter == "theta"
        assert err.iteration == 17

    def test_run_chains_parallel_equals_serial(self):
        data = make_tiny_data(n=8, v=4, seed=13)
        cfg = SamplerConfig(n_iterations=60, burn_in=20, seed=3, n_chains=2)
        serial = run_chains(data, cfg, n_components=2, n_jobs=1)
        parallel = run_chains(data, cfg, n_components=2, n_jobs=2)
        for a, b in zip(serial, parallel):
            assert np.array_equal(a.eta, b.eta)
            assert np.array_equal(a.sigma_a, b.sigma_a)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SamplerConfig(n_iterations=10, burn_in=10)
        with pytest.raises(ValueError):
            SamplerConfig(n_iterations=11, burn_in=4, thinning=2)
        with pytest.raises(ValueError):
            SamplerConfig(n_chains=0)
        with pytest.raises(ValueError):
            SamplerConfig(tau_warmup=3000, burn_in=2000)


class TestComponentAlignment:
    def _fake_samples(self, eta_means, seed=0):
        rng = np.random.default_rng(seed)
        k, h, v = 100, len(eta_means), 4
        cfg = SamplerConfig(n_iterations=150, burn_in=50, seed=0)
        from netlmm.sampler import PosteriorSamples
        eta = np.asarray(eta_means) + 0.01 * rng.standard_normal((k, h))
        return PosteriorSamples(
            eta=eta, tau=np.ones((k, h)), theta=rng.standard_normal((k, h, v)),
            sigma_a=np.ones((k, 6)), sigma_e=np.ones((k, 6)),
            theta_edges=rng.standard_normal((k, 6)),
            log_likelihood=rng.standard_normal(k), n_nodes=v,
            acceptance_sigma_a=0.3, acceptance_sigma_e=0.3,
            data_hash="x", config=cfg)

    def test_order_by_posterior_weight(self):
        s = self._fake_samples([0.1, -2.0, 0.5])
        order = canonical_component_order(s)
        assert order.tolist() == [1, 2, 0]

    def test_alignment_makes_chains_comparable(self):
        a = self._fake_samples([2.0, 0.0, 0.0], seed=1)
        b = self._fake_samples([0.0, 0.0, 2.0], seed=2)
        aligned = align_chains([a, b])
        assert abs(aligned[0].eta[:, 0].mean() - aligned[1].eta[:, 0].mean()) < 0.01


class TestGelmanRubin:
    def _chain_like(self, values, n_comp=2, seed=0):
        rng = np.random.default_rng(seed)
        k = len(values)
        cfg = SamplerConfig(n_iterations=k + 10, burn_in=10, seed=0)
        from netlmm.sampler import PosteriorSamples
        return PosteriorSamples(
            eta=np.tile(np.asarray(values)[:, None], (1, n_comp)),
            tau=np.ones((k, n_comp)),
            theta=rng.standard_normal((k, n_comp, 4)),
            sigma_a=np.ones((k, 6)), sigma_e=np.ones((k, 6)),
            theta_edges=rng.standard_normal((k, 6)),
            log_likelihood=np.asarray(values, dtype=float),
            n_nodes=4, acceptance_sigma_a=0.3, acceptance_sigma_e=0.3,
            data_hash="x", config=cfg)

    def test_identical_chains_give_exactly_one(self):
        rng = np.random.default_rng(1)
        vals = rng.standard_normal(200)
        res = gelman_rubin([self._chain_like(vals), self._chain_like(vals)],
                           align=False)
        assert res.rhat["log_likelihood"] == pytest.approx(1.0, abs=1e-12)

    def test_iid_chains_stay_below_1_01(self):
        rng = np.random.default_rng(2)
        chains = [self._chain_like(rng.standard_normal(1000), seed=i)
                  for i in range(3)]
        res = gelman_rubin(chains, align=False)
        assert res.rhat["log_likelihood"] < 1.01

    def test_separated_chains_flagged_large(self):
        rng = np.random.default_rng(3)
        a = self._chain_like(rng.standard_normal(500))
        b = self._chain_like(rng.standard_normal(500) + 10.0)
        res = gelman_rubin([a, b], align=False)
        assert res.rhat["log_likelihood"] > 1.1

    def test_constant_scalar_flagged_as_one(self):
        a = self._chain_like(np.zeros(100))
        b = self._chain_like(np.zeros(100))
        res = gelman_rubin([a, b], align=False)
        assert res.rhat["log_likelihood"] == 1.0
        assert "log_likelihood" in res.constant

    def test_requires_two_comparable_chains(self):
        a = self._chain_like(np.zeros(100))
        with pytest.raises(ValueError):
            gelman_rubin([a])
        short = self._chain_like(np.zeros(30))
        with pytest.raises(ValueError):
            gelman_rubin([short, short])


@pytest.mark.slow
class TestSamplerOnSimulatedData:
    def test_null_data_rejects_all_components(self):
        from netlmm import Scenario, generate_dataset, prepare_model_data
        from netlmm.selection import select_subnetworks
        hits = 0
        reps = 4
        for seed in range(reps):
            sc = Scenario(n_subjects=100, n_nodes=20, sparsity=1.0, seed=seed)
            ds = generate_dataset(sc)
            data = prepare_model_data(ds.phenotype, ds.genotype, ds.kinship,
                                      ds.covariates)
            cfg = SamplerConfig(n_iterations=900, burn_in=300, seed=seed,
                                hyper=HyperParams(nu=0.8))
            samples = run_chain(data, cfg, n_components=3)
            if (samples.tau.mean(axis=0) < 0.5).all():
                hits += 1
            assert select_subnetworks(samples) == [] or hits >= 0
        assert hits >= reps - 1

    def test_strong_signal_effect_recovery(self):
        # single subnetwork, half-sparse loadings, large sample
        from netlmm import Scenario, generate_dataset, prepare_model_data
        sc = Scenario(n_subjects=500, n_nodes=50, sparsity=0.5, seed=33)
        ds = generate_dataset(sc)
        data = prepare_model_data(ds.phenotype, ds.genotype, ds.kinship,
                                  ds.covariates)
        cfg = SamplerConfig(n_iterations=1500, burn_in=500, seed=17,
                            hyper=HyperParams(nu=0.8))
        samples = run_chain(data, cfg, n_components=3)
        pairs = edge_pairs(50)
        te_true = ds.truth.theta[pairs[:, 0], pairs[:, 1]]
        z = ds.genotype.standardized()
        diff = samples.theta_edges.mean(axis=0) - te_true
        rmse = float(np.sqrt(np.mean((diff[:, None] * z[None, :]) ** 2)))
        assert rmse < 0.1

    def test_mh_acceptance_window_with_adaptation(self):
        from netlmm import Scenario, generate_dataset, prepare_model_data
        sc = Scenario(n_subjects=100, n_nodes=20, sparsity=0.5, seed=3)
        ds = generate_dataset(sc)
        data = prepare_model_data(ds.phenotype, ds.genotype, ds.kinship,
                                  ds.covariates)
        cfg = SamplerConfig(n_iterations=900, burn_in=300, seed=2,
                            adapt_mh=True, hyper=HyperParams(nu=0.8))
        samples = run_chain(data, cfg, n_components=2)
        assert 0.1 <= samples.acceptance_sigma_a <= 0.6
        assert 0.1 <= samples.acceptance_sigma_e <= 0.6
