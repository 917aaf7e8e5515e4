import math

import numpy as np
import pytest
import scipy.integrate
import scipy.stats

import epibias
from epibias import HyperParams, LatentState, NumericalError, PriorConfig
from epibias.model import (
    _logpdf_psi,
    _logpdf_sigma2,
    _logpdf_V,
    gaussian_loglik,
    predictor_coefficients,
)
from epibias.simulate import sample_constrained_effect, sample_interaction_effect


def zero_state(n_s, n_t):
    return LatentState(mu=0.0, u=np.zeros(n_s), v=np.zeros(n_t), w=np.zeros(n_s * n_t))


class TestPcRate:
    def test_reported_rates(self):
        # lambda = -ln(alpha) / U
        assert epibias.pc_rate(0.1, 0.05) == pytest.approx(29.9573, abs=1e-4)
        assert epibias.pc_rate(1.0, 0.05) == pytest.approx(2.99573, abs=1e-5)

    def test_vacuous_limit(self):
        assert epibias.pc_rate(1.0, 0.999999) == pytest.approx(0.0, abs=1e-5)

    def test_tail_statement_exact(self):
        # P(sqrt(V) > U) = exp(-lam U) = alpha by construction
        for U, alpha in [(0.1, 0.05), (1.0, 0.05), (2.0, 0.2)]:
            lam = epibias.pc_rate(U, alpha)
            assert math.exp(-lam * U) == pytest.approx(alpha, rel=1e-12)


class TestLinearPredictor:
    def test_degenerate_variance(self):
        hp = HyperParams(V=0.0, phi=0.3, psi=0.4, sigma2_eps=1.0)
        state = LatentState(mu=2.5, u=np.ones(3), v=np.ones(2), w=np.ones(6))
        assert np.all(epibias.linear_predictor(state, hp) == 2.5)

    def test_interaction_only_boundary(self):
        hp = HyperParams(V=4.0, phi=0.3, psi=1.0, sigma2_eps=1.0)
        w = np.arange(6.0)
        state = LatentState(mu=1.0, u=np.ones(3), v=np.ones(2), w=w)
        assert np.allclose(epibias.linear_predictor(state, hp), 1.0 + 2.0 * w)

    def test_expansion_semantics(self):
        hp = HyperParams(V=1.0, phi=1.0, psi=0.0, sigma2_eps=1.0)
        state = LatentState(mu=0.0, u=np.array([1.0, -1.0]), v=np.zeros(2), w=np.zeros(4))
        assert epibias.linear_predictor(state, hp).tolist() == [1.0, 1.0, -1.0, -1.0]

    def test_linear_in_latents(self, rng):
        hp = HyperParams(V=0.7, phi=0.4, psi=0.2, sigma2_eps=1.0)
        s1 = LatentState(0.0, rng.normal(size=3), rng.normal(size=2), rng.normal(size=6))
        s2 = LatentState(0.0, rng.normal(size=3), rng.normal(size=2), rng.normal(size=6))
        both = LatentState(0.0, s1.u + s2.u, s1.v + s2.v, s1.w + s2.w)
        assert np.allclose(
            epibias.linear_predictor(both, hp),
            epibias.linear_predictor(s1, hp) + epibias.linear_predictor(s2, hp),
        )


class TestPriors:
    def test_uniform_phi_contributes_zero(self):
        cfg = PriorConfig(U=1.0)
        base = epibias.log_prior_hyper(HyperParams(1.0, 0.5, 0.5, 1.0), cfg)
        other = epibias.log_prior_hyper(HyperParams(1.0, 0.123, 0.5, 1.0), cfg)
        assert base == pytest.approx(other, rel=1e-14)

    def test_out_of_support_is_minus_inf_not_exception(self):
        cfg = PriorConfig(U=1.0)
        assert epibias.log_prior_hyper(HyperParams(-1.0, 0.5, 0.5, 1.0), cfg) == -np.inf
        assert epibias.log_prior_hyper(HyperParams(1.0, 1.0, 0.5, 1.0), cfg) == -np.inf
        assert epibias.log_prior_hyper(HyperParams(1.0, 0.5, 1.0 + 1e-9, 1.0), cfg) == -np.inf
        assert epibias.log_prior_hyper(HyperParams(1.0, 0.5, 0.5, 0.0), cfg) == -np.inf

    def test_psi_prior_integrates_to_one(self):
        # quadrature oracle over (0, 1]
        for lam in (0.5, 1.0, 3.0):
            val, err = scipy.integrate.quad(
                lambda p: math.exp(_logpdf_psi(p, lam)), 0.0, 1.0
            )
            assert val == pytest.approx(1.0, abs=max(1e-6, 3 * err))

    def test_V_prior_integrates_to_one(self):
        lam = epibias.pc_rate(1.0, 0.05)
        val, _ = scipy.integrate.quad(lambda v: math.exp(_logpdf_V(v, lam)), 0.0, np.inf)
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_sigma2_prior_integrates_to_one(self):
        val, _ = scipy.integrate.quad(
            lambda s: math.exp(_logpdf_sigma2(s, 3.0, 2.0)), 0.0, np.inf
        )
        assert val == pytest.approx(1.0, abs=1e-6)

    def test_sigma2_prior_matches_invgamma(self):
        # Gamma(shape, rate) on the precision is InvGamma(shape, scale=rate) on
        # the variance
        shape, rate = 1.0, 5e-5
        for s2 in (1e-4, 0.1, 2.0):
            ours = _logpdf_sigma2(s2, shape, rate)
            ref = scipy.stats.invgamma.logpdf(s2, shape, scale=rate)
            assert ours == pytest.approx(ref, rel=1e-12)

    def test_prior_tail_calibration_monte_carlo(self, rng):
        for U in (0.1, 1.0):
            cfg = PriorConfig(U=U)
            draws = [epibias.prior_sample_hyper(cfg, rng) for _ in range(100_000)]
            p = np.mean([math.sqrt(d.V) > U for d in draws])
            assert abs(p - 0.05) < 0.005

    def test_prior_sampler_matches_density(self, rng):
        # quantile check of psi draws against the CDF implied by the density
        cfg = PriorConfig(U=1.0, lambda_psi=1.0)
        psis = np.array([epibias.prior_sample_hyper(cfg, rng).psi for _ in range(50_000)])
        for q in (0.1, 0.5, 0.9):
            x = np.quantile(psis, q)
            cdf, _ = scipy.integrate.quad(lambda p: math.exp(_logpdf_psi(p, 1.0)), 0, x)
            assert cdf == pytest.approx(q, abs=0.01)


class TestJointLogDensity:
    def test_degenerate_single_cell_likelihood(self, tiny_structures):
        # with y == eta the Gaussian term reduces to the normalizing constant
        cfg = PriorConfig(U=1.0)
        hp = HyperParams(V=0.5, phi=0.5, psi=0.5, sigma2_eps=0.37)
        n_s, n_t = 4, 3
        state = zero_state(n_s, n_t)
        y = epibias.linear_predictor(state, hp)
        lp = epibias.joint_log_density(y, state, hp, tiny_structures, cfg)
        n = n_s * n_t
        expected_lik = -0.5 * n * math.log(2 * math.pi * hp.sigma2_eps)
        assert gaussian_loglik(y, y, hp.sigma2_eps) == pytest.approx(expected_lik)
        # subtracting all other terms leaves exactly the likelihood
        other = lp - expected_lik
        hp2 = HyperParams(V=0.5, phi=0.5, psi=0.5, sigma2_eps=2 * 0.37)
        lp2 = epibias.joint_log_density(y, state, hp2, tiny_structures, cfg)
        delta_prior = epibias.log_prior_hyper(hp2, cfg) - epibias.log_prior_hyper(hp, cfg)
        assert lp2 - lp == pytest.approx(-0.5 * n * math.log(2.0) + delta_prior, rel=1e-10)
        assert math.isfinite(other)

    def test_gmrf_term_matches_scipy_singular_normal(self, rng):
        # oracle: multivariate normal with singular covariance (pseudo-inverse
        # and pseudo-determinant) evaluated on the constraint subspace
        s = epibias.spatial_structure_from_weights(epibias.ring_weights(5))
        u = sample_constrained_effect(s.eigvals, s.eigvecs, rng)
        Q = s.Q_u.toarray()
        ours = (
            -0.5 * s.rank * math.log(2 * math.pi)
            + 0.5 * s.log_gendet
            - 0.5 * u @ Q @ u
        )
        cov = np.linalg.pinv(Q)
        ref = scipy.stats.multivariate_normal.logpdf(
            u, mean=np.zeros(5), cov=cov, allow_singular=True
        )
        assert ours == pytest.approx(float(ref), rel=1e-10)

    def test_constraint_violation_is_hard_error(self, tiny_structures):
        cfg = PriorConfig(U=1.0)
        hp = HyperParams(V=0.5, phi=0.5, psi=0.5, sigma2_eps=1.0)
        bad = LatentState(mu=0.0, u=np.ones(4), v=np.zeros(3), w=np.zeros(12))
        y = np.zeros(12)
        with pytest.raises(NumericalError, match="constraint"):
            epibias.joint_log_density(y, bad, hp, tiny_structures, cfg)

    def test_variance_share_semantics(self, rng):
        # prior-predictive decomposition: on a vertex-transitive spatial graph
        # the marginal variances are homogeneous, so empirical shares track
        # (1-psi)phi / (1-psi)(1-phi) / psi up to the temporal end effects;
        # compare against shares predicted from the exact marginal variances
        hp = HyperParams(V=1.0, phi=0.6, psi=0.3, sigma2_eps=1e-12)
        sc = epibias.SimScenario(n_s=12, n_t=8, true_hp=hp, graph="ring", seed=77)
        sim_structures = epibias.simulate_dataset(sc).structures
        s, t = sim_structures.spatial, sim_structures.temporal
        a_u, a_v, a_w = predictor_coefficients(hp)
        n_draws = 10_000
        var_parts = np.zeros(3)
        for _ in range(n_draws):
            u = sample_constrained_effect(s.eigvals, s.eigvecs, rng)
            v = sample_constrained_effect(t.eigvals, t.eigvecs, rng)
            w = sample_interaction_effect(s, t.eigvals, t.eigvecs, rng)
            var_parts += [
                np.mean((a_u * np.repeat(u, 8)) ** 2),
                np.mean((a_v * np.tile(v, 12)) ** 2),
                np.mean((a_w * w) ** 2),
            ]
        emp = var_parts / var_parts.sum()
        mean_var_u = np.diag(np.linalg.pinv(s.Q_u.toarray())).mean()
        mean_var_v = np.diag(np.linalg.pinv(t.Q_v.toarray())).mean()
        expected = np.array(
            [
                a_u**2 * mean_var_u,
                a_v**2 * mean_var_v,
                a_w**2 * mean_var_u * mean_var_v,
            ]
        )
        expected /= expected.sum()
        assert np.abs(emp - expected).max() < 0.02
        # nominal shares are recovered up to the arithmetic/geometric spread
        nominal = np.array([(1 - 0.3) * 0.6, (1 - 0.3) * 0.4, 0.3])
        assert np.abs(expected - nominal).max() < 0.06
