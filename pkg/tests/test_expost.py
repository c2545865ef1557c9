import math

import numpy as np
import pytest
from scipy import stats

from confrontier import (
    ForecastCovarianceSpec,
    MomentEstimate,
    PreconditionError,
    SeededSource,
    beta_constants,
    berkowitz,
    binding_active_set,
    chi2_survival_2dof,
    cvar_normal,
    expost_consistency_test,
    expost_frontier_constants,
    expost_frontier_method0,
    expost_frontier_method1,
    expost_moments,
    frontier,
    standard_constants,
)
from confrontier.density import PCLAMP


def random_spd(n, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, n))
    return scale * (a @ a.T / n + 0.1 * np.eye(n))


def random_instance(n, seed):
    rng = np.random.default_rng(seed)
    mu = rng.normal(0.05, 0.04, n)
    return mu, random_spd(n, seed + 1000)


def market_instance(n, seed):
    """Weekly-return-scale moments: mild correlation, sd a few percent."""
    rng = np.random.default_rng(seed)
    sd = rng.uniform(0.015, 0.04, n)
    beta = rng.uniform(0.4, 0.9, n)
    corr = np.outer(beta, beta)
    np.fill_diagonal(corr, 1.0)
    sigma = corr * np.outer(sd, sd)
    mu = rng.uniform(0.0005, 0.003, n)
    return mu, sigma


def tilde_oracle(mu, sigma, a_mat, b_vec):
    """Efficient-set constants written out directly."""
    si_a = np.linalg.solve(sigma, a_mat)
    gram_inv = np.linalg.inv(a_mat.T @ si_a)
    w0 = si_a @ gram_inv @ b_vec
    d0 = np.linalg.inv(sigma) - si_a @ gram_inv @ si_a.T
    return (float(mu @ w0), float(mu @ d0 @ mu),
            float(b_vec @ gram_inv @ b_vec), w0, d0)


class TestStandardConstants:
    def test_budget_closed_forms(self):
        for seed in range(10):
            mu, sigma = random_instance(5, seed)
            c = standard_constants(mu, sigma)
            si1 = np.linalg.solve(sigma, np.ones(5))
            denom = float(np.ones(5) @ si1)
            w0 = si1 / denom
            np.testing.assert_allclose(c.w0, w0, atol=1e-12)
            assert c.alpha0 == pytest.approx(float(mu @ w0), abs=1e-12)
            assert c.alpha2 == pytest.approx(1.0 / denom, abs=1e-12)
            d0 = np.linalg.inv(sigma) - np.outer(si1, si1) / denom
            np.testing.assert_allclose(c.d0, d0, atol=1e-10)
            assert c.alpha1 == pytest.approx(float(mu @ d0 @ mu), abs=1e-12)
            assert c.p == 1

    def test_d0_identities(self):
        mu, sigma = random_instance(6, 3)
        c = standard_constants(mu, sigma)
        # the deflected inverse annihilates the constraint rows and is a
        # generalized inverse of sigma on their complement
        np.testing.assert_allclose(c.d0 @ np.ones(6), np.zeros(6),
                                   atol=1e-10)
        np.testing.assert_allclose(c.d0 @ sigma @ c.d0, c.d0, atol=1e-9)
        assert float(np.trace(c.d0 @ sigma)) == pytest.approx(5.0,
                                                              abs=1e-9)

    def test_general_active_set_minimizes(self):
        mu, sigma = random_instance(5, 7)
        a_mat = np.stack([np.ones(5), np.eye(5)[2]], axis=1)
        b_vec = np.array([1.0, 0.15])
        c = standard_constants(mu, sigma, (a_mat, b_vec))
        assert c.p == 2
        a0, a1, a2, w0, d0 = tilde_oracle(mu, sigma, a_mat, b_vec)
        np.testing.assert_allclose(c.w0, w0, atol=1e-12)
        assert c.alpha1 == pytest.approx(a1, abs=1e-12)
        assert c.alpha2 == pytest.approx(a2, abs=1e-12)
        # w0 is the dispersion minimizer on the constraint set
        assert c.alpha2 == pytest.approx(float(w0 @ sigma @ w0), abs=1e-12)
        np.testing.assert_allclose(a_mat.T @ w0, b_vec, atol=1e-12)

    def test_rank_deficient_rejected(self):
        mu, sigma = random_instance(4, 1)
        a_mat = np.stack([np.ones(4), np.ones(4)], axis=1)
        with pytest.raises(PreconditionError, match="rank deficient"):
            standard_constants(mu, sigma, (a_mat, np.array([1.0, 1.0])))


class TestBetaConstants:
    def test_exemplar_closed_forms(self):
        for seed in range(8):
            n = 4 + seed % 4
            mu, sigma = random_instance(n, seed)
            c = standard_constants(mu, sigma)
            for kappa, rho in ((0.02, 0.0), (0.5, 0.3), (1.0, -0.4)):
                spec = ForecastCovarianceSpec.exemplar(sigma, kappa, rho)
                b0, b1, b2 = beta_constants(c, spec, mu)
                rk = rho * math.sqrt(kappa)
                assert b0 == pytest.approx(rk * (n - 1), abs=1e-10)
                assert b1 == pytest.approx(0.0, abs=1e-12)
                expect_b2 = (kappa * ((n - 1) * (1 + rho * rho) + c.alpha1)
                             + 2.0 * rk * c.alpha1)
                assert b2 == pytest.approx(expect_b2, abs=1e-10)

    def test_monte_carlo_oracle(self):
        # simulate the joint (R, F) law, build w = w0 + theta d0 F, and
        # check the moments of w'R against the closed forms
        n = 4
        rng = np.random.default_rng(42)
        mu = rng.normal(0.04, 0.03, n)
        joint = random_spd(2 * n, 99)
        s_rr = joint[:n, :n]
        s_rf = joint[:n, n:]
        s_ff = joint[n:, n:]
        delta = rng.normal(0.0, 0.02, n)
        spec = ForecastCovarianceSpec(s_rr, s_rf, s_ff, delta)
        c = standard_constants(mu, s_rr)
        betas = beta_constants(c, spec, mu)
        theta = 0.21
        pt = expost_moments(c, betas, theta)

        draws = 400_000
        mean_joint = np.concatenate([mu, mu + delta])
        z = rng.multivariate_normal(mean_joint, joint, size=draws,
                                    method="cholesky")
        r, f = z[:, :n], z[:, n:]
        w = c.w0[None, :] + theta * (f @ c.d0.T)
        x = np.einsum("ij,ij->i", w, r)
        se_mean = x.std() / math.sqrt(draws)
        assert x.mean() == pytest.approx(pt.expected_return,
                                         abs=5 * se_mean)
        m4 = ((x - x.mean()) ** 4).mean()
        se_var = math.sqrt((m4 - x.var() ** 2) / draws)
        assert x.var() == pytest.approx(pt.variance, abs=5 * se_var)


class TestFrontierConstants:
    def test_reparametrized_identity(self):
        mu, sigma = random_instance(5, 11)
        c = standard_constants(mu, sigma)
        spec = ForecastCovarianceSpec.exemplar(sigma, 0.3, 0.25)
        betas = beta_constants(c, spec, mu)
        a0, a1, b0c, b1c = expost_frontier_constants(c, betas)
        for theta in (-0.5, 0.0, 0.2, 1.0):
            pt = expost_moments(c, betas, theta)
            t = theta + betas[1] / b1c
            assert pt.expected_return == pytest.approx(a0 + t * a1,
                                                       abs=1e-12)
            assert pt.variance == pytest.approx(b0c + t * t * b1c,
                                                abs=1e-12)

    def test_degenerate_frontier_rejected(self):
        mu, sigma = random_instance(4, 5)
        c = standard_constants(mu, sigma)
        spec = ForecastCovarianceSpec(sigma, np.zeros((4, 4)),
                                      -10.0 * sigma, np.zeros(4))
        betas = beta_constants(c, spec, mu)
        with pytest.raises(PreconditionError, match="degenerate"):
            expost_frontier_constants(c, betas)


class TestBindingActiveSet:
    def test_interior_point(self):
        a, b = binding_active_set(np.array([0.4, 0.35, 0.25]), 0.5)
        assert a.shape == (3, 1)
        np.testing.assert_array_equal(a[:, 0], np.ones(3))
        np.testing.assert_array_equal(b, [1.0])

    def test_lower_and_upper_pins(self):
        w = np.array([0.0, 0.5, 0.3, 0.2])
        a, b = binding_active_set(w, 0.5)
        # budget + one zero + one cap
        assert a.shape == (4, 3)
        np.testing.assert_allclose(a.T @ w, b, atol=1e-12)
        np.testing.assert_array_equal(a[:, 1], [1.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(a[:, 2], [0.0, 1.0, 0.0, 0.0])
        np.testing.assert_allclose(b, [1.0, 0.0, 0.5])

    def test_all_pinned(self):
        w = np.array([0.0, 1.0])
        a, b = binding_active_set(w, 1.0)
        np.testing.assert_array_equal(a, np.eye(2))
        np.testing.assert_array_equal(b, [0.0, 1.0])

    def test_tolerance(self):
        w = np.array([1e-12, 0.3, 0.7 - 1e-12])
        a, b = binding_active_set(w, 0.7, tol=1e-9)
        assert a.shape[1] == 3


class TestMethod0:
    def check_instance(self, n, seed, mode, upper=0.6):
        mu, sigma = market_instance(n, seed)
        est = MomentEstimate(mu, sigma, "sample", 120)
        f = frontier(est, upper, 5)
        pts = expost_frontier_method0(est, f, upper, mode=mode)
        for fp, ep in zip(f.points, pts):
            w = fp.weights
            # rebuild the active set and constants from scratch
            rows = [np.ones(n)]
            rhs = [1.0]
            pinned = 0
            for i in range(n):
                if w[i] <= 1e-9:
                    e = np.zeros(n); e[i] = 1.0
                    rows.append(e); rhs.append(0.0); pinned += 1
                elif w[i] >= upper - 1e-9:
                    e = np.zeros(n); e[i] = 1.0
                    rows.append(e); rhs.append(upper); pinned += 1
            if pinned >= n:
                a_mat = np.eye(n)
                b_vec = np.where(w >= upper - 1e-9, upper, 0.0)
            else:
                a_mat = np.stack(rows, axis=1)
                b_vec = np.array(rhs)
            a0, a1, a2, w0, d0 = tilde_oracle(mu, sigma, a_mat, b_vec)
            theta = 0.0 if a1 <= 1e-14 else (fp.expected_return - a0) / a1
            p = a_mat.shape[1]
            if mode == "iid":
                infl = theta * theta * (n - p + a1 / 120)
            else:
                infl = theta * theta * (n - p + a1)
            sigma2_p = float(w @ sigma @ w)
            assert ep.variance - sigma2_p == pytest.approx(infl, abs=1e-10)
            assert ep.expected_return == fp.expected_return
            assert ep.theta == pytest.approx(theta, abs=1e-10)

    def test_iid_identity_many_instances(self):
        for seed in range(12):
            self.check_instance(3 + seed % 5, seed, "iid")

    def test_predictive_identity(self):
        for seed in (2, 9, 17):
            self.check_instance(5, seed, "predictive")

    def test_minvar_point_has_zero_inflation_when_interior(self):
        mu, sigma = random_instance(4, 31)
        est = MomentEstimate(mu, sigma, "sample", 80)
        f = frontier(est, 1.0, 4)
        if f.points[0].weights.min() > 1e-8:
            pts = expost_frontier_method0(est, f, 1.0)
            assert pts[0].theta == pytest.approx(0.0, abs=1e-9)
            assert pts[0].variance == pytest.approx(
                f.points[0].stdev ** 2, rel=1e-9)

    def test_sample_size_default_and_override(self):
        mu, sigma = random_instance(4, 13)
        est = MomentEstimate(mu, sigma, "sample", 60)
        f = frontier(est, 1.0, 3)
        auto = expost_frontier_method0(est, f, 1.0, mode="iid")
        manual = expost_frontier_method0(est, f, 1.0, mode="iid", m=60)
        for a, b in zip(auto, manual):
            assert a.variance == b.variance
        other = expost_frontier_method0(est, f, 1.0, mode="iid", m=600)
        assert any(o.variance != a.variance
                   for o, a in zip(other, auto)
                   if abs(a.theta) > 1e-12)

    def test_mode_validated(self):
        mu, sigma = random_instance(3, 0)
        est = MomentEstimate(mu, sigma, "sample", 50)
        f = frontier(est, 1.0, 3)
        with pytest.raises(PreconditionError, match="mode"):
            expost_frontier_method0(est, f, 1.0, mode="bootstrap")


class TestMethod1:
    def build(self, n=5, m=100, seed=5):
        """Instance where mean dispersion dwarfs volatility.

        Mid-frontier solutions then sit strictly inside the box and stay
        there under small forecast perturbations, so the simulated and
        closed-form ex-post variances describe the same object.
        """
        rng = np.random.default_rng(seed)
        sd = rng.uniform(0.0008, 0.0015, n)
        beta = rng.uniform(0.1, 0.3, n)
        corr = np.outer(beta, beta)
        np.fill_diagonal(corr, 1.0)
        sigma = corr * np.outer(sd, sd)
        mu = np.sort(rng.uniform(0.010, 0.020, n))
        est = MomentEstimate(mu, sigma, "sample", m)
        return est, frontier(est, 1.0, 5)

    def test_matches_method0_on_interior_points(self):
        est, f = self.build()
        spec = ForecastCovarianceSpec.exemplar(est.cov, 1.0 / 100)
        m0 = expost_frontier_method0(est, f, 1.0, mode="iid", m=100)
        m1 = expost_frontier_method1(est, f, 1.0, spec, p_draws=200,
                                     source=3)
        tested = 0
        for i in (1, 2):
            if f.points[i].weights.min() <= 1e-8:
                continue
            tested += 1
            assert m1[i].variance == pytest.approx(m0[i].variance,
                                                   rel=0.05)
            assert m1[i].expected_return == pytest.approx(
                f.points[i].expected_return, rel=0.02)
        assert tested > 0

    def test_variance_monotone_in_kappa(self):
        est, f = self.build(seed=8)
        assert f.points[1].weights.min() > 1e-8
        exante = f.points[1].stdev ** 2
        kappas = (0.0, 1e-5, 1e-4, 1e-3)
        variances = []
        for kappa in kappas:
            spec = ForecastCovarianceSpec.exemplar(est.cov, kappa)
            pts = expost_frontier_method1(est, f, 1.0, spec, p_draws=60,
                                          source=11)
            variances.append(pts[1].variance)
        assert variances[0] == pytest.approx(exante, abs=1e-12)
        assert all(b >= a - 1e-16 for a, b in zip(variances,
                                                  variances[1:]))
        assert variances[-1] > exante

    def test_zero_kappa_reduces_to_exante(self):
        est, f = self.build(seed=2)
        spec = ForecastCovarianceSpec.exemplar(est.cov, 0.0)
        pts = expost_frontier_method1(est, f, 1.0, spec, p_draws=5,
                                      source=0)
        for fp, ep in zip(f.points, pts):
            assert ep.variance == pytest.approx(fp.stdev ** 2, abs=1e-10)
            assert ep.expected_return == pytest.approx(fp.expected_return,
                                                       abs=1e-10)

    def test_deterministic(self):
        est, f = self.build(seed=4)
        spec = ForecastCovarianceSpec.exemplar(est.cov, 0.01)
        a = expost_frontier_method1(est, f, 1.0, spec, p_draws=20, source=9)
        b = expost_frontier_method1(est, f, 1.0, spec, p_draws=20, source=9)
        for pa, pb in zip(a, b):
            assert pa.variance == pb.variance

    def test_needs_two_draws(self):
        est, f = self.build()
        spec = ForecastCovarianceSpec.exemplar(est.cov, 0.01)
        with pytest.raises(PreconditionError):
            expost_frontier_method1(est, f, 1.0, spec, p_draws=1)


class TestConsistencyTest:
    def make_point(self):
        from confrontier.expost import ExPostPoint
        return ExPostPoint(0.1, 0.002, 0.0004, "method0-iid")

    def test_matches_manual_pipeline(self):
        pt = self.make_point()
        rng = np.random.default_rng(3)
        realized = rng.normal(4 * 0.002, math.sqrt(4 * 0.0004), 26)
        outcome, consistent, pvalue = expost_consistency_test(
            realized, pt, 4, critical_value=3.2)
        z = (realized - 4 * pt.expected_return) / math.sqrt(
            4 * pt.variance)
        probs = np.clip(stats.norm.cdf(z), PCLAMP, 1 - PCLAMP)
        expect = berkowitz(stats.norm.ppf(probs))
        assert outcome.statistic == pytest.approx(expect.statistic,
                                                  abs=1e-9)
        assert consistent == (outcome.statistic < 3.2)
        assert pvalue == pytest.approx(
            math.exp(-0.5 * outcome.statistic), abs=1e-14)

    def test_consistent_flag_flips_with_critical(self):
        pt = self.make_point()
        rng = np.random.default_rng(8)
        realized = rng.normal(0.0, 0.1, 20)  # badly mismatched law
        out_hi, cons_hi, _ = expost_consistency_test(realized, pt, 4,
                                                     1e9)
        out_lo, cons_lo, _ = expost_consistency_test(realized, pt, 4,
                                                     0.0)
        assert cons_hi and not cons_lo
        assert out_hi.statistic == out_lo.statistic

    def test_validations(self):
        pt = self.make_point()
        with pytest.raises(PreconditionError):
            expost_consistency_test(np.array([0.1]), pt, 4, 3.2)
        from confrontier.expost import ExPostPoint
        bad = ExPostPoint(0.0, 0.0, 0.0, "x")
        with pytest.raises(PreconditionError, match="variance"):
            expost_consistency_test(np.zeros(5), bad, 4, 3.2)


class TestChi2Survival:
    def test_against_scipy(self):
        for x in (0.1, 1.0, 3.21887582486820, 10.0):
            assert chi2_survival_2dof(x) == pytest.approx(
                stats.chi2.sf(x, 2), abs=1e-14)

    def test_twenty_percent_critical(self):
        assert chi2_survival_2dof(3.21887582486820) == pytest.approx(
            0.2, abs=1e-14)


class TestCvar:
    def test_unit_normal_one_percent(self):
        assert cvar_normal(0.0, 1.0, 0.01) == pytest.approx(2.6652,
                                                            abs=1e-4)

    def test_mean_shift(self):
        base = cvar_normal(0.0, 1.0, 0.01)
        assert cvar_normal(0.5, 1.0, 0.01) == pytest.approx(base - 0.5,
                                                            abs=1e-12)

    def test_zero_stdev(self):
        assert cvar_normal(0.02, 0.0, 0.05) == pytest.approx(-0.02)

    def test_integral_oracle(self):
        # tail mean of the normal loss via numerical integration
        alpha = 0.05
        zs = np.linspace(-12.0, stats.norm.ppf(alpha), 400_001)
        dens = stats.norm.pdf(zs)
        tail_mean = np.trapezoid(zs * dens, zs) / alpha
        assert cvar_normal(0.0, 1.0, alpha) == pytest.approx(-tail_mean,
                                                             abs=1e-6)

    def test_daily_rescale(self):
        a = cvar_normal(0.02, 0.1, 0.01, days_per_period=4)
        b = cvar_normal(0.005, 0.05, 0.01, days_per_period=1)
        assert a == pytest.approx(b, abs=1e-14)

    def test_domain(self):
        with pytest.raises(PreconditionError):
            cvar_normal(0.0, 1.0, 0.6)
        with pytest.raises(PreconditionError):
            cvar_normal(0.0, -1.0, 0.01)
        with pytest.raises(PreconditionError):
            cvar_normal(0.0, 1.0, 0.01, days_per_period=0)
