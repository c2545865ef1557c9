import numpy as np
import pytest

from confrontier import (
    DataError,
    PreconditionError,
    ReturnsPanel,
    WindowSpec,
    ledoit_wolf,
    make_estimator,
    sample_moments,
    spd_repair,
)


def make_panel(rows=60, assets=5, seed=11):
    rng = np.random.default_rng(seed)
    base = rng.normal(0.001, 0.02, (rows, 1))
    idio = rng.normal(0.0, 0.015, (rows, assets))
    dates = tuple("19%02d-01-01" % (10 + i) for i in range(rows))
    return ReturnsPanel(dates, tuple("S%d" % j for j in range(assets)),
                        0.6 * base + idio)


def loop_mle_moments(block):
    """Two-pass textbook estimator with explicit loops."""
    t, n = block.shape
    mean = np.array([sum(block[k, i] for k in range(t)) / t
                     for i in range(n)])
    cov = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            cov[i, j] = sum((block[k, i] - mean[i]) * (block[k, j] - mean[j])
                            for k in range(t)) / t
    return mean, cov


def loop_market_shrinkage(block):
    """Market-model shrinkage target and intensity, all explicit loops.

    Independent re-derivation of the published estimator: pi-hat sums the
    asymptotic variances of the sample covariances, rho-hat the
    covariances with the market-model target, gamma-hat the squared
    target-sample distance; intensity = (pi - rho) / gamma / t.
    """
    t, n = block.shape
    mean = block.mean(axis=0)
    x = block - mean
    xmkt = x.mean(axis=1)
    varmkt = sum(xmkt[k] ** 2 for k in range(t)) / t
    sample = np.zeros((n, n))
    covmkt = np.zeros(n)
    for i in range(n):
        covmkt[i] = sum(x[k, i] * xmkt[k] for k in range(t)) / t
        for j in range(n):
            sample[i, j] = sum(x[k, i] * x[k, j] for k in range(t)) / t
    prior = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            prior[i, j] = covmkt[i] * covmkt[j] / varmkt
        prior[i, i] = sample[i, i]

    gamma_hat = sum((sample[i, j] - prior[i, j]) ** 2
                    for i in range(n) for j in range(n))
    pi_hat = 0.0
    for i in range(n):
        for j in range(n):
            pi_hat += sum((x[k, i] * x[k, j] - sample[i, j]) ** 2
                          for k in range(t)) / t
    rho_hat = 0.0
    for i in range(n):
        rho_hat += sum((x[k, i] ** 2 - sample[i, i]) ** 2
                       for k in range(t)) / t
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            v1 = sum(x[k, i] ** 2 * x[k, j] * xmkt[k]
                     for k in range(t)) / t - covmkt[i] * sample[i, j]
            v3 = sum(x[k, i] * x[k, j] * xmkt[k] ** 2
                     for k in range(t)) / t - varmkt * sample[i, j]
            rho_hat += (2.0 * v1 * covmkt[j] / varmkt
                        - v3 * covmkt[i] * covmkt[j] / varmkt ** 2)
    kappa = (pi_hat - rho_hat) / gamma_hat if gamma_hat > 0 else 0.0
    delta = min(max(kappa / t, 0.0), 1.0)
    return delta * prior + (1.0 - delta) * sample, delta


class TestSampleMoments:
    def test_matches_two_pass_loop(self):
        panel = make_panel()
        window = WindowSpec(39, 30, 1)
        est = sample_moments(panel, window)
        mean, cov = loop_mle_moments(panel.returns[10:40])
        np.testing.assert_allclose(est.mean, mean, atol=1e-15)
        np.testing.assert_allclose(est.cov, cov, atol=1e-18)
        assert est.estimator == "sample"
        assert est.sample_size == 30

    def test_cov_is_symmetric_psd(self):
        panel = make_panel(rows=40)
        est = sample_moments(panel, WindowSpec(39, 40, 1))
        np.testing.assert_allclose(est.cov, est.cov.T, atol=0)
        assert np.linalg.eigvalsh(est.cov).min() > -1e-15


class TestLedoitWolf:
    def test_matches_loop_oracle(self):
        panel = make_panel(rows=50, assets=6, seed=3)
        window = WindowSpec(49, 50, 1)
        est = ledoit_wolf(panel, window)
        cov, delta = loop_market_shrinkage(panel.returns)
        assert est.intensity == pytest.approx(delta, abs=1e-12)
        np.testing.assert_allclose(est.cov, cov, atol=1e-14)

    def test_intensity_within_unit_interval(self):
        for seed in range(6):
            panel = make_panel(rows=30, assets=4, seed=seed)
            est = ledoit_wolf(panel, WindowSpec(29, 30, 1))
            assert 0.0 <= est.intensity <= 1.0

    def test_intensity_override(self):
        panel = make_panel(rows=40, assets=4)
        window = WindowSpec(39, 40, 1)
        full = ledoit_wolf(panel, window, intensity=1.0)
        none = ledoit_wolf(panel, window, intensity=0.0)
        raw = sample_moments(panel, window)
        np.testing.assert_allclose(none.cov, raw.cov, atol=1e-15)
        np.testing.assert_allclose(np.diag(full.cov), np.diag(raw.cov),
                                   atol=1e-15)

    def test_zero_variance_market(self):
        rows = 10
        dates = tuple("20%02d-01-01" % i for i in range(rows))
        flat = ReturnsPanel(dates, ("A", "B"), np.zeros((rows, 2)))
        with pytest.raises(DataError, match="market"):
            ledoit_wolf(flat, WindowSpec(rows - 1, rows, 1))

    def test_mean_matches_sample(self):
        panel = make_panel()
        window = WindowSpec(59, 60, 1)
        np.testing.assert_allclose(ledoit_wolf(panel, window).mean,
                                   sample_moments(panel, window).mean,
                                   atol=0)


class TestSpdRepair:
    def test_negative_eigenvalue_lifted(self):
        mat = np.array([[1.0, 2.0], [2.0, 1.0]])  # eigvals 3, -1
        fixed = spd_repair(mat)
        floor = 1e-10 * np.trace(mat) / 2  # floor set by the input scale
        assert np.linalg.eigvalsh(fixed).min() >= floor * (1 - 1e-6)

    def test_healthy_matrix_untouched(self):
        mat = np.array([[2.0, 0.3], [0.3, 1.0]])
        np.testing.assert_array_equal(spd_repair(mat), mat)

    def test_zero_matrix_passes_through(self):
        np.testing.assert_array_equal(spd_repair(np.zeros((3, 3))),
                                      np.zeros((3, 3)))


class TestRegistry:
    def test_tags(self):
        panel = make_panel(rows=30)
        window = WindowSpec(29, 30, 1)
        assert make_estimator("sample")(panel, window).estimator == "sample"
        assert make_estimator("ledoit-wolf")(panel, window).estimator \
            == "ledoit-wolf"

    def test_unknown_tag(self):
        with pytest.raises(PreconditionError):
            make_estimator("magic")
