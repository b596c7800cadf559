import math

import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from steinflow.targets import Gaussian, GaussianMixture, from_config, benchmark_targets, standard_normal


def mixture_logpdf_oracle(t, x):
    # direct sum of component densities through scipy, in log space
    logs = [
        math.log(w) + multivariate_normal(mean=m, cov=c).logpdf(x)
        for w, m, c in zip(t.weights, t.means, t.covs)
    ]
    mx = max(logs)
    return mx + math.log(sum(math.exp(v - mx) for v in logs))


class TestPotential:
    def test_standard_normal_at_zero(self):
        assert standard_normal().potential(0.0) == pytest.approx(0.5 * math.log(2 * math.pi), rel=1e-15)

    def test_standard_normal_quadratic(self):
        assert standard_normal().potential(2.0) == pytest.approx(2.0 + 0.5 * math.log(2 * math.pi), rel=1e-15)

    def test_mixture_1d_at_zero(self):
        t, _ = benchmark_targets()
        assert t.potential(0.0) == pytest.approx(-mixture_logpdf_oracle(t, [0.0]), abs=1e-12)

    def test_mixture_2d_batch(self):
        _, t = benchmark_targets()
        rng = np.random.default_rng(0)
        X = rng.normal(scale=4.0, size=(20, 2))
        V = t.potential(X)
        for x, v in zip(X, V):
            assert v == pytest.approx(-mixture_logpdf_oracle(t, x), abs=1e-10)

    def test_far_tail_is_finite(self):
        t, _ = benchmark_targets()
        assert np.isfinite(t.potential(1e3))
        assert np.all(np.isfinite(t.grad_potential(np.array([[-1e3], [1e3]]))))


class TestGradPotential:
    def test_standard_normal(self):
        x = np.array([0.3, -1.2])
        np.testing.assert_allclose(standard_normal(2).grad_potential(x), x, rtol=1e-15)

    def test_gaussian_precision(self):
        cov = np.array([[2.0, 0.3], [0.3, 0.5]])
        mu = np.array([1.0, -1.0])
        x = np.array([0.2, 0.7])
        np.testing.assert_allclose(Gaussian(mu, cov).grad_potential(x), np.linalg.solve(cov, x - mu), rtol=1e-13)

    def test_symmetric_mixture_zero_at_origin(self):
        t, _ = benchmark_targets()
        assert abs(t.grad_potential(0.0)[0]) < 1e-15

    def test_mixture_1d_at_one_finite_difference(self):
        t, _ = benchmark_targets()
        h = 1e-5
        fd = (t.potential(1.0 + h) - t.potential(1.0 - h)) / (2 * h)
        assert t.grad_potential(1.0)[0] == pytest.approx(fd, abs=1e-6)

    @pytest.mark.parametrize("which", [0, 1])
    def test_finite_differences_random(self, which):
        t = benchmark_targets()[which]
        rng = np.random.default_rng(which)
        h = 1e-6
        for x in rng.normal(scale=5.0, size=(100, t.dim)):
            g = t.grad_potential(x)
            for i in range(t.dim):
                e = np.zeros(t.dim)
                e[i] = h
                fd = (t.potential(x + e) - t.potential(x - e)) / (2 * h)
                assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)

    def test_hessian_by_finite_differences(self):
        _, t = benchmark_targets()
        x = np.array([1.3, -0.4])
        h = 1e-5
        H = t.hess_potential(x)
        for i in range(2):
            e = np.zeros(2)
            e[i] = h
            col = (t.grad_potential(x + e) - t.grad_potential(x - e)) / (2 * h)
            np.testing.assert_allclose(H[:, i], col, rtol=1e-5, atol=1e-7)


def test_density_normalized_1d():
    t, _ = benchmark_targets()
    lo, hi = t.default_domain()
    x = np.linspace(lo, hi, 20001)
    mass = np.trapezoid(t.density(x), x)
    assert abs(mass - 1.0) <= 1e-6


class TestSample:
    def test_gaussian_mean(self):
        rng = np.random.default_rng(11)
        n = 100_000
        s = standard_normal().sample(n, rng)
        assert abs(s.mean()) <= 4 / math.sqrt(n)

    def test_component_frequencies(self):
        t, _ = benchmark_targets()
        rng = np.random.default_rng(12)
        s = t.sample(100_000, rng)[:, 0]
        # classify by nearest mean: overlap between neighbours at +-2/+-6 is negligible
        # beyond |x - mu| > 2, so compare the counts on the four half-lines
        counts = np.array([(s < -4).sum(), ((s >= -4) & (s < 0)).sum(), ((s >= 0) & (s < 4)).sum(), (s >= 4).sum()])
        # misclassification mass per component is P(|Z| > 2) / 2 ~ 0.023 each way,
        # which balances by symmetry; 0.01 band is the multinomial 5-sigma envelope
        assert np.all(np.abs(counts / s.size - 0.25) <= 0.01)

    def test_reproducible(self):
        t, _ = benchmark_targets()
        a = t.sample(50, np.random.default_rng(3))
        b = t.sample(50, np.random.default_rng(3))
        np.testing.assert_array_equal(a, b)

    def test_law_against_cdf(self):
        rng = np.random.default_rng(4)
        s = standard_normal().sample(20_000, rng)[:, 0]
        from scipy.stats import kstest

        assert kstest(s, norm.cdf).pvalue > 1e-3


class TestBenchmarkTargets:
    def test_1d(self):
        t, _ = benchmark_targets()
        assert sorted(t.means[:, 0]) == [-6.0, -2.0, 2.0, 6.0]
        np.testing.assert_array_equal(t.weights, [0.25] * 4)
        np.testing.assert_array_equal(t.covs[:, 0, 0], [1.0] * 4)

    def test_2d(self):
        _, t = benchmark_targets()
        np.testing.assert_array_equal(t.means, [[-5, -1], [-5, 1], [5, -1], [5, 1], [0, 1], [0, -1]])
        for c in t.covs[:4]:
            np.testing.assert_array_equal(c, 0.2 * np.eye(2))
        for c in t.covs[4:]:
            np.testing.assert_array_equal(c, np.diag([10.0, 0.5]))
        np.testing.assert_allclose(t.weights, [1 / 6] * 6)


def test_from_config():
    t = from_config({"kind": "gaussian_mixture", "weights": [0.5, 0.5], "means": [[-1.0], [1.0]], "covs": [[[1.0]], [[2.0]]]})
    assert isinstance(t, GaussianMixture) and t.dim == 1
    assert from_config("mixture_2d").n_components == 6
    with pytest.raises(ValueError):
        from_config({"kind": "gaussian_mixture", "weights": [0.6, 0.6], "means": [[0.0], [1.0]], "covs": [[[1.0]], [[1.0]]]})
