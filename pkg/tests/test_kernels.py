import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steinflow import kernels as K
from steinflow.errors import DegenerateConfigurationError, InvalidInputError
from steinflow.targets import Gaussian, benchmark_targets


def all_kernels_1d():
    target = Gaussian(0.0, 1.0)
    return [
        K.gaussian(1.0),
        K.laplace(0.7),
        K.PExponential(p=0.5, sigma=1.3),
        K.PExponential(p=1.5, sigma=0.9),
        K.WeightedMatern1D(target),
        K.Polynomial1D(include_offset=True),
        K.WeightedSum(((1.0, K.Polynomial1D()), (0.1, K.gaussian(1.0)))),
    ]


class TestEval:
    def test_gaussian_diagonal_is_one(self):
        assert K.evaluate(K.gaussian(1.0), 0.37, 0.37) == 1.0

    def test_laplace_half(self):
        # oracle: high-precision exp(-|x - y|)
        expected = float(mpmath.e ** (-mpmath.log(2)))
        assert K.evaluate(K.laplace(1.0), 0.0, math.log(2.0)) == pytest.approx(expected, abs=1e-15)

    def test_polynomial_offset(self):
        assert K.evaluate(K.Polynomial1D(include_offset=True), 2.0, 3.0) == 7.0

    def test_non_finite_rejected(self):
        with pytest.raises(InvalidInputError):
            K.evaluate(K.gaussian(), np.nan, 0.0)

    def test_constant_kernel_via_infinite_width(self):
        k = K.WeightedSum(((1.0, K.PExponential(p=2.0, sigma=np.inf)),))
        assert K.evaluate(k, -3.0, 5.0) == 1.0
        assert np.all(K.grad1(k, -3.0, 5.0) == 0.0)

    def test_matern_definition(self):
        t = Gaussian(0.0, 1.0)
        k = K.WeightedMatern1D(t)
        x, y = 0.3, -1.1
        expected = t.density(x) ** -0.5 * math.exp(-abs(x - y)) * t.density(y) ** -0.5
        assert K.evaluate(k, x, y) == pytest.approx(expected, rel=1e-13)

    def test_weighted_sum_is_linear(self):
        a, b = K.gaussian(0.5), K.laplace(2.0)
        k = K.WeightedSum(((0.3, a), (1.7, b)))
        rng = np.random.default_rng(0)
        X, Y = rng.normal(size=(5, 2)), rng.normal(size=(4, 2))
        np.testing.assert_array_equal(k.matrix(X, Y), 0.3 * a.matrix(X, Y) + 1.7 * b.matrix(X, Y))

    @pytest.mark.parametrize("bad", [0.0, -1.0, 2.5])
    def test_invalid_p(self, bad):
        with pytest.raises(InvalidInputError):
            K.PExponential(p=bad, sigma=1.0)


class TestGrad1:
    def test_gaussian_diagonal_zero(self):
        np.testing.assert_array_equal(K.grad1(K.gaussian(), [0.2, 0.4], [0.2, 0.4]), [0.0, 0.0])

    def test_laplace_diagonal_convention(self):
        np.testing.assert_array_equal(K.grad1(K.laplace(), [1.0, -2.0], [1.0, -2.0]), [0.0, 0.0])

    def test_gaussian_value_by_finite_difference(self):
        k = K.gaussian(1.0)
        h = 1e-6
        fd = (K.evaluate(k, 1.0 + h, 0.0) - K.evaluate(k, 1.0 - h, 0.0)) / (2 * h)
        assert fd == pytest.approx(-2 * math.exp(-1), abs=1e-8)
        assert K.grad1(k, 1.0, 0.0)[0] == pytest.approx(fd, abs=1e-8)

    @pytest.mark.parametrize("k", all_kernels_1d()[:4])
    def test_antisymmetry_translation_invariant(self, k):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(6, 1))
        G = k.grad1(X, X)
        np.testing.assert_allclose(G, -np.swapaxes(G, 0, 1), atol=1e-15)

    @pytest.mark.parametrize("k", all_kernels_1d())
    def test_finite_differences(self, k):
        rng = np.random.default_rng(2)
        h = 1e-6
        for _ in range(50):
            x, y = rng.normal(size=2)
            if abs(x - y) <= 1e-3:
                continue
            fd = (K.evaluate(k, x + h, y) - K.evaluate(k, x - h, y)) / (2 * h)
            g = K.grad1(k, x, y)[0]
            assert g == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_finite_differences_2d(self):
        k = K.PExponential(p=1.3, sigma=0.8)
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(30):
            x, y = rng.normal(size=(2, 2))
            g = K.grad1(k, x, y)
            for i in range(2):
                e = np.zeros(2)
                e[i] = h
                fd = (K.evaluate(k, x + e, y) - K.evaluate(k, x - e, y)) / (2 * h)
                assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-10)


def _mp_kernel(k):
    """High-precision re-implementation of each 1-D variant for mpmath.diff."""
    if isinstance(k, K.PExponential):
        return lambda x, y: mpmath.exp(-((abs(x - y) / k.sigma) ** k.p))
    if isinstance(k, K.WeightedMatern1D):
        t = k.target
        m, v = float(t.means[0, 0]), float(t.covs[0, 0, 0])

        def dens(x):
            return mpmath.exp(-((x - m) ** 2) / (2 * v)) / mpmath.sqrt(2 * mpmath.pi * v)

        return lambda x, y: dens(x) ** -0.5 * mpmath.exp(-abs(x - y)) * dens(y) ** -0.5
    if isinstance(k, K.Polynomial1D):
        return lambda x, y: x * y + (1 if k.include_offset else 0)
    if isinstance(k, K.WeightedSum):
        parts = [(w, _mp_kernel(t)) for w, t in k.terms]
        return lambda x, y: sum(w * f(x, y) for w, f in parts)
    raise TypeError(k)


@pytest.mark.parametrize("k", all_kernels_1d())
def test_grad12_trace_against_mpmath(k):
    rng = np.random.default_rng(4)
    f = _mp_kernel(k)
    mpmath.mp.dps = 30
    for _ in range(10):
        x, y = rng.normal(size=2)
        if abs(x - y) < 1e-2:
            continue
        ref = float(mpmath.diff(f, (mpmath.mpf(x), mpmath.mpf(y)), (1, 1)))
        val = k.grad12_trace(np.array([[x]]), np.array([[y]]))[0, 0]
        assert val == pytest.approx(ref, rel=1e-10, abs=1e-12)


def test_grad12_trace_2d_matches_mixed_differences():
    k = K.PExponential(p=1.5, sigma=1.2)
    x, y = np.array([0.3, -0.4]), np.array([-0.5, 0.8])
    h = 1e-4
    tr = 0.0
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        tr += (
            K.evaluate(k, x + e, y + e)
            - K.evaluate(k, x + e, y - e)
            - K.evaluate(k, x - e, y + e)
            + K.evaluate(k, x - e, y - e)
        ) / (4 * h * h)
    assert k.grad12_trace(x[None], y[None])[0, 0] == pytest.approx(tr, rel=1e-6)


class TestMedianBandwidth:
    def test_three_points(self):
        sigma = K.median_bandwidth([0.0, 1.0, 3.0], p=2.0, n=3)
        assert sigma == pytest.approx(2.0 / math.sqrt(math.log(3.0)), rel=1e-15)

    def test_two_points_laplace(self):
        assert K.median_bandwidth([0.0, 1.0], p=1.0, n=2) == pytest.approx(1.0 / math.log(2.0))

    def test_identical_points(self):
        with pytest.raises(DegenerateConfigurationError):
            K.median_bandwidth([1.0, 1.0, 1.0], p=2.0)

    def test_even_count_median_is_midpoint(self):
        # distances {1, 2, 3, 1, 2, 1}: sorted 1,1,1,2,2,3 -> median 1.5
        sigma = K.median_bandwidth([0.0, 1.0, 2.0, 3.0], p=2.0, n=4)
        assert sigma == pytest.approx(1.5 / math.sqrt(math.log(4.0)))


class TestGram:
    def test_single_point(self):
        np.testing.assert_array_equal(K.gram(K.gaussian(), [[0.5]], 1.0), [[1.0]])

    def test_far_points_near_identity(self):
        G = K.gram(K.gaussian(1.0), [0.0, 50.0, 100.0], scale=0.25)
        np.testing.assert_allclose(G, 0.25 * np.eye(3), atol=1e-300)

    def test_double_loop_oracle(self):
        rng = np.random.default_rng(5)
        pts = rng.normal(size=8)
        G = K.gram(K.gaussian(0.8), pts, 1.0)
        ref = np.array([[math.exp(-((a - b) ** 2) / 0.64) for b in pts] for a in pts])
        np.testing.assert_allclose(G, ref, atol=1e-14, rtol=0)

    def test_psd_all_variants(self):
        rng = np.random.default_rng(6)
        for k in all_kernels_1d():
            for _ in range(100):
                n = int(rng.integers(1, 13))
                G = K.gram(k, rng.normal(size=n))
                lam_min = np.linalg.eigvalsh(G)[0]
                assert lam_min >= -1e-10 * max(1.0, np.abs(G).max())

    def test_psd_2d(self):
        rng = np.random.default_rng(7)
        for p in (0.5, 1.0, 2.0):
            for _ in range(50):
                G = K.gram(K.PExponential(p=p, sigma=1.0), rng.normal(size=(12, 2)))
                assert np.linalg.eigvalsh(G)[0] >= -1e-10


@settings(max_examples=200, deadline=None)
@given(
    st.floats(-50, 50, allow_nan=False),
    st.floats(-50, 50, allow_nan=False),
    st.sampled_from([0.5, 1.0, 1.5, 2.0]),
)
def test_symmetry(x, y, p):
    k = K.PExponential(p=p, sigma=1.7)
    assert K.evaluate(k, x, y) == K.evaluate(k, y, x)
    v = K.evaluate(k, x, y)
    assert 0.0 <= v <= 1.0


def test_symmetry_random_pairs_all_variants():
    rng = np.random.default_rng(8)
    for k in all_kernels_1d():
        for x, y in rng.normal(size=(1000, 2)):
            assert K.evaluate(k, x, y) == pytest.approx(K.evaluate(k, y, x), rel=1e-15)


def test_config_roundtrip():
    t1, _ = benchmark_targets()
    cfg = {"kind": "sum", "terms": [{"weight": 1.0, "kernel": {"kind": "polynomial", "offset": True}},
                                    {"weight": 0.01, "kernel": {"kind": "p_exponential", "p": 1.0, "sigma": 2.0}}]}
    k = K.from_config(cfg, target=t1)
    assert K.to_config(k) == cfg
    med = K.from_config({"kind": "p_exponential", "p": 2.0, "sigma": "median"}, points=[0.0, 1.0, 3.0])
    assert med.sigma == pytest.approx(K.median_bandwidth([0.0, 1.0, 3.0], 2.0))
