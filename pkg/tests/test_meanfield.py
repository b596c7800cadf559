import numpy as np
import pytest

from steinflow import kernels as K
from steinflow.errors import InstabilityError, InvalidInputError
from steinflow.geometry import DensityField1D, Grid1D
from steinflow.meanfield import (
    evolve_pde,
    mean_field_velocity,
    particles_vs_pde,
    quantile_sample,
    stein_fisher_quadrature,
    stein_pde_rhs,
)
from steinflow.targets import Gaussian, GaussianMixture, standard_normal

STD = standard_normal()


class TestRhs:
    def test_stationary_at_target_second_order(self):
        res = []
        for n in (128, 256, 512, 1024):
            g = Grid1D.for_target(STD, n)
            res.append(np.max(np.abs(stein_pde_rhs(DensityField1D.from_target(STD, g), K.gaussian(), STD))))
        ratios = np.array(res[:-1]) / np.array(res[1:])
        assert np.all(ratios >= 3.5)

    def test_mass_derivative_zero(self):
        g = Grid1D.for_target(STD, 300)
        rho = DensityField1D.from_target(Gaussian(0.7, 0.5), g)
        assert abs(g.integrate(stein_pde_rhs(rho, K.gaussian(0.8), STD))) <= 1e-13

    def test_reflection_symmetry(self):
        # even rho, even V, radial k: u is odd, so rho u is odd and its derivative even
        g = Grid1D.for_target(STD, 257)
        rho = DensityField1D.from_function(g, lambda x: np.exp(-(x**4) / 3))
        u = mean_field_velocity(rho, K.gaussian(), STD)
        r = stein_pde_rhs(rho, K.gaussian(), STD)
        np.testing.assert_allclose(u, -u[::-1], atol=1e-13)
        np.testing.assert_allclose(r, r[::-1], atol=1e-13)
        assert np.abs(r).max() > 1e-2

    def test_velocity_refinement_oracle(self):
        g = Grid1D.for_target(STD, 512)
        fine = Grid1D(g.lo, g.hi, 4 * (g.n - 1) + 1)
        rho_t = Gaussian(0.5, 0.8)
        u = mean_field_velocity(DensityField1D.from_target(rho_t, g), K.gaussian(), STD)
        ref = mean_field_velocity(DensityField1D.from_target(rho_t, fine), K.gaussian(), STD)[::4]
        mask = np.abs(ref) > 1e-3 * np.abs(ref).max()
        assert np.max(np.abs(u[mask] / ref[mask] - 1)) <= 1e-4

    def test_fisher_closed_form(self):
        # rho = N(mu,1), pi = N(0,1), k = e^{-(x-y)^2}: I = mu^2 / sqrt(5)
        g = Grid1D.for_target(STD, 1024)
        val = stein_fisher_quadrature(DensityField1D.from_target(Gaussian(0.5, 1.0), g), K.gaussian(), STD)
        assert val == pytest.approx(0.25 / np.sqrt(5), rel=1e-6)

    def test_rejects_2d(self):
        g = Grid1D(-5, 5, 50)
        with pytest.raises(InvalidInputError):
            stein_pde_rhs(DensityField1D(g, np.ones(50)), K.gaussian(), standard_normal(2))


class TestEvolve:
    def test_target_stays_put(self):
        g = Grid1D.for_target(STD, 1024)
        pi = DensityField1D.from_target(STD, g)
        run = evolve_pde(pi, K.gaussian(), STD, 10.0, 0.01, record_every=100)
        assert np.max(np.abs(run.density.values - pi.values)) <= 1e-7
        assert run.time == pytest.approx(10.0)

    def test_kl_decay_and_dissipation(self):
        g = Grid1D.for_target(STD, 512)
        run = evolve_pde(DensityField1D.from_target(Gaussian(1.0, 1.0), g), K.gaussian(), STD, 2.0, 0.01)
        t = run.times
        kl = np.array([v for _, v in run.kl_series])
        fi = np.array([v for _, v in run.fisher_series])
        assert kl[0] == pytest.approx(0.5, abs=1e-4)
        assert np.all(np.diff(kl) < 0)
        assert np.all(fi >= 0)
        m = len(t) // 2
        rate = (kl[m + 1] - kl[m - 1]) / (t[m + 1] - t[m - 1])
        assert abs(rate + fi[m]) <= 0.05 * fi[m]

    def test_mass_conserved(self):
        g = Grid1D.for_target(STD, 256)
        rho0 = DensityField1D.from_target(GaussianMixture([0.3, 0.7], [[-2.0], [1.0]], [[[0.3]], [[0.5]]]), g)
        run = evolve_pde(rho0, K.gaussian(), STD, 1.0, 0.01, keep_snapshots=True)
        for d in run.snapshots:
            assert d.mass() == pytest.approx(1.0, abs=1e-8)
        assert len(run.series()) == len(run.snapshots)

    def test_ratio_recorded(self):
        g = Grid1D.for_target(STD, 256)
        run = evolve_pde(DensityField1D.from_target(Gaussian(1.0, 1.0), g), K.gaussian(), STD, 0.1, 0.01, record_every=5)
        for (t, kl, fi, ra) in run.series():
            assert ra == pytest.approx(kl / fi)
        assert run.times[-1] == pytest.approx(0.1)

    def test_unstable_dt(self):
        g = Grid1D.for_target(STD, 1024)
        with pytest.raises(InstabilityError):
            evolve_pde(DensityField1D.from_target(Gaussian(1.0, 0.3), g), K.laplace(0.05), STD, 1.0, 5.0)

    def test_bad_arguments(self):
        pi = DensityField1D.from_target(STD, Grid1D.for_target(STD, 64))
        with pytest.raises(InvalidInputError):
            evolve_pde(pi, K.gaussian(), STD, 1.0, 0.0)
        with pytest.raises(InvalidInputError):
            evolve_pde(pi, K.gaussian(), STD, 1.0, 0.1, record_every=0)

    def test_zero_horizon(self):
        pi = DensityField1D.from_target(STD, Grid1D.for_target(STD, 64))
        run = evolve_pde(pi, K.gaussian(), STD, 0.0, 0.1)
        assert len(run.kl_series) == 1 and run.time == 0.0


class TestQuantileSample:
    def test_matches_normal_quantiles(self):
        from scipy.stats import norm

        g = Grid1D.for_target(STD, 2048)
        x = quantile_sample(DensityField1D.from_target(STD, g), 1000)
        u = (np.arange(1000) + 0.5) / 1000
        np.testing.assert_allclose(x, norm.ppf(u), atol=2e-3)

    def test_handles_zero_regions(self):
        g = Grid1D(0.0, 1.0, 11)
        v = np.zeros(11)
        v[4:7] = 1.0
        x = quantile_sample(DensityField1D(g, v), 50)
        assert np.all((x >= 0.3) & (x <= 0.7)) and np.all(np.diff(x) >= 0)


class TestParticlesVsPde:
    def test_sampling_regime(self):
        ns = [50, 100, 200, 400]
        res = np.array([[w for _, w in particles_vs_pde(ns, K.gaussian(), STD, 0.0, seed=s)] for s in range(5)])
        scaled = res.mean(axis=0) * np.sqrt(ns)
        assert scaled.max() / scaled.min() <= 2.0

    @pytest.mark.slow
    def test_error_decreases_with_n(self):
        ns = [50, 100, 200, 400]
        res = np.array([[w for _, w in particles_vs_pde(ns, K.gaussian(), STD, 1.0, seed=s)] for s in range(5)])
        mean = res.mean(axis=0)
        assert np.all(np.diff(mean) < 0)
