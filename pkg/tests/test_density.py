import math

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.stats import chisquare

from ssmkit.density import (BandwidthMatrix, ConstrainedSampler, KdeModel,
                            KdeSupportError, Standardization, fit_svd_basis,
                            kde_density, kde_sample, kde_sample_conditional,
                            sample_future_given_initial, silverman_bandwidth)


def brute_force_density(samples, h_matrix, point):
    """Independent double-loop oracle for the kernel average."""
    n, d = samples.shape
    inv = np.linalg.inv(h_matrix)
    norm = 1.0 / ((2 * math.pi) ** (d / 2) * math.sqrt(np.linalg.det(h_matrix)))
    total = 0.0
    for i in range(n):
        q = 0.0
        for a in range(d):
            for b in range(d):
                q += (point[a] - samples[i, a]) * inv[a, b] * (point[b] - samples[i, b])
        total += norm * math.exp(-0.5 * q)
    return total / n


class TestSilverman:
    def test_paper_scale_value(self):
        # standardized 4-D data at the field-data sample count
        rng = np.random.default_rng(0)
        data = rng.standard_normal((500, 4))
        data = (data - data.mean(0)) / data.std(0, ddof=1)
        n = 469_453
        h_expected = (4.0 / ((4 + 2) * n)) ** (1.0 / 8)
        assert h_expected == pytest.approx(0.186, abs=5e-4)
        # the implementation reproduces the rule at the small-sample scale
        bw = silverman_bandwidth(data)
        assert bw.h == pytest.approx((4.0 / (6 * 500)) ** 0.125, rel=1e-12)

    def test_two_point_hand_value(self):
        bw = silverman_bandwidth(np.asarray([[0.0], [2.0]]))
        assert bw.h == pytest.approx(math.sqrt(2) * (4.0 / 6.0) ** 0.2, rel=1e-12)

    def test_identical_samples_rejected(self):
        with pytest.raises(ValueError):
            silverman_bandwidth(np.ones((5, 3)))


class TestKdeDensity:
    def test_single_kernel_at_origin(self):
        for d in (1, 2, 4):
            model = KdeModel(np.zeros((1, d)), BandwidthMatrix.scalar(1.0, d))
            assert kde_density(model, np.zeros(d)) == pytest.approx(
                (2 * math.pi) ** (-d / 2), rel=1e-12)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(2, 30))
            d = int(rng.integers(1, 5))
            samples = rng.normal(0, 2, (n, d))
            if rng.random() < 0.5:
                bw = BandwidthMatrix.scalar(float(rng.uniform(0.3, 2.0)), d)
            else:
                a = rng.normal(0, 1, (d, d))
                bw = BandwidthMatrix(a @ a.T + 0.5 * np.eye(d))
            model = KdeModel(samples, bw)
            point = rng.normal(0, 2, d)
            expected = brute_force_density(samples, bw.matrix, point)
            assert kde_density(model, point) == pytest.approx(expected, rel=1e-12)

    def test_monte_carlo_normalization(self):
        # importance-sampled Monte Carlo integral over effectively all of R^2
        rng = np.random.default_rng(2)
        samples = rng.normal(0, 1, (40, 2))
        model = KdeModel(samples, BandwidthMatrix.scalar(0.5, 2))
        scale = 2.5
        draws = rng.normal(0, scale, (30_000, 2))
        log_q = (-0.5 * np.sum((draws / scale) ** 2, axis=1)
                 - 2 * math.log(scale) - math.log(2 * math.pi))
        dens = np.asarray([kde_density(model, p) for p in draws])
        integral = float(np.mean(dens / np.exp(log_q)))
        assert integral == pytest.approx(1.0, abs=0.01)

    def test_dimension_mismatch(self):
        model = KdeModel(np.zeros((1, 3)), BandwidthMatrix.scalar(1.0, 3))
        with pytest.raises(ValueError):
            kde_density(model, np.zeros(2))


class TestKdeSample:
    def test_degenerate_bandwidth_returns_sample(self):
        model = KdeModel(np.asarray([[3.0, -1.0]]), BandwidthMatrix.scalar(1e-12, 2))
        out = kde_sample(model, np.random.default_rng(0))
        assert np.allclose(out, [3.0, -1.0], atol=1e-6)

    def test_mean_matches_data(self):
        rng = np.random.default_rng(3)
        samples = rng.normal(2.0, 3.0, (200, 2))
        model = KdeModel(samples, BandwidthMatrix.scalar(0.8, 2))
        draws = kde_sample(model, np.random.default_rng(4), size=100_000)
        sigma = draws.std(axis=0)
        tol = 4 * sigma / math.sqrt(100_000)
        assert np.all(np.abs(draws.mean(0) - samples.mean(0)) < tol)

    def test_covariance_is_data_plus_bandwidth(self):
        rng = np.random.default_rng(5)
        samples = rng.multivariate_normal([0, 0], [[4, 1], [1, 2]], 300)
        bw = BandwidthMatrix.scalar(1.0, 2)
        model = KdeModel(samples, bw)
        draws = kde_sample(model, np.random.default_rng(6), size=100_000)
        expected = np.cov(samples.T, bias=True) + bw.matrix
        observed = np.cov(draws.T)
        assert np.all(np.abs(observed - expected) <= 0.05 * np.abs(expected) + 0.02)


class TestConditionalSampling:
    def test_two_kernel_weights(self):
        model = KdeModel(np.asarray([[0.0, 0.0], [10.0, 10.0]]),
                         BandwidthMatrix.scalar(1.0, 2))
        draws = kde_sample_conditional(model, [0], [0.0],
                                       np.random.default_rng(7), size=20_000)
        # second kernel weight ratio exp(-50): all mass on the first kernel
        assert abs(draws.mean()) < 0.05
        assert draws.std() == pytest.approx(1.0, abs=0.02)

    def test_single_kernel_exact_gaussian(self):
        model = KdeModel(np.asarray([[1.0, 2.0, 3.0]]), BandwidthMatrix.scalar(0.5, 3))
        draws = kde_sample_conditional(model, [0, 1], [5.0, 5.0],
                                       np.random.default_rng(8), size=50_000)
        # scalar bandwidth: conditioning does not shift independent coords
        assert draws.mean() == pytest.approx(3.0, abs=0.02)
        assert draws.std() == pytest.approx(0.5, abs=0.01)

    def test_chi_square_against_conditional_density(self):
        rng = np.random.default_rng(9)
        samples = np.column_stack([rng.normal(0, 2, 60),
                                   rng.normal(0, 1, 60) + 0.8 * rng.normal(0, 2, 60)])
        h = 0.6
        model = KdeModel(samples, BandwidthMatrix.scalar(h, 2))
        cond_value = 0.7
        draws = kde_sample_conditional(model, [0], [cond_value],
                                       np.random.default_rng(10), size=100_000)

        # independently computed conditional density of the second coordinate
        def conditional_density(x1):
            w = np.exp(-0.5 * ((cond_value - samples[:, 0]) / h) ** 2)
            comps = np.exp(-0.5 * ((x1 - samples[:, 1]) / h) ** 2) / (h * math.sqrt(2 * math.pi))
            return float(np.sum(w * comps) / np.sum(w))

        edges = np.quantile(draws, np.linspace(0, 1, 21))
        edges[0], edges[-1] = -np.inf, np.inf
        observed, _ = np.histogram(draws, edges)
        expected = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            a = draws.min() - 10 if lo == -np.inf else lo
            b = draws.max() + 10 if hi == np.inf else hi
            expected.append(quad(conditional_density, a, b, limit=200)[0])
        expected = np.asarray(expected)
        expected *= observed.sum() / expected.sum()
        stat, p = chisquare(observed, expected)
        assert p > 0.01

    def test_out_of_support_conditioning(self):
        model = KdeModel(np.zeros((3, 2)), BandwidthMatrix.scalar(1.0, 2))
        with pytest.raises(KdeSupportError):
            kde_sample_conditional(model, [0], [1e300], np.random.default_rng(0))

    def test_invalid_subsets(self):
        model = KdeModel(np.zeros((3, 2)), BandwidthMatrix.scalar(1.0, 2))
        with pytest.raises(ValueError):
            kde_sample_conditional(model, [], [], np.random.default_rng(0))
        with pytest.raises(ValueError):
            kde_sample_conditional(model, [0, 1], [1.0, 2.0], np.random.default_rng(0))


class TestSvdBasis:
    def test_exact_low_rank_reconstruction(self):
        rng = np.random.default_rng(11)
        latents = rng.normal(0, 1, (40, 3))
        x = latents @ rng.normal(0, 1, (3, 2))
        y = latents @ rng.normal(0, 1, (3, 8))
        basis, coords = fit_svd_basis(x, y, d=3)
        recon = basis.reconstruct(coords)
        stacked = np.hstack([x, y])
        assert np.max(np.abs(recon - stacked)) < 1e-10

    def test_eckart_young_equality(self):
        rng = np.random.default_rng(12)
        x = rng.normal(0, 2, (60, 2))
        y = rng.normal(0, 1, (60, 10))
        d = 5
        basis, coords = fit_svd_basis(x, y, d=d)
        stacked = np.hstack([x - x.mean(0), y - y.mean(0)]).T
        s_full = np.linalg.svd(stacked, compute_uv=False)
        recon = (basis.reconstruct(coords) - np.concatenate([x.mean(0), y.mean(0)])).T
        err = np.linalg.norm(stacked - recon)
        assert err == pytest.approx(math.sqrt(np.sum(s_full[d:] ** 2)), abs=1e-9)

    def test_orthonormal_factors_sorted_singular_values(self):
        rng = np.random.default_rng(13)
        basis, _ = fit_svd_basis(rng.normal(0, 1, (50, 2)),
                                 rng.normal(0, 1, (50, 12)), d=6)
        u = np.vstack([basis.u_top, basis.u_bottom])
        assert np.max(np.abs(u.T @ u - np.eye(6))) <= 1e-10
        s = basis.singular_values
        assert np.all(s[:-1] >= s[1:]) and np.all(s > 0)

    def test_case_study_shape_accepted(self):
        rng = np.random.default_rng(14)
        basis, coords = fit_svd_basis(rng.normal(15, 3, (200, 2)),
                                      rng.normal(15, 3, (200, 50)), d=4)
        assert basis.d_x == 2 and basis.d_y == 50 and basis.d == 4
        assert coords.shape == (200, 4)

    def test_rank_and_count_validation(self):
        rng = np.random.default_rng(15)
        x, y = rng.normal(0, 1, (10, 2)), rng.normal(0, 1, (10, 5))
        with pytest.raises(ValueError):
            fit_svd_basis(x, y, d=2)   # d must exceed d_x
        with pytest.raises(ValueError):
            fit_svd_basis(x, y, d=7)   # d must stay below d_x + d_y
        with pytest.raises(ValueError):
            fit_svd_basis(x[:3], y[:3], d=4)  # fewer pairs than d


class TestConstrainedSampling:
    def _fit(self, seed=16, n=150):
        rng = np.random.default_rng(seed)
        v0 = rng.uniform(5, 25, n)
        a0 = rng.normal(0, 1, n)
        t = np.linspace(0.1, 5.0, 50)
        y = v0[:, None] + a0[:, None] * t + rng.normal(0, 0.3, (n, 50))
        x = np.column_stack([v0, a0])
        basis, coords = fit_svd_basis(x, y, d=4)
        std = Standardization.fit(coords)
        kde = KdeModel(std.apply(coords), silverman_bandwidth(std.apply(coords)))
        return basis, std, kde

    def test_constraint_satisfied(self):
        basis, std, kde = self._fit()
        a_mat, b = basis.constraint([15.0, 1.0])
        sampler = ConstrainedSampler(kde, a_mat, b, std)
        coords = sampler.draw_coords(np.random.default_rng(17), 2000)
        assert np.max(np.abs(coords @ a_mat.T - b)) <= 1e-9

    def test_conditioning_direction(self):
        basis, std, kde = self._fit()
        up = sample_future_given_initial(basis, kde, [15.0, 1.0],
                                         np.random.default_rng(18), size=300,
                                         standardization=std)
        down = sample_future_given_initial(basis, kde, [15.0, -1.0],
                                           np.random.default_rng(19), size=300,
                                           standardization=std)
        assert up[:, -1].mean() > down[:, -1].mean() + 2.0
        # first future samples track the conditioned speed
        assert up[:, 0].mean() == pytest.approx(15.1, abs=0.3)
        assert down[:, 0].mean() == pytest.approx(14.9, abs=0.3)

    def test_futures_clamped_at_zero(self):
        basis, std, kde = self._fit()
        out = sample_future_given_initial(basis, kde, [0.5, -1.5],
                                          np.random.default_rng(20), size=500,
                                          standardization=std)
        assert np.all(out >= 0.0)

    def test_selector_constraint_matches_conditional_sampler(self):
        # A built from coordinate-selector rows makes the constrained sampler
        # a generalization of conditioning on those coordinates.
        rng = np.random.default_rng(21)
        samples = rng.normal(0, 1.5, (80, 3))
        kde = KdeModel(samples, BandwidthMatrix.scalar(0.7, 3))
        sel = np.zeros((1, 3))
        sel[0, 0] = 1.0
        sampler = ConstrainedSampler(kde, sel, np.asarray([0.4]))
        cdraws = sampler.draw_coords(np.random.default_rng(22), 50_000)
        assert np.max(np.abs(cdraws[:, 0] - 0.4)) <= 1e-9
        gdraws = kde_sample_conditional(kde, [0], [0.4],
                                        np.random.default_rng(23), size=50_000)
        for k in range(2):
            assert cdraws[:, k + 1].mean() == pytest.approx(gdraws[:, k].mean(), abs=0.03)
            assert cdraws[:, k + 1].std() == pytest.approx(gdraws[:, k].std(), abs=0.03)

    def test_full_rank_required(self):
        basis, std, kde = self._fit()
        a_mat, b = basis.constraint([15.0, 1.0])
        bad = np.vstack([a_mat, a_mat[0]])
        with pytest.raises(ValueError):
            ConstrainedSampler(kde, bad, np.concatenate([b, b[:1]]), std)


def test_standardization_roundtrip():
    rng = np.random.default_rng(24)
    data = rng.normal(3, 5, (100, 4))
    std = Standardization.fit(data)
    z = std.apply(data)
    assert np.allclose(z.mean(0), 0, atol=1e-12)
    assert np.allclose(z.std(0, ddof=1), 1, rtol=1e-12)
    assert np.allclose(std.invert(z), data, rtol=1e-12)
