import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from predres.kernels import GaussianKernel, StudentTKernel
from predres.meanvar import (
    SufficientStats,
    absorb,
    chol_rank_one_update,
    det_step_factor,
    forward_1d,
    init_stats,
    posterior_mean_moments,
    posterior_variance_moments,
    predictive_at,
    running_moments,
    sample_next,
    simulate_path_1d,
    update_stats,
)
from predres.streams import rng_substream


def batch_cov(x):
    m = x.mean(axis=0)
    d = x - m
    return d.T @ d / x.shape[0]


class TestInitStats:
    def test_univariate(self):
        s = init_stats(1, "empirical")
        assert s.n == 0 and s.mean.tolist() == [0.0] and s.cov.tolist() == [[1.0]]

    def test_regularized_identity(self):
        s = init_stats(3, "regularized")
        assert np.array_equal(s.cov, np.eye(3))
        assert s.log_det == 0.0

    def test_bad_dimension_and_mode(self):
        with pytest.raises(ValueError):
            init_stats(0)
        with pytest.raises(ValueError):
            init_stats(2, "shrunk")


class TestUpdateStats:
    def test_two_then_three_points(self):
        s = init_stats(1)
        update_stats(s, [0.0])
        update_stats(s, [2.0])
        assert s.mean[0] == 1.0 and s.cov[0, 0] == 1.0
        old = s.cov.copy()
        update_stats(s, [1.0])
        assert s.mean[0] == 1.0
        assert s.cov[0, 0] == pytest.approx(2 / 3, abs=1e-15)
        # deviation from the old mean is zero, so only the scaling term acts
        assert s.cov[0, 0] == pytest.approx(2 / 3 * old[0, 0] + 0.0, abs=1e-15)

    def test_singular_bivariate(self):
        s = absorb(init_stats(2), [[0.0, 0.0], [2.0, 0.0]])
        assert np.allclose(s.cov, [[1.0, 0.0], [0.0, 0.0]])
        assert s.singular and s.log_det == -math.inf

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            update_stats(init_stats(2), [1.0])

    def test_nonfinite(self):
        with pytest.raises(ValueError):
            update_stats(init_stats(1), [math.nan])

    def test_regularized_closed_form(self):
        rng = rng_substream(1)
        x = rng.standard_normal((40, 3))
        s = absorb(init_stats(3, "regularized"), x)
        d = x - x.mean(axis=0)
        assert np.allclose(s.cov, (d.T @ d + np.eye(3)) / 40, atol=1e-12)
        assert np.allclose(s.mean, x.mean(axis=0), atol=1e-12)

    def test_cholesky_tracks_covariance(self):
        rng = rng_substream(2)
        s = absorb(init_stats(4, "regularized"), rng.standard_normal((300, 4)) * [1, 2, 3, 0.1])
        assert np.allclose(s.chol @ s.chol.T, s.cov, atol=1e-12)
        assert np.allclose(np.tril(s.chol), s.chol)
        assert s.log_det == pytest.approx(math.log(np.linalg.det(s.cov)), rel=1e-10)

    def test_recovers_from_singular(self):
        s = absorb(init_stats(2), [[0.0, 0.0], [2.0, 0.0]])
        update_stats(s, [1.0, 3.0])
        assert not s.singular
        assert np.allclose(s.chol @ s.chol.T, s.cov, atol=1e-12)

    def test_cov_positive_semidefinite_and_symmetric(self):
        rng = rng_substream(3)
        s = absorb(init_stats(5), rng.standard_normal((3, 5)))
        assert np.allclose(s.cov, s.cov.T, atol=1e-12)
        assert np.linalg.eigvalsh(s.cov).min() > -1e-10


class TestRankOneProperties:
    @settings(max_examples=40, deadline=None)
    @given(p=st.integers(1, 5), n=st.integers(2, 300), seed=st.integers(0, 2**32 - 1),
           scale=st.floats(1e-3, 1e3))
    def test_recursion_equals_batch(self, p, n, seed, scale):
        x = rng_substream(seed).standard_normal((n, p)) * scale + 3.0
        s = absorb(init_stats(p), x)
        ref = batch_cov(x)
        assert np.max(np.abs(s.cov - ref)) <= 1e-10 * max(1.0, np.max(np.abs(ref)))
        assert np.allclose(s.mean, x.mean(axis=0), rtol=1e-12, atol=1e-12 * scale)

    @settings(max_examples=30, deadline=None)
    @given(L=hnp.arrays(float, (3, 3), elements=st.floats(-2, 2)), x=hnp.arrays(float, 3, elements=st.floats(-2, 2)))
    def test_chol_update(self, L, x):
        L = np.tril(L) + 3 * np.eye(3)
        new = chol_rank_one_update(L.copy(), x)
        assert np.allclose(new @ new.T, L @ L.T + np.outer(x, x), atol=1e-10)


class TestPredictiveAt:
    def test_rules(self):
        s = init_stats(1)
        d = predictive_at(s)
        assert d.loc[0] == 0.0 and d.scale_chol[0, 0] == 1.0
        update_stats(s, [5.0])
        d = predictive_at(s)
        assert d.loc[0] == 5.0 and d.scale_chol[0, 0] == 1.0
        update_stats(s, [0.0])
        update_stats(s, [10.0])
        d = predictive_at(absorb(init_stats(1), [0.0, 2.0, 1.0]))
        assert d.loc[0] == 1.0 and d.scale_chol[0, 0] == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
        assert d.has_density

    def test_singular_is_density_free(self):
        d = predictive_at(absorb(init_stats(2), [[0.0, 0.0], [2.0, 0.0]]))
        assert not d.has_density
        with pytest.raises(ValueError):
            d.logpdf([0.0, 0.0])

    def test_density_matches_normal(self):
        d = predictive_at(absorb(init_stats(1), [1.0, 3.0, 2.0, 6.0]))
        from scipy import stats

        assert d.pdf([2.5]) == pytest.approx(stats.norm(d.loc[0], d.scale_chol[0, 0]).pdf(2.5), rel=1e-12)


class TestSampleNext:
    def test_zero_scale_returns_mean(self):
        s = absorb(init_stats(1), [2.0, 2.0, 2.0])
        assert sample_next(s, GaussianKernel(), rng_substream(0))[0] == 2.0

    def test_prior_predictive_moments(self):
        rng = rng_substream(4)
        s = init_stats(1)
        x = np.array([sample_next(s, GaussianKernel(), rng)[0] for _ in range(20_000)])
        assert abs(x.mean()) < 3 / math.sqrt(x.size)

    def test_fixed_stats_moments(self):
        s = SufficientStats(5, np.array([1.0]), np.array([[4.0]]), "empirical", np.array([[2.0]]), math.log(4))
        x = predictive_at(s, GaussianKernel()).sample(rng_substream(5), 100_000)[:, 0]
        assert abs(x.mean() - 1) < 3 * 2 / math.sqrt(1e5)
        # Var(X^2)-based SE of the sample variance for a normal is sqrt(2) sigma^2 / sqrt(n)
        assert abs(x.var() - 4) < 3 * math.sqrt(2) * 4 / math.sqrt(1e5)


class TestDetStepFactor:
    def test_value(self):
        s = absorb(init_stats(2, "regularized"), [[0.0, 0.0], [1.0, 2.0]])
        assert s.n == 2
        assert det_step_factor(s, [1.0, 1.0]) == pytest.approx(20 / 27, abs=1e-15)
        assert det_step_factor(s, [0.0, 0.0]) == pytest.approx((2 / 3) ** 2, abs=1e-15)

    def test_matches_dense_determinant(self):
        rng = rng_substream(6)
        s = absorb(init_stats(3, "regularized"), rng.standard_normal((10, 3)))
        for _ in range(20):
            z = rng.standard_normal(3)
            old = np.linalg.det(s.cov)
            fac = det_step_factor(s, z)
            update_stats(s, s.mean + s.chol @ z)
            assert np.linalg.det(s.cov) == pytest.approx(old * fac, rel=1e-10)

    def test_singular_rejected(self):
        with pytest.raises(ValueError):
            det_step_factor(absorb(init_stats(2), [[0.0, 0.0], [2.0, 0.0]]), [0.1, 0.2])


class TestClosedFormMoments:
    def test_mean_single_term(self):
        E, V = posterior_mean_moments(2, 5.0, 1.0, 1)
        assert E == 5.0 and V == pytest.approx(1 / 9, abs=1e-15)

    def test_mean_empty_sum(self):
        assert posterior_mean_moments(10, 3.0, 2.0, 0) == (3.0, 0.0)

    def test_mean_large_matches_table_value(self):
        _, V = posterior_mean_moments(2000, 0.9, 19.2, 5000)
        assert V == pytest.approx(0.0068, abs=2e-4)

    def test_mean_strictly_increasing_in_N(self):
        v = [posterior_mean_moments(50, 0.0, 1.0, N)[1] for N in (0, 1, 10, 100, 1000)]
        assert all(a < b for a, b in zip(v, v[1:]))

    def test_mean_direct_sum(self):
        s, N, s2 = 7, 40, 1.7
        direct = s2 * s / (s + 1) * sum((s + i) / ((s + i - 1) * (s + i) ** 2) for i in range(1, N + 1))
        assert posterior_mean_moments(s, 0.0, s2, N)[1] == pytest.approx(direct, rel=1e-13)

    def test_variance_empty(self):
        E, V = posterior_variance_moments(12, 3.0, 0)
        assert E == pytest.approx(3.0, rel=1e-15) and V == 0.0

    def test_variance_single_step(self):
        E, _ = posterior_variance_moments(10, 2.0, 1)
        assert E == pytest.approx(240 / 121, rel=1e-14)

    def test_variance_product_is_exact_second_moment(self):
        # one forward step of the Gaussian predictive: compute E(Q^2) exactly and compare
        s, s2 = 10, 2.0
        k = s + 1
        a = (k - 1) / k
        # Q_{s+1} = a Q_s (1 + Z^2/k), E(1 + Z^2/k)^2 = 1 + 2/k + 3/k^2
        m2 = (a * s2) ** 2 * (1 + 2 / k + 3 / k**2)
        E, V = posterior_variance_moments(s, s2, 1)
        assert V == pytest.approx(m2 - E**2, rel=1e-12)

    def test_small_s_rejected(self):
        with pytest.raises(ValueError):
            posterior_mean_moments(1, 0.0, 1.0, 3)
        with pytest.raises(ValueError):
            posterior_variance_moments(1, 1.0, 3)


class TestSupermartingale:
    def test_q_contracts_in_expectation(self):
        rng = rng_substream(8)
        s = absorb(init_stats(2, "regularized"), rng.standard_normal((6, 2)))
        n = s.n
        z = rng_substream(8, 1).standard_normal((100_000, 2))
        dev = z @ s.chol.T
        Q1 = (n / (n + 1)) * s.cov + (n / (n + 1) ** 2) * dev[:, :, None] * dev[:, None, :]
        se = Q1.std(axis=0, ddof=1) / math.sqrt(z.shape[0])
        assert np.all(np.abs(Q1.mean(axis=0) - s.cov * (1 - 1 / (n + 1) ** 2)) < 3 * se)
        dM = dev / (n + 1)
        assert np.all(np.abs(dM.mean(axis=0)) < 3 * dM.std(axis=0, ddof=1) / math.sqrt(z.shape[0]))

    def test_z_scores_are_calibrated(self):
        # across independent innovation streams the covariance z-score behaves like N(0, 1)
        from predres.diagnostics import martingale_report

        hist = absorb(init_stats(2, "regularized"), rng_substream(8).standard_normal((6, 2)))
        zs = np.array([martingale_report(GaussianKernel(2), hist, 20_000, seed=k).cov_z[0, 0]
                       for k in range(100)])
        assert abs(zs.mean()) < 3 / math.sqrt(zs.size)
        assert 0.8 < zs.std() < 1.25

    def test_det_product_identity_path(self):
        for p in (1, 2, 3):
            rng = rng_substream(9, p)
            s = absorb(init_stats(p, "regularized"), rng.standard_normal((2, p)))
            det2 = np.linalg.det(s.cov)
            prod = 1.0
            for _ in range(498):
                z = rng.standard_normal(p)
                prod *= det_step_factor(s, z)
                update_stats(s, s.mean + s.chol @ z)
            assert np.linalg.det(s.cov) == pytest.approx(det2 * prod, rel=1e-8)
            assert s.log_det == pytest.approx(math.log(det2 * prod), abs=1e-8)


class TestFastPaths:
    def test_simulate_matches_loop(self):
        rng = rng_substream(10)
        z = rng.standard_normal((4, 50))
        x, M, Q = simulate_path_1d([0.5] * 4, [2.0] * 4, 3, z)
        for i in range(4):
            s = SufficientStats(3, np.array([0.5]), np.array([[2.0]]), "empirical", np.array([[math.sqrt(2)]]))
            for j in range(50):
                xx = s.mean[0] + math.sqrt(s.cov[0, 0]) * z[i, j]
                assert xx == pytest.approx(x[i, j], rel=1e-10, abs=1e-12)
                update_stats(s, [xx])
                assert s.cov[0, 0] == pytest.approx(Q[i, j], rel=1e-10)

    @pytest.mark.parametrize("mode", ["empirical", "regularized"])
    def test_forward_from_prior(self, mode):
        z = rng_substream(11).standard_normal((3, 30))
        x, M, Q = forward_1d(0, 0.0, 1.0, mode, z)
        for i in range(3):
            s = init_stats(1, mode)
            for j in range(30):
                d = predictive_at(s)
                xx = d.loc[0] + d.scale_chol[0, 0] * z[i, j]
                assert xx == pytest.approx(x[i, j], abs=1e-10)
                update_stats(s, [xx])

    def test_non_gaussian_innovations(self):
        z = StudentTKernel(4.0).sample(rng_substream(12), (2, 25))[..., 0]
        x, _, _ = forward_1d(5, 1.0, 0.5, "empirical", z)
        assert np.all(np.isfinite(x))

    @pytest.mark.parametrize("mode", ["empirical", "regularized"])
    def test_running_moments_match_update(self, mode):
        x = rng_substream(13).standard_normal((3, 40, 3))
        M, Q = running_moments(x, mode)
        for i in range(3):
            s = init_stats(3, mode)
            for k in range(40):
                update_stats(s, x[i, k])
                assert np.allclose(M[i, k], s.mean, rtol=1e-13, atol=1e-14)
                assert np.allclose(Q[i, k], s.cov, rtol=1e-12, atol=1e-14)

    def test_running_moments_shape_check(self):
        with pytest.raises(ValueError):
            running_moments(np.zeros((2, 0, 1)))


class TestSerialization:
    def test_json_round_trip(self):
        s = absorb(init_stats(3, "regularized"), rng_substream(13).standard_normal((7, 3)))
        t = SufficientStats.from_json(s.to_json())
        assert t.n == s.n and t.mode == s.mode
        assert np.array_equal(t.mean, s.mean) and np.array_equal(t.cov, s.cov)
        assert np.allclose(t.chol, s.chol, atol=1e-12)
        d = s.to_dict()
        assert set(d) == {"n", "mean", "cov", "mode"}
        assert len(d["cov"]) == 9
