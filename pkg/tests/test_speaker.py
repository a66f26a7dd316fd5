"""Tests for the UBM / total-variability / LDA speaker chain."""

import numpy as np
import pytest
from scipy.linalg import subspace_angles

from blindsep.speaker import (
    BaumWelchStats,
    GmmUbm,
    LdaProjection,
    TotalVariabilityModel,
    accumulate_stats,
    cosine_score,
    extract_ivector,
    identify,
    posterior_covariance,
    project_lda,
    train_lda,
    train_tv,
    train_ubm,
)


def make_ubm(rng, n_components=4, dim=3):
    means = rng.standard_normal((n_components, dim)) * 2.0
    variances = 0.5 + rng.random((n_components, dim))
    weights = np.full(n_components, 1.0 / n_components)
    return GmmUbm(weights=weights, means=means, variances=variances)


def synthetic_stats(rng, ubm, t0, n_utts, frames_per_comp=200.0, noisy=True):
    """Stats drawn from the generative supervector model m + T0 w."""
    dim = ubm.feat_dim
    stats, factors = [], []
    for _ in range(n_utts):
        w = rng.standard_normal(t0.shape[1])
        shift = (t0 @ w).reshape(ubm.n_components, dim)
        n = np.full(ubm.n_components, frames_per_comp)
        f = n[:, None] * shift
        if noisy:
            f = f + rng.standard_normal(f.shape) * np.sqrt(frames_per_comp * ubm.variances)
        stats.append(BaumWelchStats(n=n, f=f))
        factors.append(w)
    return stats, np.stack(factors)


class TestTrainUbm:
    def test_single_component_closed_form(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((500, 3)) * np.array([1.0, 2.0, 0.5]) + 1.0
        ubm = train_ubm([x], 1, iters=3)
        np.testing.assert_allclose(ubm.means[0], x.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(ubm.variances[0], x.var(axis=0), rtol=1e-10)
        assert ubm.weights[0] == 1.0

    def test_two_separated_gaussians_recovered(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((800, 2)) * 0.3 + np.array([3.0, 3.0])
        b = rng.standard_normal((800, 2)) * 0.3 + np.array([-3.0, -3.0])
        x = np.concatenate([a, b])
        rng.shuffle(x)
        ubm = train_ubm([x], 2, iters=20)
        got = ubm.means[np.argsort(ubm.means[:, 0])]
        np.testing.assert_allclose(got[0], [-3.0, -3.0], atol=0.1)
        np.testing.assert_allclose(got[1], [3.0, 3.0], atol=0.1)

    def test_log_likelihood_non_decreasing(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((600, 4))
        ubm = train_ubm([x], 8, iters=20)
        ll = ubm.ll_history
        assert len(ll) == 20
        for prev, cur in zip(ll, ll[1:]):
            assert cur >= prev - 1e-8 * abs(prev)

    def test_more_components_than_frames(self):
        with pytest.raises(ValueError, match="fewer frames"):
            train_ubm([np.ones((3, 2))], 8)

    def test_weights_simplex_and_variance_floor(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((400, 3))
        ubm = train_ubm([x], 4, iters=10)
        assert abs(ubm.weights.sum() - 1.0) <= 1e-12
        assert np.all(ubm.variances > 0)


class TestAccumulateStats:
    def test_single_component_exact(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((50, 3))
        ubm = GmmUbm(weights=np.ones(1), means=np.zeros((1, 3)), variances=np.ones((1, 3)))
        st = accumulate_stats(ubm, x)
        assert st.n[0] == pytest.approx(50.0, abs=1e-12)
        np.testing.assert_allclose(st.f[0], x.sum(axis=0), atol=1e-10)

    def test_responsibilities_concentrate(self):
        means = np.array([[0.0, 0.0], [10.0, 10.0]])
        ubm = GmmUbm(weights=np.array([0.5, 0.5]), means=means,
                     variances=np.full((2, 2), 0.01))
        x = np.tile(means[1], (20, 1))
        st = accumulate_stats(ubm, x)
        assert st.n[1] == pytest.approx(20.0, abs=1e-9)
        assert st.n[0] == pytest.approx(0.0, abs=1e-9)

    def test_empty_features_zero_stats(self):
        ubm = GmmUbm(weights=np.ones(1), means=np.zeros((1, 2)), variances=np.ones((1, 2)))
        st = accumulate_stats(ubm, np.zeros((0, 2)))
        assert np.all(st.n == 0)
        assert np.all(st.f == 0)


class TestTrainTv:
    def test_evidence_non_decreasing(self):
        rng = np.random.default_rng(5)
        ubm = make_ubm(rng)
        t0 = np.linalg.qr(rng.standard_normal((12, 2)))[0]
        stats, _ = synthetic_stats(rng, ubm, t0, 30)
        tv = train_tv(stats, ubm, rank=2, iters=15, seed=0)
        ll = tv.ll_history
        for prev, cur in zip(ll, ll[1:]):
            assert cur >= prev - 1e-8 * abs(prev)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_subspace_recovery(self, seed):
        rng = np.random.default_rng(100 + seed)
        ubm = make_ubm(rng)
        t0 = np.linalg.qr(rng.standard_normal((12, 2)))[0]
        stats, _ = synthetic_stats(rng, ubm, t0, 80)
        tv = train_tv(stats, ubm, rank=2, iters=20, seed=seed)
        angle = np.max(subspace_angles(tv.t_mat, t0))
        assert np.degrees(angle) < 5.0

    def test_scalar_ppca_closed_form(self):
        # K=1, d=1, rank=1: ML solution is T^2 = (mean(f^2) - N*sigma^2) / N^2
        rng = np.random.default_rng(6)
        sigma2, n_frames, t_true = 1.0, 100.0, 0.8
        ubm = GmmUbm(weights=np.ones(1), means=np.zeros((1, 1)),
                     variances=np.full((1, 1), sigma2))
        f_vals = rng.normal(0.0, np.sqrt(n_frames ** 2 * t_true ** 2 + n_frames * sigma2),
                            size=2000)
        stats = [BaumWelchStats(n=np.array([n_frames]), f=np.array([[f]]))
                 for f in f_vals]
        tv = train_tv(stats, ubm, rank=1, iters=1000, seed=0)
        closed = np.sqrt((np.mean(f_vals ** 2) - n_frames * sigma2) / n_frames ** 2)
        assert abs(tv.t_mat[0, 0]) == pytest.approx(closed, rel=1e-10)

    def test_too_few_utterances(self):
        rng = np.random.default_rng(7)
        ubm = make_ubm(rng)
        with pytest.raises(ValueError, match="rank"):
            train_tv([], ubm, rank=2)


class TestExtractIvector:
    def test_zero_stats_zero_ivector(self):
        rng = np.random.default_rng(8)
        ubm = make_ubm(rng)
        tv = TotalVariabilityModel(m=ubm.means.ravel(), t_mat=rng.standard_normal((12, 3)),
                                   sigma=ubm.variances.ravel(), n_components=4, feat_dim=3)
        st = BaumWelchStats(n=np.zeros(4), f=np.zeros((4, 3)))
        np.testing.assert_array_equal(extract_ivector(tv, st), np.zeros(3))

    def test_noiseless_large_n_recovers_factor(self):
        rng = np.random.default_rng(9)
        ubm = make_ubm(rng)
        t0 = np.linalg.qr(rng.standard_normal((12, 2)))[0]
        tv = TotalVariabilityModel(m=ubm.means.ravel(), t_mat=t0,
                                   sigma=ubm.variances.ravel(), n_components=4, feat_dim=3)
        w0 = np.array([1.3, -0.4])
        big_n = 1e6
        shift = (t0 @ w0).reshape(4, 3)
        st = BaumWelchStats(n=np.full(4, big_n), f=big_n * shift)
        w = extract_ivector(tv, st)
        assert np.max(np.abs(w - w0)) < 1e-3

    def test_matches_naive_dense_oracle(self):
        # K=2, d=2, rank=2: loops + dense inverse, no shared code path
        rng = np.random.default_rng(10)
        t_mat = rng.standard_normal((4, 2))
        sigma = 0.5 + rng.random(4)
        tv = TotalVariabilityModel(m=np.zeros(4), t_mat=t_mat, sigma=sigma,
                                   n_components=2, feat_dim=2)
        st = BaumWelchStats(n=rng.random(2) * 10, f=rng.standard_normal((2, 2)))

        l_naive = np.eye(2)
        for i in range(4):
            n_i = st.n[i // 2]
            for a in range(2):
                for b in range(2):
                    l_naive[a, b] += t_mat[i, a] * n_i * t_mat[i, b] / sigma[i]
        rhs = np.zeros(2)
        fsv = st.f.ravel()
        for i in range(4):
            for a in range(2):
                rhs[a] += t_mat[i, a] * fsv[i] / sigma[i]
        expected = np.linalg.inv(l_naive) @ rhs
        np.testing.assert_allclose(extract_ivector(tv, st), expected, rtol=1e-10)

    def test_linear_in_first_order_stats(self):
        rng = np.random.default_rng(11)
        ubm = make_ubm(rng)
        tv = TotalVariabilityModel(m=ubm.means.ravel(),
                                   t_mat=rng.standard_normal((12, 3)),
                                   sigma=ubm.variances.ravel(), n_components=4, feat_dim=3)
        st = BaumWelchStats(n=rng.random(4) * 50, f=rng.standard_normal((4, 3)))
        scaled = BaumWelchStats(n=st.n, f=2.5 * st.f)
        np.testing.assert_allclose(extract_ivector(tv, scaled),
                                   2.5 * extract_ivector(tv, st), rtol=1e-12)

    def test_posterior_covariance_spd(self):
        rng = np.random.default_rng(12)
        ubm = make_ubm(rng)
        tv = TotalVariabilityModel(m=ubm.means.ravel(),
                                   t_mat=rng.standard_normal((12, 3)),
                                   sigma=ubm.variances.ravel(), n_components=4, feat_dim=3)
        for _ in range(5):
            st = BaumWelchStats(n=rng.random(4) * 100, f=rng.standard_normal((4, 3)))
            cov = posterior_covariance(tv, st)
            np.testing.assert_allclose(cov, cov.T, atol=1e-12)
            assert np.all(np.linalg.eigvalsh(cov) > 0)


class TestLda:
    def test_point_mass_classes(self):
        a = np.array([1.0, 0.0])
        b = np.array([-1.0, 0.0])
        ivecs = [(a, "s0"), (a, "s0"), (b, "s1"), (b, "s1")]
        proj = train_lda(ivecs, 1)
        direction = proj.a[:, 0] / np.linalg.norm(proj.a[:, 0])
        assert abs(direction @ np.array([1.0, 0.0])) == pytest.approx(1.0, abs=1e-8)
        assert proj.eigenvalues[0] > 1e6  # unbounded ratio, finite via shrinkage

    def test_generalized_eigen_residual(self):
        rng = np.random.default_rng(13)
        ivecs = []
        for c in range(3):
            center = rng.standard_normal(5) * 3.0
            for _ in range(10):
                ivecs.append((center + 0.5 * rng.standard_normal(5), f"s{c}"))
        proj = train_lda(ivecs, 2)
        lam = np.diag(proj.eigenvalues)
        resid = np.linalg.norm(proj.s_b @ proj.a - proj.s_w @ proj.a @ lam)
        assert resid / np.linalg.norm(proj.s_b @ proj.a) < 1e-8

    def test_top_eigenvalue_dominates_random_directions(self):
        rng = np.random.default_rng(14)
        ivecs = []
        for c in range(3):
            center = rng.standard_normal(5) * 3.0
            for _ in range(12):
                ivecs.append((center + 0.4 * rng.standard_normal(5), f"s{c}"))
        proj = train_lda(ivecs, 2)
        for _ in range(1000):
            d = rng.standard_normal(5)
            ratio = (d @ proj.s_b @ d) / (d @ proj.s_w @ d)
            assert proj.eigenvalues[0] >= ratio - 1e-9

    def test_projection_matches_naive(self):
        rng = np.random.default_rng(15)
        a = rng.standard_normal((6, 2))
        proj = LdaProjection(a=a, eigenvalues=np.array([2.0, 1.0]))
        w = rng.standard_normal(6)
        expected = np.array([sum(a[i, j] * w[i] for i in range(6)) for j in range(2)])
        np.testing.assert_allclose(project_lda(proj, w), expected, atol=1e-12)

    def test_identity_block_projection(self):
        proj = LdaProjection(a=np.eye(4)[:, :2], eigenvalues=np.ones(2))
        w = np.array([1.0, 2.0, 3.0, 4.0])
        np.testing.assert_array_equal(project_lda(proj, w), [1.0, 2.0])
        np.testing.assert_array_equal(project_lda(proj, np.zeros(4)), np.zeros(2))

    def test_lda_dim_bound(self):
        ivecs = [(np.ones(3), "a"), (np.ones(3), "a"),
                 (np.zeros(3), "b"), (np.zeros(3), "b")]
        with pytest.raises(ValueError, match="lda_dim"):
            train_lda(ivecs, 2)


class TestScoring:
    def test_cosine_basics(self):
        a = np.array([1.0, 2.0, 3.0])
        assert cosine_score(a, a) == pytest.approx(1.0)
        assert cosine_score(a, -a) == pytest.approx(-1.0)
        assert cosine_score(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0
        with pytest.raises(ValueError, match="zero vector"):
            cosine_score(a, np.zeros(3))

    def test_identify_exact_and_orthogonal(self):
        models = [("s0", np.array([1.0, 0.0, 0.0])),
                  ("s1", np.array([0.0, 1.0, 0.0])),
                  ("s2", np.array([0.0, 0.0, 1.0]))]
        assert identify(models, np.array([0.0, 1.0, 0.0])) == "s1"
        assert identify(models, np.array([0.1, 0.05, 0.9])) == "s2"
        with pytest.raises(ValueError, match="empty"):
            identify([], np.ones(3))

    def test_identify_scale_invariant(self):
        rng = np.random.default_rng(16)
        models = [(f"s{i}", rng.standard_normal(4)) for i in range(5)]
        probe = rng.standard_normal(4)
        assert identify(models, probe) == identify(models, 7.3 * probe)
