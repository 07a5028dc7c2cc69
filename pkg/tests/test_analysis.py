import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nerdlab.analysis import (
    REWARD_TERM,
    NoiseTrajectorySet,
    Rdm,
    SubjectTrajectory,
    align_signs,
    cluster_design,
    cluster_subjects,
    cluster_voxels,
    correlation_rdm,
    extract_noise_trajectories,
    fit_reward_model,
    fit_reward_model_with_clusters,
    mds_embed,
    merge_singleton_clusters,
    normalize_rows,
    reward_trajectory,
    smooth,
    stepwise_rdm,
    steps_to_fraction,
    subject_trajectory_rdm,
    trialpair_rdm,
    two_stage_pca,
)
from nerdlab.diffusion import make_schedule
from nerdlab.errors import InvalidArgumentError
from nerdlab.policy import init_params
from nerdlab.rng import RngStream

from oracles import naive_pearson, normal_equation_ols


def _trajset(V=6, T=10, seed=0):
    gen = np.random.default_rng(seed)
    return NoiseTrajectorySet("s01", "nerd", gen.normal(size=(V, T)), gen.uniform(0.1, 1.0, size=(V, T)))


class TestCurves:
    def test_steps_to_fraction(self):
        assert steps_to_fraction([0.0, 0.5, 0.95, 1.0]) == 3
        assert steps_to_fraction([0.0, 1.0, 1.0]) == 2
        assert steps_to_fraction([2.0, 1.0]) == 1
        assert steps_to_fraction([1.0, 1.0, 1.0]) == 1
        assert steps_to_fraction([0.5, 0.5, 1.0], start=0.0) == 3

    def test_steps_to_fraction_rejects_empty(self):
        with pytest.raises(InvalidArgumentError):
            steps_to_fraction([])

    def test_smooth(self):
        np.testing.assert_allclose(smooth([1, 2, 3, 4], 2), [1, 1.5, 2.5, 3.5])
        np.testing.assert_allclose(smooth([4.0, 5.0], 1), [4.0, 5.0])

    def test_reward_trajectory_shape(self, small_subject, rng):
        p = init_params(RngStream(0), small_subject.V, 6)
        mean, sd = reward_trajectory(p, small_subject, make_schedule("linear", 5), 7, rng)
        assert mean.shape == sd.shape == (5,)
        assert np.all(sd >= 0)


class TestRdm:
    def test_oracle(self):
        X = np.random.default_rng(0).normal(size=(5, 8))
        r = correlation_rdm(X)
        for i in range(5):
            for j in range(5):
                expected = 0.0 if i == j else 1 - naive_pearson(X[i], X[j])
                assert r.dist[i, j] == pytest.approx(expected, abs=1e-12)

    def test_constant_row_flagged(self):
        X = np.array([[1.0, 1.0, 1.0], [1.0, 2.0, 3.0], [3.0, 1.0, 2.0]])
        r = correlation_rdm(X)
        assert r.degenerate_pairs == [(0, 1), (0, 2)]
        assert r.dist[0, 1] == 1.0

    @settings(max_examples=30)
    @given(st.integers(2, 7), st.integers(3, 9), st.integers(0, 2**32 - 1))
    def test_valid(self, n, V, seed):
        X = np.random.default_rng(seed).normal(size=(n, V))
        D = correlation_rdm(X).dist
        assert np.all(D >= 0) and np.all(D <= 2 + 1e-12)
        np.testing.assert_array_equal(D, D.T)
        np.testing.assert_array_equal(np.diag(D), 0)

    def test_stepwise_and_trialpair(self):
        X = np.random.default_rng(1).normal(size=(4, 5))
        assert stepwise_rdm(X).labels == ["step0", "step1", "step2", "step3"]
        np.testing.assert_array_equal(trialpair_rdm(X).dist, correlation_rdm(X).dist)
        with pytest.raises(InvalidArgumentError):
            trialpair_rdm(X[:1])

    def test_rdm_validation(self):
        with pytest.raises(InvalidArgumentError):
            Rdm([0, 1], np.array([[0.0, 1.0], [2.0, 0.0]]))
        with pytest.raises(InvalidArgumentError):
            Rdm([0, 1], np.array([[1.0, 1.0], [1.0, 0.0]]))

    def test_mds_embed(self):
        X = np.random.default_rng(2).normal(size=(6, 10))
        Y = mds_embed(X, 2)
        assert Y.shape == (6, 2)
        with pytest.raises(InvalidArgumentError):
            mds_embed(X[:2])


class TestNoise:
    def test_normalize_rows(self):
        M = np.array([[1.0, 3.0, 2.0], [5.0, 5.0, 5.0]])
        np.testing.assert_allclose(normalize_rows(M), [[0, 1, 0.5], [0, 0, 0]])

    @settings(max_examples=30)
    @given(st.integers(0, 2**32 - 1))
    def test_normalized_range(self, seed):
        ts = _trajset(seed=seed)
        for M in (ts.mu_star, ts.sigma_star):
            assert M.min() >= 0 and M.max() <= 1
            np.testing.assert_allclose(M.max(axis=1), 1)

    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            NoiseTrajectorySet("s", "nerd", np.zeros((2, 3)), np.zeros((2, 3)))
        with pytest.raises(InvalidArgumentError):
            NoiseTrajectorySet("s", "nerd", np.zeros((2, 3)), np.ones((3, 2)))

    def test_extract(self, small_subject, rng):
        p = init_params(RngStream(0), small_subject.V, 6)
        ts = extract_noise_trajectories(p, small_subject, make_schedule("linear", 5), 4, rng, "nerd")
        assert ts.mu.shape == (small_subject.V, 5)
        assert np.all(ts.sigma >= p.sigma_min)
        assert ts.voxel_features().shape == (small_subject.V, 10)

    def test_cluster_voxels(self):
        mu = np.vstack([np.tile(np.linspace(0, 1, 8), (3, 1)), np.tile(np.linspace(1, 0, 8), (3, 1))])
        ts = NoiseTrajectorySet("s", "nerd", mu, np.ones_like(mu))
        labels = cluster_voxels(ts, 2, RngStream(0))
        assert len(set(labels[:3])) == 1 and len(set(labels[3:])) == 1 and labels[0] != labels[3]
        with pytest.raises(InvalidArgumentError):
            cluster_voxels(ts, 7, RngStream(0))


class TestTwoStagePca:
    def test_planted_rank_one(self):
        t = np.linspace(0, 1, 12)
        gen = np.random.default_rng(3)
        amp = gen.uniform(0.5, 2.0, size=8)
        mu = amp[:, None] * np.sin(3 * t)[None]
        sigma = 3.0 + amp[:, None] * np.cos(3 * t)[None]
        traj = two_stage_pca(NoiseTrajectorySet("s", "nerd", mu, sigma))
        assert traj.explained_variance_ratio[0] > 0.99
        assert traj.pc_path.shape == (12, 3)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.booleans())
    def test_ratio_contract(self, seed, normalized):
        traj = two_stage_pca(_trajset(seed=seed), normalized=normalized)
        r = traj.explained_variance_ratio
        assert np.all(np.diff(r) <= 1e-12)
        assert r.sum() <= 1 + 1e-12
        assert np.all((traj.stage1_ratio >= 0.5 - 1e-12) & (traj.stage1_ratio <= 1 + 1e-12))

    def test_too_small(self):
        with pytest.raises(InvalidArgumentError):
            two_stage_pca(_trajset(V=1))

    def test_align_signs(self):
        base = two_stage_pca(_trajset(seed=4))
        flipped = base.flipped(np.array([-1.0, 1.0, 1.0]))
        out = align_signs([base, base, flipped])
        np.testing.assert_allclose(out[2].pc_path, base.pc_path)

    def test_trajectory_rdm_metric(self):
        gen = np.random.default_rng(5)
        trajs = [SubjectTrajectory(f"s{i}", "nerd", gen.normal(size=(6, 3)), np.array([0.6, 0.3, 0.1]))
                 for i in range(5)]
        D = subject_trajectory_rdm(trajs).dist
        for i in range(5):
            for j in range(5):
                assert D[i, j] == pytest.approx(np.linalg.norm(trajs[i].pc_path - trajs[j].pc_path))
                for k in range(5):
                    assert D[i, j] <= D[i, k] + D[k, j] + 1e-12
        labels = cluster_subjects(subject_trajectory_rdm(trajs), k=9)
        assert sorted(labels) == list(range(5))

    def test_trajectory_rejects_increasing_ratios(self):
        with pytest.raises(InvalidArgumentError):
            SubjectTrajectory("s", "nerd", np.zeros((3, 2)), np.array([0.2, 0.5]))


class TestRegression:
    def test_simple_matches_normal_equations(self):
        gen = np.random.default_rng(6)
        x = gen.normal(size=12)
        y = 0.5 + 2.0 * x + gen.normal(size=12) * 0.3
        fit = fit_reward_model(y, x)
        beta = normal_equation_ols(np.column_stack([np.ones(12), x]), y)
        np.testing.assert_allclose(fit.coefficients, beta, atol=1e-10)
        assert fit.design_column_names == ["Intercept", REWARD_TERM]

    def test_needs_three(self):
        with pytest.raises(InvalidArgumentError):
            fit_reward_model([1.0, 2.0], [1.0, 3.0])

    def test_cluster_design_fixture(self):
        X, names = cluster_design([1.0, 2.0, 3.0, 4.0], [1, 2, 1, 2])
        assert names == ["Intercept", "Cluster2", REWARD_TERM, f"Cluster2:{REWARD_TERM}"]
        np.testing.assert_array_equal(X, [[1, 0, 1, 0], [1, 1, 2, 2], [1, 0, 3, 0], [1, 1, 4, 4]])

    def test_merge_singletons(self):
        labels, merges = merge_singleton_clusters([0, 0, 1, 2, 2], [1.0, 1.2, 5.0, 4.8, 5.1])
        assert merges == [(1, 2)]
        np.testing.assert_array_equal(labels, [1, 1, 2, 2, 2])

    @pytest.mark.parametrize("seed", range(10))
    def test_nested_r2(self, seed):
        gen = np.random.default_rng(seed)
        x = gen.normal(size=14)
        y = x + gen.normal(size=14)
        clusters = gen.integers(0, 3, size=14)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            full = fit_reward_model_with_clusters(y, x, clusters)
        assert full.r_squared >= fit_reward_model(y, x).r_squared - 1e-12
