import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nerdlab.diffusion import make_schedule
from nerdlab.envsim import DecoderSpec
from nerdlab.errors import InvalidArgumentError
from nerdlab.policy import (
    PolicyParams,
    ProbeConfig,
    backward_logprob,
    backward_reward_deterministic,
    backprop,
    grad_check,
    init_params,
    policy_forward,
    policy_logprob,
    softplus,
    softplus_inverse,
)
from nerdlab.rng import RngStream

from oracles import central_diff, naive_logpdf_sum, naive_policy_forward, rel_err


def _params(V, H, seed=0, scale=0.4):
    p = init_params(RngStream(seed), V, H)
    gen = np.random.default_rng(seed)
    return p.with_flat(p.flatten() + scale * gen.normal(size=p.flatten().size))


class TestSoftplus:
    def test_values(self):
        assert softplus(0.0) == pytest.approx(math.log(2))
        assert softplus(800.0) == 800.0
        assert softplus(-800.0) == 0.0

    @given(st.floats(1e-6, 50))
    def test_inverse(self, y):
        assert softplus(softplus_inverse(y)) == pytest.approx(y, rel=1e-9)


class TestInit:
    def test_same_seed(self):
        a, b = init_params(RngStream(4), 5, 7), init_params(RngStream(4), 5, 7)
        assert a.equals(b)

    def test_shapes(self):
        p = init_params(RngStream(0), 5, 7)
        assert p.w1.shape == (7, 6) and p.w2.shape == (10, 7)
        assert p.V == 5 and p.H == 7

    def test_initial_sigma_near_one(self):
        p = init_params(RngStream(0), 10, 32)
        out = policy_forward(p, np.zeros(10), 5, 10)
        assert np.all((out.sigma >= 0.5) & (out.sigma <= 2.0))

    def test_weight_mean_zero(self):
        p = init_params(RngStream(1), 200, 250)
        w = np.concatenate([p.w1.ravel(), p.w2.ravel()])
        assert w.size >= 100_000
        assert abs(w.mean()) < 3 * w.std() / math.sqrt(w.size)

    def test_bad_shapes(self):
        with pytest.raises(InvalidArgumentError):
            PolicyParams(np.zeros((3, 4)), np.zeros(3), np.zeros((5, 3)), np.zeros(6))
        with pytest.raises(InvalidArgumentError):
            init_params(RngStream(0), 0, 3)


class TestForward:
    def test_zero_params(self):
        p = PolicyParams(np.zeros((4, 4)), np.zeros(4), np.zeros((6, 4)), np.zeros(6), sigma_min=1e-3)
        out = policy_forward(p, np.ones(3), 2, 4)
        np.testing.assert_array_equal(out.mu, 0)
        np.testing.assert_allclose(out.sigma, math.log(2) + 1e-3)
        assert out.mu.shape == out.sigma.shape == (3,)

    def test_naive_oracle(self):
        p = _params(3, 5, seed=2)
        x = np.array([0.3, -1.2, 2.0])
        out = policy_forward(p, x, 3, 7)
        mu, sigma = naive_policy_forward(p.w1.tolist(), p.b1, p.w2.tolist(), p.b2, p.sigma_min, x, 3, 7)
        np.testing.assert_allclose(out.mu, mu, atol=1e-12)
        np.testing.assert_allclose(out.sigma, sigma, atol=1e-12)

    def test_batch_matches_rows(self):
        p = _params(4, 6)
        X = np.random.default_rng(0).normal(size=(5, 4))
        t = np.array([1, 2, 3, 4, 5])
        out = policy_forward(p, X, t, 5)
        for i in range(5):
            row = policy_forward(p, X[i], t[i], 5)
            np.testing.assert_allclose(out.mu[i], row.mu, atol=1e-14)

    def test_timestep_range(self):
        p = _params(2, 3)
        with pytest.raises(InvalidArgumentError):
            policy_forward(p, np.zeros(2), 0, 5)
        with pytest.raises(InvalidArgumentError):
            policy_forward(p, np.zeros(2), 6, 5)

    def test_sigma_floor_over_random_inputs(self):
        p = _params(6, 8, scale=3.0)
        p.b2[6:] -= 40
        X = np.random.default_rng(1).normal(size=(10_000, 6)) * 10
        out = policy_forward(p, X, 3, 5)
        assert np.all(out.sigma >= p.sigma_min)
        assert np.all(np.isfinite(out.mu))


class TestLogprob:
    def test_at_mean(self):
        p = _params(4, 5)
        out = policy_forward(p, np.zeros(4), 1, 3)
        expected = float(np.sum(-0.5 * math.log(2 * math.pi) - np.log(out.sigma)))
        assert policy_logprob(out, out.mu) == pytest.approx(expected, abs=1e-12)

    def test_doubling_sigma(self):
        p = _params(4, 5)
        out = policy_forward(p, np.zeros(4), 1, 3)
        a = policy_logprob(out, out.mu)
        out.sigma = out.sigma * 2
        assert a - policy_logprob(out, out.mu) == pytest.approx(4 * math.log(2), abs=1e-12)

    def test_oracle(self):
        p = _params(5, 6)
        out = policy_forward(p, np.ones(5), 2, 4)
        a = np.random.default_rng(0).normal(size=5)
        assert policy_logprob(out, a) == pytest.approx(naive_logpdf_sum(a, out.mu, out.sigma), abs=1e-10)

    def test_shape_mismatch(self):
        p = _params(3, 4)
        out = policy_forward(p, np.zeros(3), 1, 2)
        with pytest.raises(InvalidArgumentError):
            policy_logprob(out, np.zeros(4))


class TestBackwardLogprob:
    def test_mu_path_vanishes_at_mean(self):
        p = init_params(RngStream(0), 4, 6)
        x = np.random.default_rng(0).normal(size=4)
        out = policy_forward(p, x, 2, 4)
        g = backward_logprob(p, x, 2, 4, out.mu)
        np.testing.assert_allclose(g.w2[:4], 0, atol=1e-14)
        np.testing.assert_allclose(g.b2[:4], 0, atol=1e-14)
        assert np.abs(g.b2[4:]).max() > 0

    def test_finite_difference(self):
        p = _params(6, 8, seed=5)
        gen = np.random.default_rng(5)
        x, a = gen.normal(size=6), gen.normal(size=6)

        def f(theta):
            return policy_logprob(policy_forward(p.with_flat(theta), x, 3, 5), a)

        num = central_diff(f, p.flatten(), 1e-5)
        ana = backward_logprob(p, x, 3, 5, a).flatten()
        assert rel_err(ana, num, 1e-6) < 1e-4
        # per block as well
        g = backward_logprob(p, x, 3, 5, a)
        pos = 0
        for block in g.blocks():
            assert rel_err(block.ravel(), num[pos:pos + block.size], 1e-6) < 1e-4
            pos += block.size

    def test_sign_flip(self):
        p = _params(4, 5, seed=1)
        x = np.zeros(4)
        out = policy_forward(p, x, 1, 2)
        r = np.array([0.3, -0.2, 0.5, 1.0])
        g1 = backward_logprob(p, x, 1, 2, out.mu + r)
        g2 = backward_logprob(p, x, 1, 2, out.mu - r)
        np.testing.assert_allclose(g1.w2[:4], -g2.w2[:4], atol=1e-12)
        np.testing.assert_allclose(g1.b2[:4], -g2.b2[:4], atol=1e-12)

    def test_weights_scale_rows(self):
        p = _params(3, 4)
        gen = np.random.default_rng(2)
        X, A = gen.normal(size=(2, 3)), gen.normal(size=(2, 3))
        w = np.array([2.0, -0.5])
        g = backward_logprob(p, X, 1, 3, A, weights=w)
        g0 = backward_logprob(p, X[0], 1, 3, A[0])
        g1 = backward_logprob(p, X[1], 1, 3, A[1])
        np.testing.assert_allclose(g.flatten(), 2.0 * g0.flatten() - 0.5 * g1.flatten(), atol=1e-12)


class TestBackwardReward:
    def test_zero_decoder(self):
        p = _params(4, 5)
        dec = DecoderSpec(np.zeros(4), 0.7)
        g, r = backward_reward_deterministic(p, np.ones(4), make_schedule("linear", 3), dec)
        assert r == pytest.approx(0.7)
        assert g.norm() == 0.0

    @pytest.mark.parametrize("T,V,H,tol", [(1, 4, 6, 1e-4), (3, 4, 6, 1e-3)])
    def test_finite_difference(self, T, V, H, tol):
        p = _params(V, H, seed=T)
        gen = np.random.default_rng(T)
        x = gen.normal(size=(2, V))
        dec = DecoderSpec(gen.normal(size=V), 0.1)
        s = make_schedule("linear", T)

        def f(theta):
            return -backward_reward_deterministic(p.with_flat(theta), x, s, dec)[1]

        g, _ = backward_reward_deterministic(p, x, s, dec)
        assert rel_err(g.flatten(), central_diff(f, p.flatten()), 1e-6) < tol

    def test_t1_closed_form(self):
        # T = 1: grad of -W.mu(x) equals backprop of -W through one forward pass
        p = _params(3, 4)
        x = np.array([0.5, -1.0, 0.2])
        dec = DecoderSpec(np.array([1.0, 2.0, -1.0]))
        g, _ = backward_reward_deterministic(p, x, make_schedule("linear", 1), dec)
        out = policy_forward(p, x, 1, 1)
        ref, _ = backprop(p, out, -dec.weights, np.zeros(3))
        np.testing.assert_allclose(g.flatten(), ref.flatten(), atol=1e-14)

    def test_two_step_chain_rule(self):
        # T = 2 gradient equals the composition of per-step Jacobians built by finite differences
        p = _params(3, 4, seed=9)
        x = np.array([0.1, 0.4, -0.3])
        dec = DecoderSpec(np.array([0.5, -1.0, 2.0]))
        s = make_schedule("linear", 2)
        g, _ = backward_reward_deterministic(p, x, s, dec)
        o2 = policy_forward(p, x, 2, 2)
        x1 = o2.mu

        def mu_of_x(z, t):
            return policy_forward(p, z, t, 2).mu

        J_x = np.column_stack([central_diff(lambda z, i=i: mu_of_x(z, 1)[i], x1) for i in range(3)]).T
        w_at_x1 = -dec.weights
        g_step1, _ = backprop(p, policy_forward(p, x1, 1, 2), w_at_x1, np.zeros(3))
        g_step2, _ = backprop(p, o2, w_at_x1 @ J_x, np.zeros(3))
        np.testing.assert_allclose(g.flatten(), (g_step1 + g_step2).flatten(), rtol=1e-6, atol=1e-9)

    def test_squashed_reward_in_unit_interval(self):
        p = _params(4, 5)
        dec = DecoderSpec(np.ones(4), 2.0)
        _, r = backward_reward_deterministic(p, np.ones((3, 4)), make_schedule("linear", 2), dec, squash_scale=1.5)
        assert 0 < r < 1


class TestGradCheck:
    def test_zero_probe(self):
        assert grad_check(init_params(RngStream(0), 4, 6), ProbeConfig(mode="zero", n_probes=2)) < 1e-6

    def test_random_probe(self):
        assert grad_check(init_params(RngStream(0), 4, 6), ProbeConfig(n_probes=3)) < 1e-4

    def test_saturated_probe(self):
        assert grad_check(init_params(RngStream(0), 4, 6), ProbeConfig(mode="saturated", n_probes=2)) <= 1e-2

    @settings(max_examples=15, deadline=None)
    @given(st.integers(1, 5), st.integers(1, 6), st.integers(0, 2**31))
    def test_random_sizes(self, V, H, seed):
        assert grad_check(init_params(RngStream(seed), V, H), ProbeConfig(n_probes=1, T=2, seed=seed)) < 1e-4
