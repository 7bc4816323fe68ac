"""Fixed-order binary NADE: density, gradients, sampling, normalization, and
the mean-field correspondence."""

import numpy as np
import pytest

from conftest import finite_difference, max_relative_error, random_nade_params
from nadekit import nade
from nadekit.util import ContractError, DomainError, ShapeError, sigmoid

LN2 = np.log(2.0)


def zero_params(D, H):
    return nade.NadeParams(W=np.zeros((H, D)), V=np.zeros((D, H)), b=np.zeros(D), c=np.zeros(H))


def naive_log_prob(params, o, x):
    """O(HD^2) reference: recompute the pre-activation from scratch at every
    step instead of using the incremental update."""
    D = params.D
    logp = 0.0
    p_all = np.empty(D)
    a_all = np.empty((D, params.H))
    for d in range(D):
        prefix = o[:d]
        a = params.c + params.W[:, prefix] @ x[prefix]
        h = sigmoid(a)
        p = sigmoid(float(params.V[o[d]] @ h) + params.b[o[d]])
        a_all[d] = a
        p_all[d] = p
        logp += x[o[d]] * np.log(p) + (1 - x[o[d]]) * np.log(1 - p)
    return logp, p_all, a_all


class TestLogProb:
    def test_zero_params_gives_fair_coins(self):
        params = zero_params(4, 3)
        o = np.arange(4)
        for x in (np.zeros(4), np.ones(4), np.array([1.0, 0.0, 1.0, 0.0])):
            trace = nade.log_prob(params, o, x)
            np.testing.assert_allclose(trace.p, 0.5)
            assert abs(trace.logp - (-4 * LN2)) < 1e-12

    def test_saturated_output_bias(self):
        params = zero_params(4, 3)
        o = np.array([2, 0, 1, 3])
        params.b[o[0]] = 30.0
        x = np.zeros(4)
        x[o[0]] = 1.0
        trace = nade.log_prob(params, o, x)
        assert trace.p[0] > 1 - 1e-12
        # first dim contributes ~0 nats (bounded by the probability clamp)
        assert abs(trace.logp - 3 * (-LN2)) < 1e-11

    def test_matches_naive_recurrence(self):
        rng = np.random.default_rng(42)
        params = random_nade_params(8, 5, rng)
        o = rng.permutation(8)
        x = rng.integers(0, 2, 8).astype(np.float64)
        trace = nade.log_prob(params, o, x)
        ref_logp, ref_p, ref_a = naive_log_prob(params, o, x)
        assert abs(trace.logp - ref_logp) < 1e-12
        np.testing.assert_allclose(trace.p, ref_p, atol=1e-14)
        # incremental pre-activations equal the from-scratch ones at every d
        np.testing.assert_allclose(trace.a, ref_a, atol=1e-12)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(7)
        params = random_nade_params(6, 4, rng)
        o = rng.permutation(6)
        X = rng.integers(0, 2, (11, 6)).astype(np.float64)
        logps, P = nade.log_prob_batch(params, o, X)
        for i in range(len(X)):
            trace = nade.log_prob(params, o, X[i])
            assert abs(logps[i] - trace.logp) < 1e-12
            np.testing.assert_allclose(P[i], trace.p, atol=1e-14)

    def test_errors(self):
        params = zero_params(4, 3)
        o = np.arange(4)
        with pytest.raises(ShapeError):
            nade.log_prob(params, o, np.zeros(5))
        with pytest.raises(DomainError):
            nade.log_prob(params, o, np.array([0.0, 1.0, 2.0, 0.0]))
        with pytest.raises(ShapeError):
            nade.log_prob(params, np.array([0, 1, 2, 2]), np.zeros(4))


class TestGradNll:
    def test_output_error_term(self):
        params = zero_params(5, 3)
        grad, _ = nade.grad_nll(params, np.arange(5), np.ones(5))
        np.testing.assert_allclose(grad.db, -0.5)

    def test_complement_symmetry(self):
        params = zero_params(5, 3)
        o = np.arange(5)
        x = np.array([1.0, 0.0, 1.0, 1.0, 0.0])
        g1, _ = nade.grad_nll(params, o, x)
        g2, _ = nade.grad_nll(params, o, 1.0 - x)
        np.testing.assert_allclose(g1.db, -g2.db, atol=1e-15)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        params = random_nade_params(6, 4, rng)
        o = rng.permutation(6)
        x = rng.integers(0, 2, 6).astype(np.float64)
        grad, _ = nade.grad_nll(params, o, x)
        fd = finite_difference(lambda: -nade.log_prob(params, o, x).logp, params.blocks())
        assert max_relative_error(grad.blocks(), fd) < 1e-4

    def test_batch_gradient_is_mean(self):
        rng = np.random.default_rng(5)
        params = random_nade_params(5, 3, rng)
        o = rng.permutation(5)
        X = rng.integers(0, 2, (7, 5)).astype(np.float64)
        gb, nll = nade.grad_nll_batch(params, o, X)
        singles = [nade.grad_nll(params, o, x)[0] for x in X]
        for key in gb.blocks():
            stacked = np.mean([g.blocks()[key] for g in singles], axis=0)
            np.testing.assert_allclose(gb.blocks()[key], stacked, atol=1e-12)
        assert abs(nll + np.mean([nade.log_prob(params, o, x).logp for x in X])) < 1e-12


class TestSample:
    def test_fair_coins(self):
        params = zero_params(5, 2)
        X, _ = nade.sample_batch(params, np.arange(5), np.random.default_rng(0), 10_000)
        np.testing.assert_allclose(X.mean(axis=0), 0.5, atol=0.02)

    def test_saturated_first_dimension(self):
        params = zero_params(4, 2)
        o = np.array([3, 1, 0, 2])
        params.b[o[0]] = 30.0
        X, _ = nade.sample_batch(params, o, np.random.default_rng(1), 10_000)
        assert X[:, o[0]].sum() >= 9999

    def test_empirical_distribution_matches_density(self):
        rng = np.random.default_rng(11)
        params = random_nade_params(4, 3, rng)
        o = rng.permutation(4)
        n = 100_000
        X, _ = nade.sample_batch(params, o, np.random.default_rng(2), n)
        codes = (X @ (2 ** np.arange(4))).astype(int)
        counts = np.bincount(codes, minlength=16) / n
        from nadekit.util import all_binary_vectors

        probs = np.exp(nade.log_prob_batch(params, o, all_binary_vectors(4))[0])
        tv = 0.5 * np.abs(counts - probs).sum()
        assert tv < 0.02


class TestTotalMass:
    def test_random_params_normalized(self):
        rng = np.random.default_rng(9)
        params = random_nade_params(3, 4, rng)
        assert abs(nade.total_mass(params, rng.permutation(3)) - 1.0) < 1e-10

    def test_zero_params_d10(self):
        assert abs(nade.total_mass(zero_params(10, 2), np.arange(10)) - 1.0) < 1e-12

    def test_saturated_biases_still_normalized(self):
        params = zero_params(6, 3)
        params.b[...] = 30.0
        assert abs(nade.total_mass(params, np.arange(6)) - 1.0) < 1e-10

    def test_refuses_large_dimension(self):
        with pytest.raises(ContractError):
            nade.total_mass(zero_params(15, 2), np.arange(15))

    def test_normalization_up_to_d12(self):
        rng = np.random.default_rng(21)
        for D in (5, 9, 12):
            params = random_nade_params(D, 6, rng)
            assert abs(nade.total_mass(params, rng.permutation(D)) - 1.0) < 1e-9


class TestMeanField:
    def _random_rbm(self, D, H, rng, scale=0.8):
        return nade.RbmParams(
            W=scale * rng.normal(size=(H, D)),
            b=scale * rng.normal(size=D),
            c=scale * rng.normal(size=H),
        )

    def test_single_step_reproduces_forward_pass(self):
        rng = np.random.default_rng(13)
        D, H = 6, 4
        rbm = self._random_rbm(D, H, rng)
        params = nade.nade_from_rbm(rbm)  # V = W^T
        o = rng.permutation(D)
        x = rng.integers(0, 2, D).astype(np.float64)
        trace = nade.log_prob(params, o, x)
        for d in range(D):
            state = nade.mean_field_init(rbm, o, x, d)
            new = nade.mean_field_step(rbm, o, x, state)
            assert np.max(np.abs(new.tau - trace.h[d])) <= 1e-12
            assert abs(new.mu[d] - trace.p[d]) <= 1e-12

    def test_zero_weights(self):
        rng = np.random.default_rng(14)
        D, H, d = 5, 3, 2
        rbm = nade.RbmParams(W=np.zeros((H, D)), b=rng.normal(size=D), c=rng.normal(size=H))
        o = rng.permutation(D)
        x = rng.integers(0, 2, D).astype(np.float64)
        new = nade.mean_field_step(rbm, o, x, nade.mean_field_init(rbm, o, x, d))
        np.testing.assert_allclose(new.tau, sigmoid(rbm.c), atol=1e-15)
        np.testing.assert_allclose(new.mu[d:], sigmoid(rbm.b[o[d:]]), atol=1e-15)
        np.testing.assert_array_equal(new.mu[:d], x[o[:d]])

    def test_updates_never_increase_objective(self):
        rng = np.random.default_rng(15)
        rbm = self._random_rbm(5, 3, rng, scale=0.5)
        o = rng.permutation(5)
        x = rng.integers(0, 2, 5).astype(np.float64)
        state = nade.mean_field_init(rbm, o, x, 2)
        prev = nade.mean_field_objective(rbm, o, x, state)
        for _ in range(50):
            state = nade.mean_field_step(rbm, o, x, state)
            cur = nade.mean_field_objective(rbm, o, x, state)
            assert cur <= prev + 1e-12
            prev = cur

    def test_fixed_point_helper_converges(self):
        rng = np.random.default_rng(16)
        rbm = self._random_rbm(4, 3, rng, scale=0.3)
        o = np.arange(4)
        x = np.array([1.0, 0.0, 0.0, 1.0])
        state = nade.mean_field_fixed_point(rbm, o, x, 1)
        again = nade.mean_field_step(rbm, o, x, state)
        assert np.max(np.abs(again.mu - state.mu)) < 1e-8

    def test_clamp_violation_raises(self):
        rng = np.random.default_rng(17)
        rbm = self._random_rbm(4, 2, rng)
        o = np.arange(4)
        x = np.ones(4)
        state = nade.mean_field_init(rbm, o, x, 2)
        state.mu[0] = 0.25  # violate the clamped-prefix precondition
        with pytest.raises(ContractError):
            nade.mean_field_step(rbm, o, x, state)
