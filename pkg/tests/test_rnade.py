"""Real-valued NADE: head parameterization, one-dimensional densities,
recurrence, gradients (with and without the sigma-scaled mean signal), and
ancestral sampling."""

import numpy as np
import pytest
from scipy import integrate, stats

from conftest import finite_difference, max_relative_error, random_rnade_params
from nadekit import rnade
from nadekit.util import DomainError

STD_NORMAL_AT_MODE = -0.5 * np.log(2.0 * np.pi)


def zeroed(params):
    for block in params.blocks().values():
        block[...] = 0.0
    return params


def quadrature_mass(family, mix, width=12.0):
    lo = float(np.min(mix.mu - width * mix.sigma))
    hi = float(np.max(mix.mu + width * mix.sigma))
    val, err = integrate.quad(
        lambda v: np.exp(rnade.log_density_1d(family, mix, v)),
        lo,
        hi,
        points=list(np.sort(mix.mu)),
        limit=200,
    )
    return val


class TestConditionalParams:
    def test_zero_heads(self):
        fam = rnade.ConditionalFamily(rnade.MOG, 4)
        params = zeroed(rnade.init_rnade_params(3, 5, fam, np.random.default_rng(0)))
        mix = rnade.conditional_params(params, 1, np.zeros(5))
        np.testing.assert_allclose(mix.pi, 0.25)
        np.testing.assert_allclose(mix.mu, 0.0)
        np.testing.assert_allclose(mix.sigma, 1.0)

    def test_softmax_arithmetic(self):
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        params = zeroed(rnade.init_rnade_params(2, 3, fam, np.random.default_rng(0)))
        params.b_pi[0] = [np.log(3.0), 0.0]
        mix = rnade.conditional_params(params, 0, np.zeros(3))
        np.testing.assert_allclose(mix.pi, [0.75, 0.25], atol=1e-15)

    def test_simplex_and_shift_invariance(self):
        fam = rnade.ConditionalFamily(rnade.MOG, 5)
        rng = np.random.default_rng(1)
        params = random_rnade_params(4, 6, fam, rng)
        h = rng.normal(size=6)
        mix = rnade.conditional_params(params, 2, h)
        assert abs(mix.pi.sum() - 1.0) < 1e-12
        params.b_pi[2] += 7.3  # adding a constant to all pi logits changes nothing
        shifted = rnade.conditional_params(params, 2, h)
        np.testing.assert_allclose(shifted.pi, mix.pi, atol=1e-12)

    def test_sigma_floor(self):
        fam = rnade.ConditionalFamily(rnade.GAUSSIAN)
        params = zeroed(rnade.init_rnade_params(2, 3, fam, np.random.default_rng(0)))
        params.b_sigma[0] = -100.0
        mix = rnade.conditional_params(params, 0, np.zeros(3))
        assert mix.sigma[0] == pytest.approx(1e-6)

    def test_bernoulli_rejected(self):
        with pytest.raises(DomainError):
            rnade.ConditionalFamily(rnade.BERNOULLI)._check_real()


class TestLogDensity1D:
    def test_standard_normal_at_mode(self):
        fam = rnade.ConditionalFamily(rnade.GAUSSIAN)
        mix = rnade.MixtureParams1D(pi=np.ones(1), mu=np.zeros(1), sigma=np.ones(1))
        assert rnade.log_density_1d(fam, mix, 0.0) == pytest.approx(STD_NORMAL_AT_MODE, abs=1e-12)

    def test_laplace_at_mode(self):
        fam = rnade.ConditionalFamily(rnade.LAPLACE)
        mix = rnade.MixtureParams1D(pi=np.ones(1), mu=np.zeros(1), sigma=np.ones(1))
        assert rnade.log_density_1d(fam, mix, 0.0) == pytest.approx(-np.log(2.0), abs=1e-12)

    def test_two_component_mixture_normalizes(self):
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        mix = rnade.MixtureParams1D(pi=np.array([0.5, 0.5]), mu=np.array([-1.0, 1.0]), sigma=np.ones(2))
        assert abs(quadrature_mass(fam, mix) - 1.0) < 1e-6

    def test_stable_for_extreme_arguments(self):
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        mix = rnade.MixtureParams1D(pi=np.array([0.9, 0.1]), mu=np.array([0.0, 3.0]), sigma=np.array([1e-6, 2.0]))
        for v in (-1e6, -10.0, 0.0, 17.0, 1e6):
            assert np.isfinite(rnade.log_density_1d(fam, mix, v))

    def test_random_conditionals_normalize(self):
        rng = np.random.default_rng(4)
        for kind, C in ((rnade.MOG, 3), (rnade.MOL, 2), (rnade.GAUSSIAN, 1), (rnade.LAPLACE, 1)):
            fam = rnade.ConditionalFamily(kind, C)
            params = random_rnade_params(3, 4, fam, rng)
            trace = rnade.log_prob(params, np.arange(3), rng.normal(size=3))
            for mix in trace.mixtures:
                assert abs(quadrature_mass(fam, mix) - 1.0) < 1e-6


def naive_rnade_log_prob(params, o, x):
    """Per-dimension recomputation of the hidden state from scratch."""
    logp = 0.0
    for d in range(params.D):
        prefix = o[:d]
        a = params.c + params.W[:, prefix] @ x[prefix]
        h = np.maximum(a, 0.0) if params.activation == "relu" else 1.0 / (1.0 + np.exp(-a))
        mix = rnade.conditional_params(params, o[d], h)
        logp += rnade.log_density_1d(params.family, mix, x[o[d]])
    return logp


class TestLogProb:
    def test_zero_params_standard_normals(self):
        fam = rnade.ConditionalFamily(rnade.GAUSSIAN)
        params = zeroed(rnade.init_rnade_params(3, 4, fam, np.random.default_rng(0)))
        trace = rnade.log_prob(params, np.arange(3), np.zeros(3))
        assert trace.logp == pytest.approx(3 * STD_NORMAL_AT_MODE, abs=1e-12)

    def test_matches_naive_recurrence(self):
        rng = np.random.default_rng(5)
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        params = random_rnade_params(5, 4, fam, rng)
        o = rng.permutation(5)
        x = rng.normal(size=5)
        trace = rnade.log_prob(params, o, x)
        assert abs(trace.logp - naive_rnade_log_prob(params, o, x)) < 1e-12

    def test_fixed_var_equals_gaussian_with_unit_sigma_head(self):
        rng = np.random.default_rng(6)
        fixed = random_rnade_params(4, 3, rnade.ConditionalFamily(rnade.FIXED_VAR_GAUSSIAN), rng)
        gauss = rnade.RnadeParams(
            family=rnade.ConditionalFamily(rnade.GAUSSIAN),
            W=fixed.W.copy(),
            c=fixed.c.copy(),
            V_mu=fixed.V_mu.copy(),
            b_mu=fixed.b_mu.copy(),
            V_sigma=np.zeros_like(fixed.V_mu),
            b_sigma=np.zeros_like(fixed.b_mu),
            activation=fixed.activation,
        )
        o = np.arange(4)
        x = rng.normal(size=4)
        assert rnade.log_prob(fixed, o, x).logp == rnade.log_prob(gauss, o, x).logp

    def test_single_component_mixture_equals_gaussian(self):
        rng = np.random.default_rng(7)
        gauss = random_rnade_params(4, 3, rnade.ConditionalFamily(rnade.GAUSSIAN), rng)
        mog1 = rnade.RnadeParams(
            family=rnade.ConditionalFamily(rnade.MOG, 1),
            W=gauss.W.copy(),
            c=gauss.c.copy(),
            V_mu=gauss.V_mu.copy(),
            b_mu=gauss.b_mu.copy(),
            V_sigma=gauss.V_sigma.copy(),
            b_sigma=gauss.b_sigma.copy(),
            V_pi=rng.normal(size=(4, 1, 3)),  # softmax of one logit is always 1
            b_pi=rng.normal(size=(4, 1)),
            activation=gauss.activation,
        )
        o = rng.permutation(4)
        for x in rng.normal(size=(10, 4)):
            assert abs(rnade.log_prob(gauss, o, x).logp - rnade.log_prob(mog1, o, x).logp) <= 1e-12

    def test_batch_matches_single(self):
        rng = np.random.default_rng(8)
        fam = rnade.ConditionalFamily(rnade.MOL, 3)
        params = random_rnade_params(4, 5, fam, rng)
        o = rng.permutation(4)
        X = rng.normal(size=(9, 4))
        logps = rnade.log_prob_batch(params, o, X)
        for i in range(len(X)):
            assert abs(logps[i] - rnade.log_prob(params, o, X[i]).logp) < 1e-12


class TestGradNll:
    @pytest.mark.parametrize(
        "kind,C",
        [(rnade.MOG, 2), (rnade.MOL, 2), (rnade.GAUSSIAN, 1), (rnade.LAPLACE, 1), (rnade.FIXED_VAR_GAUSSIAN, 1)],
    )
    def test_matches_finite_differences(self, kind, C):
        rng = np.random.default_rng(hash(kind) % 2**31)
        fam = rnade.ConditionalFamily(kind, C)
        params = random_rnade_params(4, 3, fam, rng)
        o = rng.permutation(4)
        x = rng.normal(size=4) + 0.1
        grad, _ = rnade.grad_nll(params, o, x, scale_mean_grad_by_sigma=False)
        fd = finite_difference(lambda: -rnade.log_prob(params, o, x).logp, params.blocks())
        assert max_relative_error(grad.blocks(), fd) < 1e-4

    def test_scaling_flag_is_identity_at_unit_sigma(self):
        rng = np.random.default_rng(10)
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        params = random_rnade_params(4, 3, fam, rng)
        params.V_sigma[...] = 0.0
        params.b_sigma[...] = 0.0  # sigma = exp(0) = 1 everywhere
        o = rng.permutation(4)
        x = rng.normal(size=4)
        g_off, _ = rnade.grad_nll(params, o, x, scale_mean_grad_by_sigma=False)
        g_on, _ = rnade.grad_nll(params, o, x, scale_mean_grad_by_sigma=True)
        for key in g_off.blocks():
            np.testing.assert_array_equal(g_off.blocks()[key], g_on.blocks()[key])

    def test_scaling_flag_never_changes_density(self):
        rng = np.random.default_rng(11)
        fam = rnade.ConditionalFamily(rnade.MOG, 3)
        params = random_rnade_params(3, 4, fam, rng)
        o = np.arange(3)
        x = rng.normal(size=3)
        before = rnade.log_prob(params, o, x).logp
        rnade.grad_nll(params, o, x, scale_mean_grad_by_sigma=True)
        assert rnade.log_prob(params, o, x).logp == before

    def test_gaussian_mean_score(self):
        # For C=1 Gaussian the raw mean signal is (mu - v) / sigma^2, and the
        # b_mu gradient equals it directly.
        rng = np.random.default_rng(12)
        fam = rnade.ConditionalFamily(rnade.GAUSSIAN)
        params = random_rnade_params(3, 4, fam, rng)
        o = rng.permutation(3)
        x = rng.normal(size=3)
        grad, trace = rnade.grad_nll(params, o, x, scale_mean_grad_by_sigma=False)
        for d in range(3):
            mix = trace.mixtures[d]
            expected = (mix.mu[0] - x[o[d]]) / mix.sigma[0] ** 2
            assert grad.db_mu[o[d], 0] == pytest.approx(expected, rel=1e-12)


class TestSample:
    def test_zero_params_standard_normal(self):
        fam = rnade.ConditionalFamily(rnade.GAUSSIAN)
        params = zeroed(rnade.init_rnade_params(3, 4, fam, np.random.default_rng(0)))
        X = rnade.sample_batch(params, np.arange(3), np.random.default_rng(1), 10_000)
        np.testing.assert_allclose(X.mean(axis=0), 0.0, atol=0.03)
        np.testing.assert_allclose(X.var(axis=0), 1.0, atol=0.05)

    def test_degenerate_mixture_component_never_selected(self):
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        params = zeroed(rnade.init_rnade_params(2, 3, fam, np.random.default_rng(0)))
        params.b_pi[:, 0] = 40.0  # pi ~ (1, 0)
        params.b_mu[:, 1] = 1000.0  # component 2 would be unmissable
        X = rnade.sample_batch(params, np.arange(2), np.random.default_rng(2), 10_000)
        assert np.all(np.abs(X) < 100.0)

    def test_histogram_matches_density(self):
        rng = np.random.default_rng(13)
        fam = rnade.ConditionalFamily(rnade.MOG, 2)
        params = random_rnade_params(2, 3, fam, rng, bias_scale=0.6)
        o = np.arange(2)
        n = 100_000
        X = rnade.sample_batch(params, o, np.random.default_rng(3), n)

        bins = 20
        lo = X.min(axis=0) - 0.5
        hi = X.max(axis=0) + 0.5
        edges = [np.linspace(lo[j], hi[j], bins + 1) for j in range(2)]
        counts, _, _ = np.histogram2d(X[:, 0], X[:, 1], bins=edges)

        # Expected cell masses by midpoint quadrature on a 7x7 subgrid.
        sub = 7
        centers = []
        for j in range(2):
            fine = np.linspace(lo[j], hi[j], bins * sub + 1)
            centers.append(0.5 * (fine[:-1] + fine[1:]))
        gx, gy = np.meshgrid(centers[0], centers[1], indexing="ij")
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
        dens = np.exp(rnade.log_prob_batch(params, o, pts)).reshape(bins * sub, bins * sub)
        area = (edges[0][1] - edges[0][0]) * (edges[1][1] - edges[1][0]) / sub**2
        mass = dens.reshape(bins, sub, bins, sub).sum(axis=(1, 3)) * area

        keep = mass * n >= 10.0
        chi2 = float((((counts - n * mass) ** 2) / (n * mass))[keep].sum())
        dof = int(keep.sum()) - 1
        assert stats.chi2.sf(chi2, dof) > 0.001
