"""Unit tests for the Gibbs full conditionals and label handling."""

import math
import sys
import unittest
from pathlib import Path

import numpy as np
from scipy import stats

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from errors import NumericalError
from fda_core import FunctionalDataset, TimeGrid, center
from fpca import RetainRule, decompose
from gibbs import (
    GibbsContext,
    McmcState,
    alpha_log_density,
    categorical_from_logits,
    init_state,
    label_log_weights,
    log_likelihood,
    mu_conditional,
    relabel,
    sample_c,
    sample_mu,
    sample_scale,
    sample_sticks,
    sample_tau,
    sample_xi,
    slice_sigma,
    stick_weights,
    sticks_from_weights,
    sweep,
    tau_conditional,
    truncated_gamma,
    xi_conditional,
)
from model_config import GAMMA_PRECISION, MODE_STANDARD, UNIFORM_SIGMA, DimensionPrior, ModelConfig, ModelOptions


def one_dim_model(J=2, scale_prior=GAMMA_PRECISION, beta=1.0, upper=None, r=1.0, Q=10.0, **kwargs):
    prior = DimensionPrior(r=r, Q=Q, scale_prior=scale_prior, beta=beta, upper=upper)
    return ModelConfig(J=J, dim_priors=(prior,), **kwargs)


def one_dim_state(n, J, xi=0.0, labels=None, mu=0.0, s=1.0, tau=1.0, alpha=1.0):
    p = np.full((J, 1), 1.0 / J)
    return McmcState(
        xi=np.full((n, 1), float(xi)),
        c=np.ones((n, 1), dtype=np.int64) if labels is None else np.asarray(labels).reshape(n, 1),
        mu=np.full((J, 1), float(mu)),
        s=np.full((J, 1), float(s)),
        p_raw=sticks_from_weights(p),
        p=p,
        alpha=np.array([float(alpha)]),
        tau=float(tau),
    )


def unit_context(Y: np.ndarray) -> GibbsContext:
    phi = np.zeros((1, Y.shape[1]))
    phi[0, 0] = 1.0
    return GibbsContext(Y=Y, phi=phi, gram=phi @ phi.T, y_phi=Y @ phi.T)


def random_problem(seed=0, n=25, T=10, K=2):
    rng = np.random.default_rng(seed)
    values = rng.normal(size=(n, T)) @ np.diag(np.linspace(3.0, 0.3, T))
    centred = center(FunctionalDataset(values=values, grid=TimeGrid.default(T)))
    return centred, decompose(centred, RetainRule.fixed(K))


class TestScoreAndNoise(unittest.TestCase):
    def test_xi_closed_form(self):
        mean, var = xi_conditional(2.0, 1.0, 1.0, 0.0)
        self.assertEqual((mean, var), (1.0, 0.5))

    def test_xi_follows_data_when_noise_vanishes(self):
        mean, var = xi_conditional(3.0, 1e12, 1.0, -5.0)
        self.assertAlmostEqual(mean, 3.0, places=9)
        self.assertLess(var, 1e-11)

    def test_xi_draw_moments(self):
        n = 100_000
        Y = np.zeros((n, 5))
        Y[:, 0] = 2.0
        state = one_dim_state(n, 2)
        sample_xi(state, unit_context(Y), np.random.default_rng(1))
        draws = state.xi[:, 0]
        self.assertAlmostEqual(draws.mean(), 1.0, delta=3 * math.sqrt(0.5 / n))
        self.assertAlmostEqual(draws.var(), 0.5, delta=3 * 0.5 * math.sqrt(2.0 / n))

    def test_tau_conditional(self):
        shape, rate = tau_conditional(0.0, 10, 1e-3, 1e-3)
        self.assertAlmostEqual(shape, 5.001, places=12)
        self.assertEqual(rate, 1e-3)
        self.assertEqual(tau_conditional(2.0, 2, 0.0, 0.0), (1.0, 1.0))

    def test_tau_draw_moments(self):
        model = one_dim_model(a_prime=1.0, b_prime=1.0)
        ctx = unit_context(np.zeros((2, 3)))
        state = one_dim_state(2, 2)
        rng = np.random.default_rng(2)
        draws = np.empty(20_000)
        for i in range(draws.size):
            sample_tau(state, ctx, model, rng)
            draws[i] = state.tau
        # Gamma(shape 4, rate 1)
        self.assertAlmostEqual(draws.mean(), 4.0, delta=3 * 2.0 / math.sqrt(draws.size))

    def test_fixed_tau_is_kept(self):
        model = one_dim_model(fixed_tau=3.5)
        state = one_dim_state(2, 2)
        sample_tau(state, unit_context(np.ones((2, 4))), model, np.random.default_rng(0))
        self.assertEqual(state.tau, 3.5)


class TestClusterParameters(unittest.TestCase):
    def test_mu_conditional(self):
        self.assertEqual(mu_conditional(0, 0.0, 2.0, 4.0, 1.5), (1.5, 0.25))
        mean, _ = mu_conditional(5, 10.0, 1.0, 1e-12)
        self.assertAlmostEqual(mean, 2.0, places=9)

    def test_empty_cluster_means_follow_prior(self):
        J = 50_000
        model = one_dim_model(J=J, r=4.0)
        state = one_dim_state(4, J, xi=3.0)
        sample_mu(state, model, np.random.default_rng(3))
        empty = state.mu[1:, 0]
        self.assertAlmostEqual(empty.mean(), 0.0, delta=3 * 0.5 / math.sqrt(empty.size))
        self.assertAlmostEqual(empty.var(), 0.25, delta=0.01)

    def test_empty_cluster_gamma_precision(self):
        J = 50_000
        model = one_dim_model(J=J, beta=2.0)
        state = one_dim_state(4, J)
        sample_scale(state, model, np.random.default_rng(4))
        empty = state.s[1:, 0]
        # Gamma(1, rate 2)
        self.assertAlmostEqual(empty.mean(), 0.5, delta=3 * 0.5 / math.sqrt(empty.size))

    def test_empty_cluster_uniform_sd(self):
        J = 20_000
        model = one_dim_model(J=J, scale_prior=UNIFORM_SIGMA, beta=None, upper=2.0)
        state = one_dim_state(4, J)
        sample_scale(state, model, np.random.default_rng(5))
        sigma = 1.0 / np.sqrt(state.s[1:, 0])
        self.assertTrue(np.all((sigma > 0) & (sigma <= 2.0 + 1e-12)))
        self.assertAlmostEqual(sigma.mean(), 1.0, delta=3 * (2.0 / math.sqrt(12)) / math.sqrt(sigma.size))

    def test_slice_sampler_matches_quadrature(self):
        count, ss, upper = 400, 100.0, 5.0
        rng = np.random.default_rng(6)
        x, draws = 1.0, []
        for it in range(20_500):
            x = slice_sigma(x, count, ss, upper, rng)
            if it >= 500:
                draws.append(x)
        draws = np.asarray(draws)

        grid = np.linspace(1e-3, upper, 200_001)
        log_f = -count * np.log(grid) - ss / (2 * grid**2)
        w = np.exp(log_f - log_f.max())
        mean = float(np.sum(grid * w) / np.sum(w))
        sd = float(np.sqrt(np.sum((grid - mean) ** 2 * w) / np.sum(w)))
        self.assertAlmostEqual(mean, 0.5, delta=0.01)
        self.assertAlmostEqual(draws.mean(), mean, delta=0.002)
        self.assertAlmostEqual(draws.std(), sd, delta=0.1 * sd)

    def test_singleton_with_tiny_sd_escapes_in_one_move(self):
        rng = np.random.default_rng(11)
        moves = np.array([slice_sigma(1e-6, 1, 1e-12, 1.5, rng) for _ in range(2000)])
        self.assertTrue(np.all((moves > 0) & (moves <= 1.5)))
        self.assertGreater(float(np.median(moves)), 1e-4)

    def test_fixed_precision_is_kept(self):
        model = one_dim_model(J=3, fixed_precision=0.25)
        state = one_dim_state(5, 3, xi=1.0)
        sample_scale(state, model, np.random.default_rng(0))
        np.testing.assert_array_equal(state.s, 0.25)


class TestLabels(unittest.TestCase):
    def test_categorical_frequencies(self):
        n = 100_000
        weights = np.array([0.2, 0.3, 0.5])
        draws = categorical_from_logits(np.tile(np.log(weights), (n, 1)), np.random.default_rng(7))
        freq = np.bincount(draws, minlength=3) / n
        for f, w in zip(freq, weights):
            self.assertAlmostEqual(f, w, delta=3 * math.sqrt(w * (1 - w) / n))

    def test_far_scores_do_not_underflow(self):
        log_w = label_log_weights(np.array([1e4]), np.array([0.0, 1e4 - 1]), np.ones(2), np.array([0.5, 0.5]))
        self.assertEqual(int(categorical_from_logits(log_w, np.random.default_rng(0))[0]), 1)

    def test_all_minus_inf_row(self):
        log_w = np.array([[0.0, 0.0], [-np.inf, -np.inf]])
        with self.assertRaises(NumericalError) as ctx:
            categorical_from_logits(log_w, np.random.default_rng(0))
        self.assertEqual(ctx.exception.parameter, "c")

    def test_zero_weight_cluster_never_drawn(self):
        model = one_dim_model(J=3)
        state = one_dim_state(50, 3)
        state.p[:, 0] = [1.0, 0.0, 0.0]
        sample_c(state, model, np.random.default_rng(8))
        np.testing.assert_array_equal(state.c, 1)

    def test_standard_mode_keeps_labels(self):
        model = one_dim_model(J=1, mode=MODE_STANDARD)
        state = one_dim_state(5, 1, xi=2.0)
        sample_c(state, model, np.random.default_rng(0))
        sample_mu(state, model, np.random.default_rng(0))
        np.testing.assert_array_equal(state.c, 1)
        np.testing.assert_array_equal(state.mu, 0.0)


class TestSticksAndConcentration(unittest.TestCase):
    def test_stick_weights(self):
        np.testing.assert_allclose(stick_weights(np.array([0.5, 0.5, 1.0])), [0.5, 0.25, 0.25])
        np.testing.assert_allclose(sticks_from_weights(np.array([0.5, 0.25, 0.25])), [0.5, 0.5, 1.0])

    def test_random_sticks_on_simplex(self):
        rng = np.random.default_rng(9)
        raw = np.vstack([rng.random((19, 4)), np.ones((1, 4))])
        self.assertTrue(np.allclose(stick_weights(raw).sum(axis=0), 1.0, atol=1e-12))

    def test_stick_posterior_means(self):
        n, alpha = 50, 0.5
        model = one_dim_model(J=3)
        state = one_dim_state(n, 3, alpha=alpha)
        rng = np.random.default_rng(10)
        first, second = np.empty(20_000), np.empty(20_000)
        for i in range(first.size):
            sample_sticks(state, model, rng)
            first[i], second[i] = state.p_raw[0, 0], state.p_raw[1, 0]
            self.assertAlmostEqual(float(state.p[:, 0].sum()), 1.0, delta=1e-12)
        # Beta(n + 1, alpha) and Beta(1, alpha)
        self.assertAlmostEqual(first.mean(), (n + 1) / (n + 1 + alpha), delta=1e-3)
        self.assertAlmostEqual(second.mean(), 1 / (1 + alpha), delta=0.01)
        self.assertEqual(state.p_raw[2, 0], 1.0)

    def test_alpha_density_mode(self):
        grid = np.linspace(0.01, 60, 600_001)
        mode = grid[np.argmax(alpha_log_density(grid, 20, 1.0))]
        self.assertAlmostEqual(float(mode), 20.0, delta=1e-3)

    def test_truncated_gamma_distribution(self):
        shape, rate, upper = 21.0, 1.0, 30.0
        draws = np.sort(truncated_gamma(shape, rate, upper, np.random.default_rng(11), size=100_000))
        self.assertTrue(np.all((draws > 0) & (draws <= upper)))
        grid = np.linspace(0.0, upper, 300_001)
        dens = np.exp(alpha_log_density(grid[1:], int(shape) - 1, rate))
        cdf = np.concatenate([[0.0], np.cumsum((dens[1:] + dens[:-1]) / 2)])
        cdf = np.concatenate([[0.0], cdf]) / cdf[-1]
        ecdf_hi = np.arange(1, draws.size + 1) / draws.size
        ecdf_lo = np.arange(draws.size) / draws.size
        model_cdf = np.interp(draws, grid, cdf)
        ks = max(np.max(ecdf_hi - model_cdf), np.max(model_cdf - ecdf_lo))
        self.assertLess(ks, 0.01)
        exact = stats.gamma(shape, scale=1 / rate)
        self.assertAlmostEqual(float(np.interp(20.0, grid, cdf)), exact.cdf(20.0) / exact.cdf(upper), delta=1e-4)

    def test_truncated_gamma_tiny_bound(self):
        draws = truncated_gamma(21.0, 1.0, 1e-8, np.random.default_rng(12), size=1000)
        self.assertTrue(np.all((draws > 0) & (draws <= 1e-8)))

    def test_truncated_gamma_zero_rate_is_uniform(self):
        draws = truncated_gamma(3.0, 0.0, 4.0, np.random.default_rng(13), size=50_000)
        self.assertAlmostEqual(draws.mean(), 2.0, delta=0.05)


class TestRelabel(unittest.TestCase):
    def _state(self, labels, mu, p, s=None):
        J = len(mu)
        state = one_dim_state(len(labels), J, labels=labels)
        state.mu[:, 0] = mu
        state.s[:, 0] = s if s is not None else np.arange(1, J + 1)
        state.p[:, 0] = p
        state.p_raw[:, 0] = sticks_from_weights(np.asarray(p, dtype=float))
        return state

    def test_sorted_by_mean(self):
        state = self._state([1, 2, 3], [3.0, 1.0, 2.0], [0.5, 0.3, 0.2])
        out = relabel(state, "by_mean")
        np.testing.assert_array_equal(out.mu[:, 0], [1.0, 2.0, 3.0])
        np.testing.assert_array_equal(out.c[:, 0], [3, 1, 2])
        np.testing.assert_array_equal(out.s[:, 0], [2, 3, 1])
        np.testing.assert_allclose(out.p[:, 0], [0.3, 0.2, 0.5])
        # each curve keeps its cluster parameters
        np.testing.assert_array_equal(out.mu[out.c[:, 0] - 1, 0], state.mu[state.c[:, 0] - 1, 0])
        np.testing.assert_allclose(stick_weights(out.p_raw[:, 0]), out.p[:, 0], atol=1e-12)
        np.testing.assert_array_equal(out.xi, state.xi)

    def test_empty_clusters_last(self):
        state = self._state([2, 2, 4], [0.0, 5.0, 0.0, 1.0], [0.1, 0.2, 0.3, 0.4])
        out = relabel(state, "by_mean")
        np.testing.assert_array_equal(out.c[:, 0], [2, 2, 1])
        np.testing.assert_array_equal(out.mu[:, 0], [1.0, 5.0, 0.0, 0.0])
        np.testing.assert_allclose(out.p[:, 0], [0.4, 0.2, 0.1, 0.3])

    def test_by_weight(self):
        state = self._state([1, 2, 3], [0.0, 1.0, 2.0], [0.5, 0.3, 0.2])
        out = relabel(state, "by_weight")
        np.testing.assert_allclose(out.p[:, 0], [0.2, 0.3, 0.5])
        np.testing.assert_array_equal(out.c[:, 0], [3, 2, 1])

    def test_input_untouched(self):
        state = self._state([1, 2, 3], [3.0, 1.0, 2.0], [0.5, 0.3, 0.2])
        relabel(state)
        np.testing.assert_array_equal(state.c[:, 0], [1, 2, 3])


class TestSweep(unittest.TestCase):
    def test_standard_init(self):
        centred, basis = random_problem()
        model = ModelOptions(mode=MODE_STANDARD, J=12).resolve(basis.eigenvalues)
        state = init_state(basis, model, np.random.default_rng(0), centred)
        self.assertEqual(state.J, 1)
        np.testing.assert_array_equal(state.c, 1)
        np.testing.assert_array_equal(state.mu, 0.0)
        np.testing.assert_array_equal(state.p, 1.0)
        np.testing.assert_array_equal(state.xi, basis.scores)

    def test_sweeps_keep_state_valid(self):
        centred, basis = random_problem(seed=1)
        model = ModelOptions(J=6).resolve(basis.eigenvalues)
        rng = np.random.default_rng(1)
        state = init_state(basis, model, rng, centred)
        ctx = GibbsContext.build(centred, basis)
        for _ in range(30):
            sweep(state, ctx, model, rng)
            self.assertIsNone(state.first_invalid())
            np.testing.assert_allclose(state.p.sum(axis=0), 1.0, atol=1e-12)
            self.assertTrue(np.all(state.alpha <= [p.Q for p in model.dim_priors]))

    def test_standard_mode_ignores_truncation(self):
        centred, basis = random_problem(seed=2)
        runs = []
        for J in (5, 30):
            model = ModelOptions(mode=MODE_STANDARD, J=J).resolve(basis.eigenvalues)
            rng = np.random.default_rng(99)
            state = init_state(basis, model, rng, centred)
            ctx = GibbsContext.build(centred, basis)
            for _ in range(5):
                sweep(state, ctx, model, rng)
            runs.append(state)
        np.testing.assert_array_equal(runs[0].xi, runs[1].xi)
        self.assertEqual(runs[0].tau, runs[1].tau)

    def test_permuted_labels_give_same_first_sweep(self):
        centred, basis = random_problem(seed=3)
        model = ModelOptions(J=6).resolve(basis.eigenvalues)
        ctx = GibbsContext.build(centred, basis)
        state = init_state(basis, model, np.random.default_rng(3), centred)
        warm = np.random.default_rng(4)
        for _ in range(5):
            sweep(state, ctx, model, warm)
        order = np.random.default_rng(5).permutation(state.J)
        inverse = np.argsort(order)
        p = state.p[order].copy()
        permuted = McmcState(
            xi=state.xi.copy(),
            c=inverse[state.c - 1] + 1,
            mu=state.mu[order].copy(),
            s=state.s[order].copy(),
            p_raw=sticks_from_weights(p),
            p=p,
            alpha=state.alpha.copy(),
            tau=state.tau,
        )
        np.testing.assert_array_equal(permuted.mu[permuted.c[:, 0] - 1, 0], state.mu[state.c[:, 0] - 1, 0])
        sweep(state, ctx, model, np.random.default_rng(6))
        sweep(permuted, ctx, model, np.random.default_rng(6))
        np.testing.assert_array_equal(permuted.xi, state.xi)
        self.assertEqual(permuted.tau, state.tau)
        self.assertEqual(log_likelihood(permuted, ctx), log_likelihood(state, ctx))
        self.assertEqual(log_likelihood(relabel(state), ctx), log_likelihood(state, ctx))

    def test_first_invalid_names_block(self):
        state = one_dim_state(3, 2)
        state.s[1, 0] = -1.0
        self.assertEqual(state.first_invalid(), "s")
        state.s[1, 0] = 1.0
        state.c[0, 0] = 3
        self.assertEqual(state.first_invalid(), "c")


if __name__ == "__main__":
    unittest.main()
