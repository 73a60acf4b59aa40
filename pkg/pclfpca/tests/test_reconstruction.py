"""Unit tests for posterior curve reconstruction."""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from errors import DimensionError, ValidationError
from fda_core import FunctionalDataset, TimeGrid, center
from fpca import FpcaBasis, RetainRule, decompose
from model_config import DimensionPrior, McmcConfig, ModelConfig
from reconstruction import (
    ReconstructionSummary,
    cluster_mean_curves,
    frequentist_reconstruction,
    reconstruct,
    screen_chains,
)
from sampler import PosteriorDraws
from simulation import make_eigenfunctions


def basis_for(T=8, K=2, n=3):
    phi = make_eigenfunctions(T, K)
    return FpcaBasis(
        mean_curve=np.linspace(-1.0, 1.0, T),
        eigenfunctions=phi,
        eigenvalues=np.linspace(2.0, 1.0, K),
        scores=np.zeros((n, K)),
        total_variance=4.0,
    )


def draws_with(*blocks: np.ndarray) -> PosteriorDraws:
    """Draws with one chain per score block (snapshots, n, K)."""
    S, n, K = blocks[0].shape
    J = 2
    rng = np.random.default_rng(S)
    chains = [_chain(xi, J, rng) for xi in blocks]
    priors = tuple(DimensionPrior(r=1.0, Q=5.0, beta=1.0) for _ in range(K))
    return PosteriorDraws(
        chains=chains,
        model=ModelConfig(J=J, dim_priors=priors),
        mcmc=McmcConfig(burn_in=1, iterations=S, thinning=1, chains=len(chains)),
    )


def _chain(xi: np.ndarray, J: int, rng: np.random.Generator) -> dict:
    S, n, K = xi.shape
    return {
        "xi": xi,
        "c": np.ones((S, n, K), dtype=np.int32),
        "mu": np.zeros((S, J, K)),
        "s": np.ones((S, J, K)),
        "p_raw": np.ones((S, J, K)),
        "p": np.full((S, J, K), 0.5),
        "alpha": np.ones((S, K)),
        "tau": np.ones(S),
        "loglik": rng.normal(size=S),
    }


class TestReconstruct(unittest.TestCase):
    def test_single_snapshot_collapses(self):
        basis = basis_for()
        xi = np.random.default_rng(0).normal(size=(1, 3, 2))
        summary = reconstruct(draws_with(xi), basis)
        expected = basis.mean_curve + xi[0] @ basis.eigenfunctions
        np.testing.assert_allclose(summary.posterior_mean, expected, atol=1e-12)
        np.testing.assert_allclose(summary.width, 0.0, atol=1e-12)

    def test_zero_scores_give_mean_curve(self):
        basis = basis_for()
        summary = reconstruct(draws_with(np.zeros((5, 3, 2))), basis)
        np.testing.assert_allclose(summary.posterior_mean, np.tile(basis.mean_curve, (3, 1)))
        np.testing.assert_allclose(summary.width, 0.0)

    def test_bands_match_sorted_sample(self):
        basis = basis_for()
        rng = np.random.default_rng(1)
        xi = rng.normal(size=(41, 3, 2))
        summary = reconstruct(draws_with(xi), basis, level=0.95)
        # with 41 draws the 2.5% and 97.5% quantiles fall exactly on order statistics 2 and 40
        for _ in range(5):
            i, t = int(rng.integers(3)), int(rng.integers(8))
            sample = np.sort(basis.mean_curve[t] + xi[:, i, :] @ basis.eigenfunctions[:, t])
            self.assertAlmostEqual(summary.lower[i, t], sample[1], places=12)
            self.assertAlmostEqual(summary.upper[i, t], sample[39], places=12)
        self.assertTrue(np.all(summary.lower <= summary.posterior_mean))
        self.assertTrue(np.all(summary.posterior_mean <= summary.upper))

    def test_level_must_be_open_interval(self):
        basis = basis_for()
        for level in (0.0, 1.0, 1.5):
            with self.assertRaises(ValidationError):
                reconstruct(draws_with(np.zeros((2, 3, 2))), basis, level=level)

    def test_dimension_mismatch(self):
        with self.assertRaises(DimensionError):
            reconstruct(draws_with(np.zeros((2, 3, 1))), basis_for(K=2))

    def test_full_rank_empirical_scores_recover_smoothed(self):
        values = np.random.default_rng(2).normal(size=(5, 7))
        centred = center(FunctionalDataset(values=values, grid=TimeGrid.default(7)))
        basis = decompose(centred, RetainRule.fixed(4))
        np.testing.assert_allclose(frequentist_reconstruction(basis), values, atol=1e-8)
        summary = reconstruct(draws_with(basis.scores[None, :, :]), basis)
        np.testing.assert_allclose(summary.posterior_mean, values, atol=1e-8)

    def test_save_and_load(self):
        basis = basis_for()
        summary = reconstruct(draws_with(np.random.default_rng(3).normal(size=(9, 3, 2))), basis, level=0.9)
        with tempfile.TemporaryDirectory() as tmp:
            summary.save(tmp, grid=np.linspace(0, 1, 8))
            back = ReconstructionSummary.load(tmp, level=0.9)
            missing = Path(tmp) / "missing"
            with self.assertRaises(FileNotFoundError):
                ReconstructionSummary.load(missing)
        np.testing.assert_array_equal(back.posterior_mean, summary.posterior_mean)
        np.testing.assert_array_equal(back.upper, summary.upper)

    def test_disagreeing_chain_is_dropped(self):
        basis = basis_for()
        rng = np.random.default_rng(3)
        good = [rng.normal(size=(200, 3, 2)) for _ in range(2)]
        stray = rng.normal(size=(200, 3, 2)) + 5.0
        draws = draws_with(*good, stray)
        with self.assertLogs("reconstruction", level="WARNING") as logs:
            self.assertEqual(screen_chains(draws), [0, 1])
        self.assertIn("Dropping chain 3", "\n".join(logs.output))
        summary = reconstruct(draws, basis)
        self.assertEqual(summary.chains_used, (1, 2))
        kept = reconstruct(draws_with(*good), basis, psrf_threshold=None)
        np.testing.assert_allclose(summary.posterior_mean, kept.posterior_mean, atol=1e-12)
        pooled = reconstruct(draws, basis, psrf_threshold=None)
        self.assertEqual(pooled.chains_used, (1, 2, 3))
        self.assertGreater(float(np.abs(pooled.posterior_mean - kept.posterior_mean).max()), 0.5)

    def test_two_disagreeing_chains_are_flagged(self):
        rng = np.random.default_rng(4)
        draws = draws_with(rng.normal(size=(100, 3, 2)), rng.normal(size=(100, 3, 2)) + 5.0)
        with self.assertLogs("reconstruction", level="WARNING") as logs:
            self.assertEqual(screen_chains(draws), [0, 1])
        self.assertIn("disagree", "\n".join(logs.output))

    def test_agreeing_chains_all_kept(self):
        rng = np.random.default_rng(5)
        draws = draws_with(*(rng.normal(size=(200, 3, 2)) for _ in range(3)))
        self.assertEqual(screen_chains(draws), [0, 1, 2])

    def test_cluster_means(self):
        curves = np.array([[0.0, 0.0], [2.0, 2.0], [10.0, 12.0]])
        means = cluster_mean_curves(curves, np.array([1, 1, 2]))
        np.testing.assert_array_equal(means[1], [1.0, 1.0])
        np.testing.assert_array_equal(means[2], [10.0, 12.0])
        with self.assertRaises(DimensionError):
            cluster_mean_curves(curves, np.array([1, 2]))


if __name__ == "__main__":
    unittest.main()
