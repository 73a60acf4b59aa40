"""Posterior curve reconstruction with pointwise credible bands."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import DimensionError, ValidationError
from fda_core import load_matrix, save_matrix
from diagnostics import psrf_of
from fpca import FpcaBasis, reconstruct_from_scores
from sampler import PosteriorDraws

logger = logging.getLogger(__name__)

DEFAULT_PSRF_THRESHOLD = 1.1

FILES = {
    "posterior_mean": "reconstruction_mean.csv",
    "lower": "reconstruction_lower.csv",
    "upper": "reconstruction_upper.csv",
}


@dataclass(frozen=True)
class ReconstructionSummary:
    posterior_mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float
    chains_used: Optional[Tuple[int, ...]] = None

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def save(self, directory: str | os.PathLike, grid: Optional[Sequence[float]] = None) -> Path:
        directory = Path(directory)
        if grid is None:
            grid = range(1, self.posterior_mean.shape[1] + 1)
        columns = [format(t, ".17g") for t in grid]
        for attr, name in FILES.items():
            save_matrix(getattr(self, attr), directory / name, columns=columns)
        logger.info("Reconstruction written to %s", directory)
        return directory

    @classmethod
    def load(cls, directory: str | os.PathLike, level: float = 0.95) -> "ReconstructionSummary":
        directory = Path(directory)
        arrays = {}
        for attr, name in FILES.items():
            path = directory / name
            if not path.exists():
                raise FileNotFoundError(f"missing reconstruction file {path}")
            arrays[attr] = load_matrix(path, header=True)
        return cls(level=level, **arrays)


def _screening_traces(draws: PosteriorDraws) -> np.ndarray:
    """(P, chains, snapshots): log-likelihood and the across-curve mean score of each dimension."""
    rows = [np.stack([chain["loglik"] for chain in draws.chains])]
    for k in range(draws.K):
        rows.append(np.stack([chain["xi"][:, :, k].mean(axis=1) for chain in draws.chains]))
    return np.stack(rows)


def _worst_psrf(traces: np.ndarray, keep: List[int]) -> float:
    values = [psrf_of(t[keep], "screening trace") for t in traces]
    finite = [v for v in values if np.isfinite(v)]
    return max(finite) if finite else float("nan")


def screen_chains(draws: PosteriorDraws, threshold: Optional[float] = DEFAULT_PSRF_THRESHOLD) -> List[int]:
    """
    Indices of the chains to pool.

    While the worst split PSRF of the screening traces exceeds
    ``threshold`` and more than two chains remain, the chain whose removal
    lowers it most is dropped. Two disagreeing chains are both kept and
    flagged in the log.
    """
    keep = list(range(draws.n_chains))
    if threshold is None or draws.n_chains < 2 or draws.n_snapshots < 10:
        return keep
    traces = _screening_traces(draws)
    worst = _worst_psrf(traces, keep)
    while len(keep) > 2 and worst > threshold:
        trial = {c: _worst_psrf(traces, [d for d in keep if d != c]) for c in keep}
        chain = min(trial, key=lambda c: trial[c] if np.isfinite(trial[c]) else np.inf)
        if not trial[chain] < worst:
            break
        logger.warning("Dropping chain %s from reconstruction: PSRF %.3f -> %.3f", chain + 1, worst, trial[chain])
        keep.remove(chain)
        worst = trial[chain]
    if worst > threshold:
        logger.warning(
            "Chains %s disagree (PSRF %.3f > %.3f); reconstruction pools them anyway",
            [c + 1 for c in keep], worst, threshold,
        )
    return keep


def reconstruct(
    draws: PosteriorDraws,
    basis: FpcaBasis,
    level: float = 0.95,
    psrf_threshold: Optional[float] = DEFAULT_PSRF_THRESHOLD,
) -> ReconstructionSummary:
    """
    Curves x_i = mean_curve + sum_k xi_ik phi_k evaluated at every stored
    snapshot of the screened chains (see ``screen_chains``), summarised by
    their mean and the (1 - level)/2 and (1 + level)/2 pointwise quantiles.
    ``psrf_threshold=None`` pools every chain.
    """
    if not 0.0 < level < 1.0:
        raise ValidationError(f"credible level must lie in (0, 1), got {level}")
    if draws.K != basis.K:
        raise DimensionError(f"draws have K={draws.K}, basis has K={basis.K}")
    keep = screen_chains(draws, psrf_threshold)
    xi = np.concatenate([draws.chains[c]["xi"] for c in keep], axis=0)
    n, T = xi.shape[1], basis.T
    mean = np.empty((n, T))
    lower = np.empty((n, T))
    upper = np.empty((n, T))
    probs = [(1.0 - level) / 2.0, (1.0 + level) / 2.0]
    for i in range(n):
        curves = basis.mean_curve[None, :] + xi[:, i, :] @ basis.eigenfunctions
        mean[i] = curves.mean(axis=0)
        lower[i], upper[i] = np.quantile(curves, probs, axis=0)
    # bands always enclose the posterior mean
    lower = np.minimum(lower, mean)
    upper = np.maximum(upper, mean)
    return ReconstructionSummary(
        posterior_mean=mean, lower=lower, upper=upper, level=level, chains_used=tuple(c + 1 for c in keep)
    )


def frequentist_reconstruction(basis: FpcaBasis) -> np.ndarray:
    """Curves rebuilt from the empirical fPCA scores."""
    return reconstruct_from_scores(basis, basis.scores)


def cluster_mean_curves(curves: np.ndarray, partition: np.ndarray) -> Dict[int, np.ndarray]:
    """Average curve of each cluster of ``partition``."""
    partition = np.asarray(partition)
    if partition.size != curves.shape[0]:
        raise DimensionError(f"{partition.size} labels for {curves.shape[0]} curves")
    return {int(label): curves[partition == label].mean(axis=0) for label in np.unique(partition)}
