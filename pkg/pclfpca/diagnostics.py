"""
Clustering exploration and convergence checks over stored draws.

Per eigendimension: distribution of the number of occupied clusters and
the single-cluster Bayes factor, cluster-size and weight posteriors, the
MAP partition and the pairwise probability matrix (PPM). Across chains:
split potential scale reduction and effective sample size via arviz.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import arviz as az
import numpy as np

from errors import ValidationError
from fda_core import save_matrix
from gibbs import stick_weights
from model_config import ModelConfig
from sampler import PosteriorDraws
from settings import write_json

logger = logging.getLogger(__name__)

DEFAULT_PRIOR_SIMS = 100_000
MIN_PRIOR_SIMS = 10_000
PPM_CHUNK = 1000


@dataclass(frozen=True)
class Histogram:
    bins: np.ndarray
    masses: np.ndarray

    def mass_at(self, value: float) -> float:
        hit = np.isclose(self.bins, value)
        return float(self.masses[hit].sum())

    @property
    def mode(self) -> float:
        return float(self.bins[int(np.argmax(self.masses))]) if self.bins.size else math.nan

    def to_dict(self) -> Dict[str, Any]:
        return {"bins": self.bins.tolist(), "masses": self.masses.tolist()}


def _discrete_histogram(values: np.ndarray) -> Histogram:
    bins, counts = np.unique(np.asarray(values), return_counts=True)
    total = counts.sum()
    masses = counts / total if total else counts.astype(float)
    return Histogram(bins=bins, masses=masses)


def occupied_counts(labels: np.ndarray) -> np.ndarray:
    """Number of distinct labels in each row of a (snapshots, n) matrix."""
    ordered = np.sort(labels, axis=1)
    return 1 + np.count_nonzero(np.diff(ordered, axis=1), axis=1)


def jplus_counts(draws: PosteriorDraws, k: int) -> Histogram:
    """Distribution of the number of non-empty clusters across snapshots."""
    return _discrete_histogram(occupied_counts(draws.labels(k)))


def prior_single_cluster_probability(
    n: int,
    J: int,
    Q: float,
    sims: int,
    rng: np.random.Generator,
    alpha: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Prior probability that n labels occupy a single cluster.

    Forward-simulates the concentration (Uniform(0, Q] unless ``alpha`` is
    fixed), truncated stick-breaking weights and n categorical labels.

    Returns:
        (probability, Monte-Carlo standard error)
    """
    if J < 2:
        return 1.0, 0.0
    if alpha is None:
        alphas = Q * (1.0 - rng.random(sims))
    else:
        alphas = np.full(sims, float(alpha))
    sticks = np.ones((J, sims))
    sticks[:-1] = rng.beta(1.0, np.broadcast_to(alphas, (J - 1, sims)))
    weights = stick_weights(sticks).T
    weights /= weights.sum(axis=1, keepdims=True)
    counts = rng.multinomial(n, weights)
    single = np.max(counts, axis=1) == n
    prob = float(np.mean(single))
    return prob, float(math.sqrt(prob * (1.0 - prob) / sims))


@dataclass(frozen=True)
class BayesFactor:
    value: float
    posterior_single: float
    prior_single: float
    prior_se: float
    note: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": _json_number(self.value),
            "posterior_single": self.posterior_single,
            "prior_single": self.prior_single,
            "prior_se": self.prior_se,
            "note": self.note,
        }


def _json_number(value: float) -> Any:
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


def bayes_factor_from_labels(
    labels: np.ndarray,
    J: int,
    Q: float,
    prior_sims: int = DEFAULT_PRIOR_SIMS,
    rng: Optional[np.random.Generator] = None,
    alpha: Optional[float] = None,
) -> BayesFactor:
    """Posterior-to-prior odds of a single occupied cluster."""
    if prior_sims < MIN_PRIOR_SIMS:
        raise ValidationError(f"prior_sims must be at least {MIN_PRIOR_SIMS}, got {prior_sims}")
    if not Q > 0 or (alpha is not None and not alpha > 0):
        raise ValidationError(f"Q and alpha must be positive, got Q={Q} alpha={alpha}")
    rng = rng if rng is not None else np.random.default_rng()
    post = float(np.mean(occupied_counts(labels) == 1))
    n = int(labels.shape[1])
    if J < 2:
        return BayesFactor(math.nan, post, 1.0, 0.0, "single-cluster model; Bayes factor undefined")
    prior, se = prior_single_cluster_probability(n, J, Q, prior_sims, rng, alpha)
    logger.debug("Prior P(J+=1)=%.4f (se %.4f), posterior %.4f", prior, se, post)

    if prior == 0.0:
        return BayesFactor(math.inf, post, prior, se, "prior P(J+=1) estimated as 0; increase prior_sims")
    if prior == 1.0:
        return BayesFactor(0.0 if post < 1 else math.nan, post, prior, se, "prior P(J+>1) estimated as 0")
    if post == 1.0:
        return BayesFactor(math.inf, post, prior, se, "posterior P(J+>1) is 0")
    value = (post / (1.0 - post)) / (prior / (1.0 - prior))
    return BayesFactor(value, post, prior, se)


def bayes_factor_single(
    draws: PosteriorDraws,
    k: int,
    model: Optional[ModelConfig] = None,
    prior_sims: int = DEFAULT_PRIOR_SIMS,
    rng: Optional[np.random.Generator] = None,
    Q: Optional[float] = None,
    alpha: Optional[float] = None,
) -> BayesFactor:
    """Bayes factor of one eigendimension; ``Q`` and ``alpha`` override the fitted prior."""
    model = model or draws.model
    Q = model.dim_priors[k].Q if Q is None else float(Q)
    return bayes_factor_from_labels(draws.labels(k), model.effective_J, Q, prior_sims, rng, alpha)


@dataclass(frozen=True)
class ClusterSize:
    rank: int
    empty_probability: float
    sizes: Histogram

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rank": self.rank,
            "empty_probability": self.empty_probability,
            "sizes": self.sizes.to_dict(),
            "mode": None if self.sizes.bins.size == 0 else self.sizes.mode,
        }


def size_posteriors(draws: PosteriorDraws, k: int) -> List[ClusterSize]:
    """Per cluster rank: probability of being empty and occupancy fractions when not."""
    labels = draws.labels(k)
    n = labels.shape[1]
    counts = np.stack([np.bincount(row - 1, minlength=draws.J) for row in labels])
    out = []
    for j in range(draws.J):
        occ = counts[:, j]
        nonempty = occ > 0
        out.append(
            ClusterSize(
                rank=j + 1,
                empty_probability=float(np.mean(~nonempty)),
                sizes=_discrete_histogram(occ[nonempty] / n),
            )
        )
    return out


def weight_posteriors(draws: PosteriorDraws, k: int, level: float = 0.95) -> List[Dict[str, float]]:
    """Posterior mean and central interval of each relabeled mixing weight."""
    weights = draws.pooled("p")[:, :, k]
    lo, hi = np.quantile(weights, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return [
        {"rank": j + 1, "mean": float(weights[:, j].mean()), "lower": float(lo[j]), "upper": float(hi[j])}
        for j in range(weights.shape[1])
    ]


def map_partition(draws: PosteriorDraws, k: int) -> np.ndarray:
    """Per curve modal label; ties go to the smallest label."""
    return map_from_labels(draws.labels(k), draws.J)


def map_from_labels(labels: np.ndarray, J: Optional[int] = None) -> np.ndarray:
    J = int(J or labels.max())
    counts = np.zeros((labels.shape[1], J), dtype=np.int64)
    for j in range(J):
        counts[:, j] = np.sum(labels == j + 1, axis=0)
    return np.argmax(counts, axis=1) + 1


def ppm_from_labels(labels: np.ndarray) -> np.ndarray:
    """Fraction of snapshots in which each pair shares a label."""
    labels = np.asarray(labels)
    S, n = labels.shape
    J = int(labels.max())
    total = np.zeros((n, n))
    for start in range(0, S, PPM_CHUNK):
        block = labels[start:start + PPM_CHUNK]
        onehot = (block[:, :, None] == np.arange(1, J + 1)[None, None, :]).astype(float)
        total += np.einsum("sij,skj->ik", onehot, onehot)
    ppm = total / S
    ppm = 0.5 * (ppm + ppm.T)
    np.fill_diagonal(ppm, 1.0)
    return ppm


def pairwise_probability_matrix(draws: PosteriorDraws, k: int) -> np.ndarray:
    return ppm_from_labels(draws.labels(k))


def trace(draws: PosteriorDraws, name: str, index: Sequence[int] = ()) -> np.ndarray:
    """(chains, snapshots) trace of one scalar entry of a parameter block."""
    stacked = draws.stacked(name)
    return stacked[(slice(None), slice(None)) + tuple(index)]


def psrf_of(values: np.ndarray, label: str = "parameter") -> float:
    """Split potential scale reduction for a (chains, draws) array."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValidationError("PSRF needs at least 2 chains")
    if values.shape[1] < 10:
        raise ValidationError("PSRF needs at least 10 draws per chain")
    half = values.shape[1] // 2
    halves = np.vstack([values[:, :half], values[:, -half:]])
    if np.any(np.var(halves, axis=1) == 0):
        logger.warning("PSRF for %s undefined: zero within-chain variance", label)
        return math.nan
    # sampling noise can push the estimate just under 1
    return max(1.0, float(az.rhat(values, method="split")))


def ess_of(values: np.ndarray, label: str = "parameter") -> float:
    """Effective sample size (initial monotone sequence) for (chains, draws)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    total = values.size
    if total < 100:
        raise ValidationError("ESS needs at least 100 draws")
    if np.all(np.var(values, axis=1) == 0):
        logger.warning("ESS for %s undefined: constant chain", label)
        return math.nan
    value = float(az.ess(values, method="mean"))
    return min(value, float(total))


def psrf(draws: PosteriorDraws, name: str, index: Sequence[int] = ()) -> float:
    return psrf_of(trace(draws, name, index), _param_label(name, index))


def ess(draws: PosteriorDraws, name: str, index: Sequence[int] = ()) -> float:
    return ess_of(trace(draws, name, index), _param_label(name, index))


def _param_label(name: str, index: Sequence[int]) -> str:
    if not index:
        return name
    return f"{name}[{','.join(str(i + 1) for i in index)}]"


@dataclass
class ChainDiagnostics:
    psrf: Dict[str, float] = field(default_factory=dict)
    ess: Dict[str, float] = field(default_factory=dict)
    note: Optional[str] = None

    def summary(self) -> Dict[str, Any]:
        """Mean and 97.5% quantile of PSRF; mean and 2.5/97.5% quantiles of ESS."""
        out: Dict[str, Any] = {}
        r = np.array([v for v in self.psrf.values() if np.isfinite(v)])
        e = np.array([v for v in self.ess.values() if np.isfinite(v)])
        if r.size:
            out["psrf_mean"] = float(r.mean())
            out["psrf_q975"] = float(np.quantile(r, 0.975))
            out["psrf_max"] = float(r.max())
        if e.size:
            out["ess_mean"] = float(e.mean())
            out["ess_q025"] = float(np.quantile(e, 0.025))
            out["ess_q975"] = float(np.quantile(e, 0.975))
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {
            "summary": self.summary(),
            "psrf": {k: _json_number(v) for k, v in self.psrf.items()},
            "ess": {k: _json_number(v) for k, v in self.ess.items()},
            "note": self.note,
        }


def _monitored_entries(draws: PosteriorDraws) -> List[Tuple[str, Tuple[int, ...]]]:
    entries: List[Tuple[str, Tuple[int, ...]]] = []
    for i in range(draws.n):
        for k in range(draws.K):
            entries.append(("xi", (i, k)))
    entries.append(("tau", ()))
    if not draws.model.standard:
        entries.extend(("alpha", (k,)) for k in range(draws.K))
    entries.append(("loglik", ()))
    return entries


def chain_diagnostics(draws: PosteriorDraws) -> ChainDiagnostics:
    """PSRF (when at least two chains) and ESS for scores, tau, alpha and the log-likelihood."""
    result = ChainDiagnostics()
    fixed = set()
    if draws.model.fixed_tau is not None:
        fixed.add("tau")
    entries = [e for e in _monitored_entries(draws) if e[0] not in fixed]
    if draws.n_chains < 2:
        result.note = "PSRF needs at least 2 chains"
    elif draws.n_snapshots < 10:
        result.note = "PSRF needs at least 10 snapshots per chain"
    if draws.n_chains * draws.n_snapshots < 100:
        result.note = (result.note + "; " if result.note else "") + "ESS needs at least 100 draws"
    for name, index in entries:
        label = _param_label(name, index)
        values = trace(draws, name, index)
        if draws.n_chains >= 2 and draws.n_snapshots >= 10:
            result.psrf[label] = psrf_of(values, label)
        if values.size >= 100:
            result.ess[label] = ess_of(values, label)
    return result


@dataclass
class ClusteringPosterior:
    dimension: int
    jplus: Histogram
    bayes_factor: BayesFactor
    sizes: List[ClusterSize]
    weights: List[Dict[str, float]]
    map: np.ndarray
    ppm: np.ndarray

    def to_dict(self, ppm_path: Optional[str] = None) -> Dict[str, Any]:
        return {
            "dimension": self.dimension,
            "jplus": self.jplus.to_dict(),
            "bayes_factor": self.bayes_factor.to_dict(),
            "sizes": [s.to_dict() for s in self.sizes if s.empty_probability < 1.0],
            "always_empty": [s.rank for s in self.sizes if s.empty_probability >= 1.0],
            "weights": self.weights,
            "map": self.map.tolist(),
            "ppm": ppm_path,
        }


def explore(
    draws: PosteriorDraws,
    prior_sims: int = DEFAULT_PRIOR_SIMS,
    seed: int = 0,
    Q: Optional[Sequence[float]] = None,
    alpha: Optional[float] = None,
) -> List[ClusteringPosterior]:
    """
    Clustering posterior of every eigendimension.

    ``Q`` lists per-dimension concentration bounds for the prior side of
    the Bayes factor (the last entry repeats); ``alpha`` fixes the
    concentration instead of drawing it.
    """
    streams = np.random.SeedSequence(int(seed)).spawn(draws.K)
    out = []
    for k in range(draws.K):
        rng = np.random.default_rng(streams[k])
        out.append(
            ClusteringPosterior(
                dimension=k + 1,
                jplus=jplus_counts(draws, k),
                bayes_factor=bayes_factor_single(
                    draws, k, draws.model, prior_sims, rng,
                    Q=Q[min(k, len(Q) - 1)] if Q else None, alpha=alpha,
                ),
                sizes=size_posteriors(draws, k),
                weights=weight_posteriors(draws, k),
                map=map_partition(draws, k),
                ppm=pairwise_probability_matrix(draws, k),
            )
        )
    return out


def _fmt(value: Any, spec: str = ".3f") -> str:
    if value is None:
        return "-"
    if isinstance(value, float) and not math.isfinite(value):
        return str(value)
    return format(value, spec)


def render_report(clustering: List[ClusteringPosterior], chains: ChainDiagnostics) -> str:
    lines = ["CLUSTERING BY EIGENDIMENSION", "=" * 60]
    lines.append(f"{'dim':>4} {'BF(J+=1)':>10} {'P(J+=1)':>9} {'prior':>9} {'modal J+':>9}")
    for cp in clustering:
        bf = cp.bayes_factor
        lines.append(
            f"{cp.dimension:>4} {_fmt(bf.value):>10} {_fmt(bf.posterior_single):>9} "
            f"{_fmt(bf.prior_single, '.4f'):>9} {int(cp.jplus.mode):>9}"
        )
        if bf.note:
            lines.append(f"     note: {bf.note}")
    for cp in clustering:
        lines.append("")
        lines.append(f"Dimension {cp.dimension}: occupied clusters")
        lines.append(f"{'rank':>6} {'P(empty)':>9} {'modal size':>11} {'weight':>8}")
        for size, weight in zip(cp.sizes, cp.weights):
            if size.empty_probability >= 1.0:
                continue
            lines.append(
                f"{size.rank:>6} {size.empty_probability:>9.3f} {_fmt(size.sizes.mode):>11} {weight['mean']:>8.3f}"
            )
    lines.append("")
    lines.append("CONVERGENCE")
    lines.append("=" * 60)
    summary = chains.summary()
    lines.append(f"PSRF mean: {_fmt(summary.get('psrf_mean'), '.4f')}   Q97.5: {_fmt(summary.get('psrf_q975'), '.4f')}")
    lines.append(
        f"ESS mean: {_fmt(summary.get('ess_mean'), '.0f')}   "
        f"Q2.5: {_fmt(summary.get('ess_q025'), '.0f')}   Q97.5: {_fmt(summary.get('ess_q975'), '.0f')}"
    )
    if chains.note:
        lines.append(f"note: {chains.note}")
    return "\n".join(lines) + "\n"


def save_diagnostics(
    directory: str | os.PathLike,
    clustering: List[ClusteringPosterior],
    chains: ChainDiagnostics,
    extra: Optional[Dict[str, Any]] = None,
) -> Path:
    """Write diagnostics.json, one ppm_k{k}.csv per dimension and report.txt."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    dims = []
    for cp in clustering:
        name = f"ppm_k{cp.dimension}.csv"
        save_matrix(cp.ppm, directory / name)
        dims.append(cp.to_dict(ppm_path=name))
    payload = {"dimensions": dims, "convergence": chains.to_dict(), **(extra or {})}
    write_json(directory / "diagnostics.json", payload)
    report = render_report(clustering, chains)
    (directory / "report.txt").write_text(report, encoding="utf-8")
    logger.info("Diagnostics written to %s", directory)
    return directory
