#!/usr/bin/env python3
"""
Synthetic curve ensembles with known structure

Three generating processes combine two orthonormal eigenfunctions with
clustered (Gaussian mixture) or spatially correlated (exponential Matern)
scores, then add white noise at a requested signal-to-noise ratio:

    dgp1  mixture in both dimensions (2 then 3 clusters, the first
          dimension-1 group split in two along dimension 2)
    dgp2  Matern in dimension 1, 3-cluster mixture in dimension 2
    dgp3  Matern in both dimensions (no clusters)
"""

from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy import linalg

from errors import DimensionError, NumericalError, ValidationError
from fda_core import FunctionalDataset, TimeGrid, load_dataset, load_matrix, save_dataset, save_matrix
from settings import clamp_threads, read_json, write_json

logger = logging.getLogger(__name__)

KINDS = ("dgp1", "dgp2", "dgp3")
JITTER = 1e-10

MIXTURE_2 = {"type": "mixture", "means": [-4.0, 4.0], "sds": [1.0, 1.0], "proportions": [0.5, 0.5]}
# labels come in blocks: the -4 group of MIXTURE_2 splits into -2 and +2, the +4 group sits at 0
MIXTURE_3 = {"type": "mixture", "means": [-2.0, 2.0, 0.0], "sds": [0.5, 0.5, 0.5], "proportions": [0.25, 0.25, 0.5]}
MATERN_1 = {"type": "matern", "rho": 0.9, "sigma2": 10.0}
MATERN_2 = {"type": "matern", "rho": 0.7, "sigma2": 5.0}

DEFAULT_SCORE_PARAMS = {
    "dgp1": [MIXTURE_2, MIXTURE_3],
    "dgp2": [MATERN_1, MIXTURE_3],
    "dgp3": [MATERN_1, MATERN_2],
}


def matern_half(d, rho: float, sigma2: float):
    """Exponential (smoothness 1/2) Matern covariance sigma2 * exp(-d / rho)."""
    return sigma2 * np.exp(-np.asarray(d, dtype=float) / rho)


def make_eigenfunctions(T: int, count: int = 2) -> np.ndarray:
    """
    ``count`` x ``T`` matrix of orthonormal (unit Euclidean norm) vectors.

    Templates are Gaussian-windowed sinusoids of increasing frequency,
    orthonormalised by modified Gram-Schmidt.
    """
    if count < 1 or count >= T:
        raise DimensionError(f"need 1 <= count < T, got count={count}, T={T}")
    t = np.linspace(0.0, 1.0, T)
    basis = np.empty((count, T))
    for k in range(count):
        centre = 0.35 + 0.3 * k / max(count, 2)
        window = np.exp(-((t - centre) ** 2) / (2 * 0.18**2))
        v = window * np.sin(2 * math.pi * (k + 1) * t + 0.25 * math.pi)
        scale = np.linalg.norm(v)
        for j in range(k):
            v = v - (basis[j] @ v) * basis[j]
        norm = np.linalg.norm(v)
        if norm < 1e-8 * scale:
            raise NumericalError(f"eigenfunction template {k + 1} is linearly dependent on earlier ones")
        basis[k] = v / norm
    return basis


@dataclass(frozen=True)
class DgpSpec:
    kind: str = "dgp1"
    n: int = 100
    T: int = 150
    stn: float = 6.0
    seed: int = 0
    score_params: Optional[List[Dict[str, Any]]] = None
    locations: str = "linspace"

    KEYS = ("kind", "n", "T", "stn", "seed", "score_params", "locations")

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "n", _whole("n", self.n, 2))
        object.__setattr__(self, "T", _whole("T", self.T, 4))
        try:
            stn = float(self.stn)
        except (TypeError, ValueError):
            raise ValidationError(f"stn must be a number, got {self.stn!r}") from None
        if not math.isfinite(stn) or stn <= 0:
            raise ValidationError(f"stn must be positive, got {self.stn}")
        object.__setattr__(self, "seed", _whole("seed", self.seed, 0))
        if self.locations != "linspace":
            raise ValidationError(f"unsupported curve locations {self.locations!r}")
        params = self.score_params or DEFAULT_SCORE_PARAMS[self.kind]
        object.__setattr__(self, "score_params", [_check_params(k, p) for k, p in enumerate(params)])

    @property
    def K(self) -> int:
        return len(self.score_params)

    def to_dict(self) -> Dict[str, Any]:
        return {key: getattr(self, key) for key in self.KEYS}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "DgpSpec":
        if not isinstance(data, dict):
            raise ValidationError("simulation spec must be an object")
        unknown = sorted(set(data) - set(cls.KEYS))
        if unknown:
            raise ValidationError(f"unknown simulation keys: {unknown}")
        data = dict(data)
        if isinstance(data.get("kind"), int) or str(data.get("kind", "")).isdigit():
            data["kind"] = f"dgp{data['kind']}"
        return cls(**data)


def _whole(name: str, value: Any, minimum: int) -> int:
    if isinstance(value, bool):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    try:
        number = int(value)
    except (TypeError, ValueError, OverflowError):
        raise ValidationError(f"{name} must be an integer, got {value!r}") from None
    if number != value and not (isinstance(value, str) and value.strip() == str(number)):
        raise ValidationError(f"{name} must be an integer, got {value!r}")
    if number < minimum:
        raise ValidationError(f"{name} must be at least {minimum}, got {value!r}")
    return number


def _check_params(k: int, params: Dict[str, Any]) -> Dict[str, Any]:
    kind = params.get("type")
    where = f"score_params[{k}]"
    if kind == "mixture":
        means = [float(x) for x in params.get("means", [])]
        sds = [float(x) for x in params.get("sds", [])]
        props = [float(x) for x in params.get("proportions", [])]
        if not means or not len(means) == len(sds) == len(props):
            raise ValidationError(f"{where}: means, sds and proportions must have equal non-zero length")
        if any(s <= 0 for s in sds) or any(p <= 0 for p in props):
            raise ValidationError(f"{where}: sds and proportions must be positive")
        if abs(sum(props) - 1.0) > 1e-9:
            raise ValidationError(f"{where}: proportions must sum to 1")
        return {"type": "mixture", "means": means, "sds": sds, "proportions": props}
    if kind == "matern":
        rho, sigma2 = float(params.get("rho", 0)), float(params.get("sigma2", 0))
        if rho <= 0 or sigma2 <= 0:
            raise ValidationError(f"{where}: rho and sigma2 must be positive")
        return {"type": "matern", "rho": rho, "sigma2": sigma2}
    raise ValidationError(f"{where}: type must be mixture or matern, got {kind!r}")


@dataclass
class SimulatedDataset:
    observed: FunctionalDataset
    truth: np.ndarray
    true_partitions: Dict[int, np.ndarray]
    true_scores: np.ndarray
    eigenfunctions_used: np.ndarray
    noise_sd: float
    spec: Optional[DgpSpec] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def empirical_stn(self) -> float:
        noise = self.observed.values - self.truth
        return float(np.var(self.truth) / np.var(noise))

    def save(self, directory: str | os.PathLike) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        grid = [format(t, ".17g") for t in self.observed.grid.points]
        save_dataset(self.observed, directory / "observed.csv")
        save_matrix(self.truth, directory / "truth.csv", columns=grid)
        save_matrix(self.true_scores, directory / "scores.csv",
                    columns=[f"xi_{k + 1}" for k in range(self.true_scores.shape[1])])
        save_matrix(self.eigenfunctions_used, directory / "eigenfunctions.csv", columns=grid)
        write_json(
            directory / "partitions.json",
            {str(k): [int(x) for x in v] for k, v in self.true_partitions.items()},
        )
        spec = self.spec.to_dict() if self.spec else {}
        write_json(directory / "spec.json", {**spec, "noise_sd": self.noise_sd, **self.extra})
        return directory

    @classmethod
    def load(cls, directory: str | os.PathLike) -> "SimulatedDataset":
        directory = Path(directory)
        for name in ("observed.csv", "truth.csv", "partitions.json"):
            if not (directory / name).exists():
                raise FileNotFoundError(f"missing {name} in {directory}")
        observed = load_dataset(directory / "observed.csv")
        partitions = {int(k): np.asarray(v, dtype=int) for k, v in read_json(directory / "partitions.json").items()}
        meta = read_json(directory / "spec.json") if (directory / "spec.json").exists() else {}
        noise_sd = float(meta.pop("noise_sd", math.nan))
        extra = {k: meta.pop(k) for k in list(meta) if k not in DgpSpec.KEYS}
        scores_path = directory / "scores.csv"
        phi_path = directory / "eigenfunctions.csv"
        return cls(
            observed=observed,
            truth=load_matrix(directory / "truth.csv", header=True),
            true_partitions=partitions,
            true_scores=load_matrix(scores_path, header=True) if scores_path.exists() else np.empty((observed.n, 0)),
            eigenfunctions_used=load_matrix(phi_path, header=True) if phi_path.exists() else np.empty((0, observed.T)),
            noise_sd=noise_sd,
            spec=DgpSpec.from_dict(meta) if meta else None,
            extra=extra,
        )


def _group_sizes(n: int, proportions: Sequence[float]) -> List[int]:
    sizes = [int(round(p * n)) for p in proportions[:-1]]
    sizes.append(n - sum(sizes))
    if min(sizes) < 1:
        raise DimensionError(f"n={n} is too small for mixture proportions {list(proportions)}")
    return sizes


def _mixture_scores(params: Dict[str, Any], n: int, rng: np.random.Generator):
    sizes = _group_sizes(n, params["proportions"])
    labels = np.repeat(np.arange(1, len(sizes) + 1), sizes)
    means = np.asarray(params["means"])[labels - 1]
    sds = np.asarray(params["sds"])[labels - 1]
    return means + sds * rng.standard_normal(n), labels


def matern_covariance(n: int, rho: float, sigma2: float) -> np.ndarray:
    """Covariance of n equally spaced curve locations on [0, 1]."""
    loc = np.linspace(0.0, 1.0, n)
    return matern_half(np.abs(loc[:, None] - loc[None, :]), rho, sigma2)


def _matern_scores(params: Dict[str, Any], n: int, rng: np.random.Generator) -> np.ndarray:
    cov = matern_covariance(n, params["rho"], params["sigma2"])
    cov[np.diag_indices(n)] += JITTER * params["sigma2"]
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(
            f"Matern covariance (rho={params['rho']}, sigma2={params['sigma2']}) is not positive definite"
        ) from exc
    return chol @ rng.standard_normal(n)


def generate(spec: DgpSpec, seed_sequence: Optional[np.random.SeedSequence] = None) -> SimulatedDataset:
    """Draw one dataset; ``seed_sequence`` overrides ``spec.seed``."""
    rng = np.random.default_rng(seed_sequence if seed_sequence is not None else np.random.SeedSequence(int(spec.seed)))
    n, T = int(spec.n), int(spec.T)
    phi = make_eigenfunctions(T, spec.K)
    scores = np.empty((n, spec.K))
    partitions: Dict[int, np.ndarray] = {}
    for k, params in enumerate(spec.score_params):
        if params["type"] == "mixture":
            scores[:, k], partitions[k + 1] = _mixture_scores(params, n, rng)
        else:
            scores[:, k] = _matern_scores(params, n, rng)
            partitions[k + 1] = np.empty(0, dtype=int)

    truth = scores @ phi
    signal_var = float(np.var(truth))
    if signal_var <= 0:
        raise NumericalError("simulated signal has zero variance")
    noise_sd = math.sqrt(signal_var / float(spec.stn))
    observed = truth + noise_sd * rng.standard_normal((n, T))
    dataset = FunctionalDataset(values=observed, grid=TimeGrid.default(T))
    logger.debug("Generated %s: n=%s T=%s noise_sd=%.4g", spec.kind, n, T, noise_sd)
    return SimulatedDataset(
        observed=dataset,
        truth=truth,
        true_partitions=partitions,
        true_scores=scores,
        eigenfunctions_used=phi,
        noise_sd=noise_sd,
        spec=spec,
    )


def replicate_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(index)])


def replicate_dir(root: Path, index: int) -> Path:
    return root / f"rep-{index + 1:03d}"


def write_replicates(spec: DgpSpec, count: int, out_dir: str | os.PathLike, threads: Optional[int] = None) -> List[Path]:
    """Generate ``count`` replicates into rep-001, rep-002, ... under ``out_dir``."""
    if int(count) < 1:
        raise ValidationError(f"replicates must be positive, got {count}")
    root = Path(out_dir)
    paths: List[Optional[Path]] = [None] * count

    def job(index: int) -> Path:
        data = generate(spec, replicate_seed(spec.seed, index))
        data.extra["replicate"] = index + 1
        return data.save(replicate_dir(root, index))

    with ThreadPoolExecutor(max_workers=min(count, clamp_threads(threads))) as pool:
        futures = {pool.submit(job, idx): idx for idx in range(count)}
        for future in as_completed(futures):
            paths[futures[future]] = future.result()
    logger.info("Wrote %s replicates of %s to %s", count, spec.kind, root)
    return [p for p in paths if p is not None]
