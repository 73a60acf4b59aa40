#!/usr/bin/env python3
"""
Smoothing and functional PCA

Cubic B-spline least-squares smoothing of raw curves followed by an
eigendecomposition of the sample covariance of the smoothed, centred curves.
The resulting basis is treated as fixed by the sampler.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
from scipy.interpolate import BSpline

from errors import DimensionError, NumericalError, ValidationError
from fda_core import CenteredDataset, FunctionalDataset, TimeGrid
from settings import read_json, write_json

logger = logging.getLogger(__name__)

BASIS_SCHEMA_VERSION = 1
MAX_DEFAULT_BASIS = 25
RANK_TOLERANCE = 1e-10


@dataclass(frozen=True)
class BSplineBasis:
    """B-spline basis with equally spaced interior knots evaluated on a grid."""

    order: int
    knots: np.ndarray
    n_basis: int
    design_matrix: np.ndarray

    @property
    def interior_knots(self) -> np.ndarray:
        k = self.order
        return self.knots[k:-k]

    @classmethod
    def build(cls, grid: TimeGrid, n_basis: Optional[int] = None, order: int = 4) -> "BSplineBasis":
        """
        Args:
            grid: evaluation grid
            n_basis: number of basis functions; default min(T // 2, 25)
            order: spline order (4 = cubic)
        """
        T = len(grid)
        if n_basis is None:
            n_basis = max(order, min(T // 2, MAX_DEFAULT_BASIS))
        if order < 1:
            raise ValidationError(f"spline order must be positive, got {order}")
        if n_basis < order:
            raise ValidationError(f"n_basis={n_basis} is below the spline order {order}")
        if n_basis > T:
            raise DimensionError(f"n_basis={n_basis} exceeds the {T} grid points")

        lo, hi = grid.span
        n_interior = n_basis - order
        interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
        knots = np.concatenate([np.repeat(lo, order), interior, np.repeat(hi, order)])
        design = BSpline.design_matrix(grid.points, knots, order - 1).toarray()

        rank = np.linalg.matrix_rank(design)
        if rank < n_basis:
            raise NumericalError(
                f"B-spline design matrix is rank deficient ({rank} < {n_basis}) for "
                f"order {order} with {n_interior} interior knots on [{lo:g}, {hi:g}]; "
                "some knot intervals contain too few grid points"
            )
        logger.debug("B-spline basis: order=%s n_basis=%s interior knots=%s", order, n_basis, n_interior)
        design.setflags(write=False)
        knots.setflags(write=False)
        return cls(order=order, knots=knots, n_basis=n_basis, design_matrix=design)

    def hat_matrix(self) -> np.ndarray:
        """Orthogonal projector onto the span of the basis columns."""
        q, _ = np.linalg.qr(self.design_matrix)
        return q @ q.T


def smooth(dataset: FunctionalDataset, basis: BSplineBasis) -> FunctionalDataset:
    """Least-squares projection of every curve onto the spline span."""
    if basis.design_matrix.shape[0] != dataset.T:
        raise DimensionError(
            f"basis evaluated on {basis.design_matrix.shape[0]} points, dataset has {dataset.T}"
        )
    if basis.n_basis > dataset.T:
        raise DimensionError(f"n_basis={basis.n_basis} exceeds T={dataset.T}")
    fitted = dataset.values @ basis.hat_matrix()
    return dataset.with_values(fitted)


@dataclass(frozen=True)
class RetainRule:
    """How many eigendimensions to keep."""

    kind: str = "threshold"
    fraction: Optional[float] = 0.95
    count: Optional[int] = None
    share: Optional[float] = None

    KINDS = ("threshold", "fixed", "threshold_and_min_share")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValidationError(f"retain rule must be one of {self.KINDS}, got {self.kind!r}")
        if self.kind == "fixed":
            if self.count is None or int(self.count) < 1:
                raise ValidationError("fixed retain rule needs a positive count")
        else:
            if self.fraction is None or not 0 < float(self.fraction) <= 1:
                raise ValidationError("retain fraction must lie in (0, 1]")
        if self.kind == "threshold_and_min_share":
            if self.share is None or not 0 < float(self.share) < 1:
                raise ValidationError("retain share must lie in (0, 1)")

    @classmethod
    def threshold(cls, fraction: float) -> "RetainRule":
        return cls(kind="threshold", fraction=fraction)

    @classmethod
    def fixed(cls, count: int) -> "RetainRule":
        return cls(kind="fixed", fraction=None, count=int(count))

    @classmethod
    def threshold_and_min_share(cls, fraction: float, share: float) -> "RetainRule":
        return cls(kind="threshold_and_min_share", fraction=fraction, share=share)

    def to_dict(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"rule": self.kind}
        if self.kind == "fixed":
            out["count"] = int(self.count)
        else:
            out["fraction"] = float(self.fraction)
        if self.kind == "threshold_and_min_share":
            out["share"] = float(self.share)
        return out

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RetainRule":
        if not isinstance(data, dict):
            raise ValidationError("retain must be an object")
        unknown = set(data) - {"rule", "fraction", "count", "share"}
        if unknown:
            raise ValidationError(f"unknown retain keys: {sorted(unknown)}")
        kind = data.get("rule", "threshold")
        if kind == "fixed":
            return cls.fixed(data.get("count", 0))
        if kind == "threshold_and_min_share":
            return cls.threshold_and_min_share(data.get("fraction", 0.85), data.get("share", 0.10))
        return cls(kind=kind, fraction=data.get("fraction", 0.95))

    def choose(self, shares: np.ndarray) -> int:
        """Number of components to keep given explained-variance shares."""
        available = int(shares.size)
        if self.kind == "fixed":
            if self.count > available:
                raise DimensionError(
                    f"covariance rank {available} is below the requested K={self.count}"
                )
            return int(self.count)
        if available == 0:
            raise DimensionError("covariance has rank 0; no eigendimension can be retained")
        cumulative = np.cumsum(shares)
        k = int(np.searchsorted(cumulative, float(self.fraction) - 1e-12) + 1)
        k = min(k, available)
        if self.kind == "threshold_and_min_share":
            big = int(np.argmin(shares >= self.share)) if np.any(shares < self.share) else available
            if big < k:
                logger.warning(
                    "Only %s components exceed a %.0f%% share; they explain %.1f%% (target %.0f%%)",
                    big,
                    100 * self.share,
                    100 * cumulative[big - 1] if big else 0.0,
                    100 * self.fraction,
                )
            k = max(1, min(k, big))
        return k


@dataclass(frozen=True)
class FpcaBasis:
    """Mean curve, K orthonormal eigenvectors, eigenvalues and empirical scores."""

    mean_curve: np.ndarray
    eigenfunctions: np.ndarray
    eigenvalues: np.ndarray
    scores: np.ndarray
    total_variance: float
    provenance: Dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def K(self) -> int:
        return int(self.eigenvalues.size)

    @property
    def T(self) -> int:
        return int(self.mean_curve.size)

    @property
    def explained(self) -> np.ndarray:
        if self.total_variance <= 0:
            return np.zeros_like(self.eigenvalues)
        return self.eigenvalues / self.total_variance

    def to_dict(self) -> Dict[str, Any]:
        return {
            "schema_version": BASIS_SCHEMA_VERSION,
            "K": self.K,
            "mean_curve": self.mean_curve.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "eigenfunctions": self.eigenfunctions.tolist(),
            "scores": self.scores.tolist(),
            "total_variance": float(self.total_variance),
            "provenance": dict(self.provenance),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FpcaBasis":
        version = int(data.get("schema_version", 0))
        if version != BASIS_SCHEMA_VERSION:
            raise ValidationError(f"unsupported basis schema version {version}")
        basis = cls(
            mean_curve=np.asarray(data["mean_curve"], dtype=float),
            eigenfunctions=np.atleast_2d(np.asarray(data["eigenfunctions"], dtype=float)),
            eigenvalues=np.asarray(data["eigenvalues"], dtype=float),
            scores=np.asarray(data["scores"], dtype=float).reshape(-1, int(data["K"])),
            total_variance=float(data["total_variance"]),
            provenance=dict(data.get("provenance") or {}),
        )
        if basis.K != int(data["K"]):
            raise ValidationError("basis K does not match its eigenvalues")
        return basis

    def save(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        write_json(path, self.to_dict())
        return path

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FpcaBasis":
        return cls.from_dict(read_json(Path(path)))


def _fix_sign(vectors: np.ndarray) -> np.ndarray:
    """Flip rows so the entry of largest magnitude is positive."""
    idx = np.argmax(np.abs(vectors), axis=1)
    signs = np.sign(vectors[np.arange(vectors.shape[0]), idx])
    signs[signs == 0] = 1.0
    return vectors * signs[:, None]


def decompose(
    centered: CenteredDataset,
    retain: RetainRule = RetainRule(),
    provenance: Optional[Dict[str, Any]] = None,
) -> FpcaBasis:
    """
    Eigendecomposition of the T x T sample covariance (divisor n - 1).

    Eigenvectors have unit Euclidean norm and the sign convention of
    ``_fix_sign``; scores are the projections of the centred curves.
    """
    Y = centered.values
    n = Y.shape[0]
    cov = Y.T @ Y / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    total = float(np.trace(cov))

    scale = max(float(evals[0]), 0.0) if evals.size else 0.0
    positive = evals > RANK_TOLERANCE * max(scale, np.finfo(float).tiny)
    if scale <= 0:
        positive[:] = False
    rank = int(np.sum(positive))
    shares = evals[:rank] / total if total > 0 else np.zeros(0)

    K = retain.choose(shares)
    phi = _fix_sign(evecs[:, :K].T.copy())
    scores = Y @ phi.T
    meta = dict(provenance or {})
    meta["retain"] = retain.to_dict()
    meta["rank"] = rank
    logger.info(
        "Retained K=%s eigendimensions explaining %.1f%% of the variance",
        K,
        100 * float(np.sum(shares[:K])) if total > 0 else 0.0,
    )
    return FpcaBasis(
        mean_curve=np.array(centered.mean_curve, copy=True),
        eigenfunctions=phi,
        eigenvalues=evals[:K].copy(),
        scores=scores,
        total_variance=total,
        provenance=meta,
    )


def reconstruct_from_scores(basis: FpcaBasis, scores: np.ndarray) -> np.ndarray:
    """Row i = mean_curve + sum_k scores[i, k] * phi_k."""
    scores = np.atleast_2d(np.asarray(scores, dtype=float))
    if scores.shape[1] != basis.K:
        raise ValidationError(f"scores have {scores.shape[1]} columns, basis has K={basis.K}")
    return basis.mean_curve[None, :] + scores @ basis.eigenfunctions


def prepare(
    dataset: FunctionalDataset,
    n_basis: Optional[int] = None,
    order: int = 4,
    retain: RetainRule = RetainRule(),
) -> tuple[FunctionalDataset, CenteredDataset, FpcaBasis]:
    """Smooth, centre and decompose in pipeline order."""
    from fda_core import center

    spline = BSplineBasis.build(dataset.grid, n_basis=n_basis, order=order)
    smoothed = smooth(dataset, spline)
    centred = center(smoothed)
    basis = decompose(
        centred,
        retain,
        provenance={"n_basis": spline.n_basis, "order": spline.order, "n": dataset.n, "T": dataset.T},
    )
    return smoothed, centred, basis
