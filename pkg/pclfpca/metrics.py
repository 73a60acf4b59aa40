"""Reconstruction and clustering accuracy metrics."""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.metrics import adjusted_rand_score

from errors import DimensionError, ValidationError
from settings import write_json

logger = logging.getLogger(__name__)

CORRELATION_ESTIMATOR = "pearson correlation across time of the posterior-mean reconstructed curves"


def _same_shape(estimate: np.ndarray, truth: np.ndarray) -> tuple:
    estimate = np.asarray(estimate, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if estimate.shape != truth.shape:
        raise DimensionError(f"estimate shape {estimate.shape} does not match truth {truth.shape}")
    return estimate, truth


def imse(estimate: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-curve mean over time of the squared error."""
    estimate, truth = _same_shape(estimate, truth)
    return np.mean((estimate - truth) ** 2, axis=1)


def curve_correlations(curves: np.ndarray) -> np.ndarray:
    """Pearson correlation between every pair of rows."""
    curves = np.asarray(curves, dtype=float)
    sd = curves.std(axis=1)
    flat = np.flatnonzero(sd == 0)
    if flat.size:
        raise ValidationError(f"correlation undefined: curve {int(flat[0]) + 1} has zero variance")
    return np.corrcoef(curves)


def correlation_error(estimate: np.ndarray, truth: np.ndarray, normalized: bool = False) -> float:
    """
    Euclidean norm of the difference between estimated and true pairwise
    correlations (pairs i < i'). ``normalized`` divides by the square root
    of the pair count (root-mean error).
    """
    estimate, truth = _same_shape(estimate, truth)
    upper = np.triu_indices(estimate.shape[0], k=1)
    diff = curve_correlations(estimate)[upper] - curve_correlations(truth)[upper]
    norm = float(np.linalg.norm(diff))
    if normalized:
        return norm / math.sqrt(diff.size) if diff.size else 0.0
    return norm


def ari(partition_a: Sequence[int], partition_b: Sequence[int]) -> float:
    a = np.asarray(partition_a)
    b = np.asarray(partition_b)
    if a.shape != b.shape or a.ndim != 1:
        raise DimensionError(f"partitions of different lengths: {a.size} and {b.size}")
    return float(adjusted_rand_score(a, b))


def adjacency(partition: Sequence[int]) -> np.ndarray:
    """Binary co-membership matrix of a partition."""
    labels = np.asarray(partition)
    return (labels[:, None] == labels[None, :]).astype(float)


def complement_adjacency(truth: np.ndarray) -> np.ndarray:
    """Off-diagonal 0/1 entries flipped, unit diagonal kept."""
    out = 1.0 - np.asarray(truth, dtype=float)
    np.fill_diagonal(out, 1.0)
    return out


def _check_square(name: str, matrix: np.ndarray, n: int) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape != (n, n):
        raise DimensionError(f"{name} has shape {matrix.shape}, expected ({n}, {n})")
    if not np.allclose(matrix, matrix.T):
        raise ValidationError(f"{name} is not symmetric")
    return matrix


def cii(ppm_new: np.ndarray, ppm_std: np.ndarray, truth_adjacency: np.ndarray) -> float:
    """
    Relative reduction of the Frobenius distance to the true co-membership
    matrix achieved by ``ppm_new`` over ``ppm_std``. NaN when ``ppm_std``
    already equals the truth.
    """
    truth = np.asarray(truth_adjacency, dtype=float)
    n = truth.shape[0]
    truth = _check_square("truth adjacency", truth, n)
    if not np.all(np.isin(truth, (0.0, 1.0))) or not np.all(np.diag(truth) == 1.0):
        raise ValidationError("truth adjacency must be binary with a unit diagonal")
    new = _check_square("ppm_new", ppm_new, n)
    std = _check_square("ppm_std", ppm_std, n)
    base = float(np.linalg.norm(std - truth))
    if base == 0.0:
        logger.warning("CII undefined: the baseline PPM already equals the true partition")
        return math.nan
    return (base - float(np.linalg.norm(new - truth))) / base


def cii_lower_bound(ppm_std: np.ndarray, truth_adjacency: np.ndarray) -> float:
    """CII of the worst possible PPM (the complement of the truth)."""
    return cii(complement_adjacency(truth_adjacency), ppm_std, truth_adjacency)


def standard_ppm(n: int) -> np.ndarray:
    """PPM of the single-cluster model."""
    return np.ones((n, n))


def improvement_report(metric_new: Sequence[float], metric_baseline: Sequence[float]) -> Dict[str, Any]:
    """Per-curve percentage improvement over a baseline with its summary."""
    new = np.asarray(metric_new, dtype=float)
    base = np.asarray(metric_baseline, dtype=float)
    if new.shape != base.shape:
        raise DimensionError(f"{new.size} values against {base.size} baseline values")
    zero = np.flatnonzero(base <= 0)
    if zero.size:
        raise ValidationError(f"baseline metric of curve {int(zero[0]) + 1} is not positive")
    pct = 100.0 * (base - new) / base
    q25, q50, q75 = np.quantile(pct, [0.25, 0.5, 0.75])
    return {
        "per_curve": pct.tolist(),
        "median": float(q50),
        "q25": float(q25),
        "q75": float(q75),
        "iqr": float(q75 - q25),
        "fraction_improved": float(np.mean(pct > 0)),
    }


@dataclass
class MetricReport:
    imse: np.ndarray
    correlation_l2: Optional[float] = None
    correlation_rms: Optional[float] = None
    ari: Dict[int, Optional[float]] = field(default_factory=dict)
    cii: Dict[int, Optional[float]] = field(default_factory=dict)
    improvement: Optional[Dict[str, Any]] = None
    baseline: Optional[str] = None
    baseline_imse: Optional[np.ndarray] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        def clean(value):
            if value is None or (isinstance(value, float) and math.isnan(value)):
                return None
            return value

        return {
            "imse": {
                "per_curve": self.imse.tolist(),
                "mean": float(np.mean(self.imse)),
                "median": float(np.median(self.imse)),
            },
            "correlation": {
                "l2": clean(self.correlation_l2),
                "rms": clean(self.correlation_rms),
                "estimator": CORRELATION_ESTIMATOR,
            },
            "ari": {str(k): clean(v) for k, v in self.ari.items()},
            "cii": {str(k): clean(v) for k, v in self.cii.items()},
            "baseline": self.baseline,
            "improvement": self.improvement,
            "notes": list(self.notes),
        }

    def to_frame(self, labels: Optional[Sequence[str]] = None) -> pd.DataFrame:
        frame = pd.DataFrame({"curve": list(labels) if labels else range(1, self.imse.size + 1), "imse": self.imse})
        if self.baseline_imse is not None:
            frame["baseline_imse"] = self.baseline_imse
        if self.improvement is not None:
            frame["improvement_pct"] = self.improvement["per_curve"]
        return frame

    def save(self, directory: str | os.PathLike, labels: Optional[Sequence[str]] = None) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_json(directory / "metrics.json", self.to_dict())
        self.to_frame(labels).to_csv(directory / "metrics_curves.csv", index=False, float_format="%.17g")
        if self.improvement is not None:
            write_json(directory / "improvement.json", {"baseline": self.baseline, **self.improvement})
        logger.info("Metrics written to %s", directory)
        return directory


def evaluate(
    estimate: np.ndarray,
    truth: np.ndarray,
    map_partitions: Optional[Dict[int, np.ndarray]] = None,
    true_partitions: Optional[Dict[int, np.ndarray]] = None,
    ppms: Optional[Dict[int, np.ndarray]] = None,
    baseline_ppms: Optional[Dict[int, np.ndarray]] = None,
    baseline_estimate: Optional[np.ndarray] = None,
    baseline: Optional[str] = None,
) -> MetricReport:
    """
    Build a MetricReport. Dimensions are keyed 1..K; clustering metrics are
    computed only for dimensions with a non-empty true partition.
    """
    report = MetricReport(imse=imse(estimate, truth))
    try:
        report.correlation_l2 = correlation_error(estimate, truth)
        report.correlation_rms = correlation_error(estimate, truth, normalized=True)
    except ValidationError as exc:
        report.notes.append(str(exc))
        logger.warning("%s", exc)

    for k, partition in (true_partitions or {}).items():
        partition = np.asarray(partition)
        if partition.size == 0:
            continue
        if map_partitions and k in map_partitions:
            report.ari[k] = ari(map_partitions[k], partition)
        if ppms and k in ppms:
            std = (baseline_ppms or {}).get(k)
            if std is None:
                std = standard_ppm(partition.size)
            value = cii(ppms[k], std, adjacency(partition))
            report.cii[k] = value
            if math.isnan(value):
                report.notes.append(f"CII undefined in dimension {k}: baseline PPM equals the truth")

    if baseline_estimate is not None:
        report.baseline = baseline or "baseline"
        report.baseline_imse = imse(baseline_estimate, truth)
        report.improvement = improvement_report(report.imse, report.baseline_imse)
    return report
