#!/usr/bin/env python3
"""
Functional data core

Domain types for curve ensembles observed on a common time grid, CSV
ingestion/emission and centring.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from errors import DatasetFormatError, DatasetParseError, DimensionError, ValidationError

logger = logging.getLogger(__name__)

MIN_TIME_POINTS = 4
MIN_CURVES = 2
LABEL_HEADER = "label"


def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class TimeGrid:
    """Ordered time stamps shared by every curve."""

    points: np.ndarray

    def __post_init__(self):
        pts = _frozen(np.ravel(self.points))
        if pts.size < MIN_TIME_POINTS:
            raise DimensionError(
                f"time grid needs at least {MIN_TIME_POINTS} points, got {pts.size}"
            )
        if not np.all(np.isfinite(pts)):
            raise ValidationError("time grid contains non-finite stamps")
        if np.any(np.diff(pts) <= 0):
            raise ValidationError("time grid must be strictly increasing")
        object.__setattr__(self, "points", pts)

    @classmethod
    def default(cls, length: int) -> "TimeGrid":
        return cls(np.arange(1, length + 1, dtype=float))

    def __len__(self) -> int:
        return int(self.points.size)

    @property
    def span(self) -> Tuple[float, float]:
        return float(self.points[0]), float(self.points[-1])


@dataclass(frozen=True)
class FunctionalDataset:
    """n curves (rows) observed at the T points of ``grid`` (columns)."""

    values: np.ndarray
    grid: TimeGrid
    labels: Optional[Tuple[str, ...]] = None

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 2:
            raise DimensionError(f"dataset must be a matrix, got {vals.ndim} dimensions")
        n, t = vals.shape
        if n < MIN_CURVES:
            raise DimensionError(f"dataset needs at least {MIN_CURVES} curves, got {n}")
        if t != len(self.grid):
            raise DimensionError(
                f"dataset has {t} columns but the time grid has {len(self.grid)} points"
            )
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            raise DatasetParseError("non-finite value", int(bad[0]) + 1, int(bad[1]) + 1)
        labels = self.labels
        if labels is not None:
            labels = tuple(str(x) for x in labels)
            if len(labels) != n:
                raise ValidationError(f"{len(labels)} labels for {n} curves")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def T(self) -> int:
        return int(self.values.shape[1])

    def curve_labels(self) -> List[str]:
        if self.labels is not None:
            return list(self.labels)
        return [f"curve_{i + 1}" for i in range(self.n)]

    def with_values(self, values: np.ndarray) -> "FunctionalDataset":
        return FunctionalDataset(values=values, grid=self.grid, labels=self.labels)


@dataclass(frozen=True)
class CenteredDataset:
    """Column-centred curves plus the mean curve that was removed."""

    values: np.ndarray
    mean_curve: np.ndarray
    grid: Optional[TimeGrid] = field(default=None, compare=False)

    def __post_init__(self):
        vals = _frozen(self.values)
        mean = _frozen(np.ravel(self.mean_curve))
        if vals.ndim != 2 or vals.shape[1] != mean.size:
            raise DimensionError(
                f"centred values {vals.shape} do not match mean curve of length {mean.size}"
            )
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mean_curve", mean)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def T(self) -> int:
        return int(self.values.shape[1])

    def restore(self) -> np.ndarray:
        """Add the mean curve back (the smoothed input)."""
        return self.values + self.mean_curve[None, :]


def center(dataset: FunctionalDataset) -> CenteredDataset:
    """Subtract the sample mean curve from every row."""
    mean_curve = dataset.values.mean(axis=0)
    centred = dataset.values - mean_curve[None, :]
    return CenteredDataset(values=centred, mean_curve=mean_curve, grid=dataset.grid)


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except (TypeError, ValueError):
        return False
    return True


def _read_cells(path: Path) -> np.ndarray:
    try:
        frame = pd.read_csv(
            path,
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
            encoding="utf-8",
        )
    except pd.errors.EmptyDataError as exc:
        raise DatasetFormatError(f"{path} is empty") from exc
    except pd.errors.ParserError as exc:
        raise DatasetFormatError(f"{path} has ragged rows: {exc}") from exc
    if frame.isna().to_numpy().any():
        row = int(np.argwhere(frame.isna().to_numpy())[0][0]) + 1
        raise DatasetFormatError(f"{path} has ragged rows (row {row} is short)")
    return frame.apply(lambda col: col.str.strip()).to_numpy(dtype=object)


def load_dataset(
    path: str | os.PathLike,
    fmt: str = "csv",
    header: Optional[bool] = None,
    labels: Optional[bool] = None,
) -> FunctionalDataset:
    """
    Read a rectangular table of curves.

    Args:
        path: CSV file, rows = curves, columns = time points
        fmt: only ``"csv"`` is supported
        header: first row holds time stamps; detected when None
        labels: first column holds curve identifiers; detected when None

    Returns:
        Validated FunctionalDataset; the grid defaults to 1..T without a header.
    """
    if fmt != "csv":
        raise ValidationError(f"unsupported dataset format: {fmt}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    cells = _read_cells(path)
    if cells.shape[0] == 0:
        raise DatasetFormatError(f"{path} has no rows")

    if header is None:
        header = any(not _is_number(c) for c in cells[0])
        if not header and _numeric_time_row(cells, 1 if labels else 0):
            logger.info("Treating the first row of %s as time stamps", path.name)
            header = True
    row0 = 1 if header else 0
    if labels is None:
        first_col = cells[row0:, 0]
        labels = any(not _is_number(c) for c in first_col) or bool(
            header and not _is_number(cells[0, 0])
        )
    col0 = 1 if labels else 0

    body = cells[row0:, col0:]
    if body.shape[0] == 0 or body.shape[1] == 0:
        raise DatasetFormatError(f"{path} has no numeric body")
    numeric = pd.DataFrame(body).apply(pd.to_numeric, errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(numeric)
    if bad.any():
        r, c = (int(x) for x in np.argwhere(bad)[0])
        raise DatasetParseError(
            f"non-numeric or non-finite value {body[r, c]!r} in {path.name}",
            row=r + row0 + 1,
            column=c + col0 + 1,
        )
    if numeric.shape[1] < MIN_TIME_POINTS:
        raise DimensionError(
            f"{path.name} has {numeric.shape[1]} time points; at least {MIN_TIME_POINTS} required"
        )

    grid = TimeGrid.default(numeric.shape[1])
    if header:
        stamps = cells[0, col0:]
        if all(_is_number(s) for s in stamps):
            grid = TimeGrid(np.array([float(s) for s in stamps]))
        else:
            logger.warning("Header of %s is not numeric; using time grid 1..T", path.name)
    curve_labels = tuple(str(x) for x in cells[row0:, 0]) if labels else None
    dataset = FunctionalDataset(values=numeric, grid=grid, labels=curve_labels)
    logger.info("Loaded %s: n=%s T=%s", path, dataset.n, dataset.T)
    return dataset


def _numeric_time_row(cells: np.ndarray, col0: int) -> bool:
    """True when row 0 is an even, increasing grid that no other row repeats."""
    if cells.shape[0] < 2 or cells.shape[1] - col0 < MIN_TIME_POINTS:
        return False
    try:
        rows = cells[:, col0:].astype(float)
    except ValueError:
        return False
    if not np.all(np.isfinite(rows[0])):
        return False
    steps = np.diff(rows[0])
    if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        return False
    for row in rows[1:]:
        other = np.diff(row)
        if np.all(np.isfinite(other)) and np.allclose(other, steps[0], rtol=1e-9, atol=0.0):
            return False
    return True


def save_dataset(dataset: FunctionalDataset, path: str | os.PathLike) -> Path:
    """Write ``dataset`` so that ``load_dataset`` reads back identical values."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        dataset.values,
        index=pd.Index(dataset.curve_labels(), name=LABEL_HEADER),
        columns=[format(t, ".17g") for t in dataset.grid.points],
    )
    frame.to_csv(path, float_format="%.17g", encoding="utf-8")
    return path


def save_matrix(values: np.ndarray, path: str | os.PathLike, columns: Optional[Sequence[str]] = None) -> Path:
    """Plain numeric matrix CSV (no labels) for plot-ready outputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.atleast_2d(values), columns=columns)
    frame.to_csv(path, index=False, header=columns is not None, float_format="%.17g")
    return path


def load_matrix(path: str | os.PathLike, header: bool = False) -> np.ndarray:
    frame = pd.read_csv(path, header=0 if header else None)
    return frame.to_numpy(dtype=float)
