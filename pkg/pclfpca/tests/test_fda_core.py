"""Unit tests for curve-table ingestion, emission and centring."""

import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from errors import DatasetFormatError, DatasetParseError, DimensionError, ValidationError
from fda_core import (
    FunctionalDataset,
    TimeGrid,
    center,
    load_dataset,
    load_matrix,
    save_dataset,
    save_matrix,
)


def _write(directory: str, name: str, text: str) -> Path:
    path = Path(directory) / name
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadDataset(unittest.TestCase):
    def test_header_and_labels_detected(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "curves.csv", "label,0.5,1,1.5,2\nA,1,2,3,4\nB,5,6,7,8\n")
            ds = load_dataset(path)
        self.assertEqual((ds.n, ds.T), (2, 4))
        self.assertEqual(ds.labels, ("A", "B"))
        np.testing.assert_array_equal(ds.grid.points, [0.5, 1.0, 1.5, 2.0])
        np.testing.assert_array_equal(ds.values[1], [5, 6, 7, 8])

    def test_bare_numeric_table_gets_default_grid(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "curves.csv", "1,2,3,4\n5,6,7,8\n")
            ds = load_dataset(path)
        self.assertIsNone(ds.labels)
        np.testing.assert_array_equal(ds.grid.points, [1, 2, 3, 4])
        self.assertEqual(ds.curve_labels(), ["curve_1", "curve_2"])

    def test_numeric_time_row_detected_as_header(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "curves.csv", "0.0,0.5,1.0,1.5\n1,2,3,4\n5,7,6,8\n")
            ds = load_dataset(path)
            forced = load_dataset(path, header=False)
        self.assertEqual(ds.n, 2)
        np.testing.assert_array_equal(ds.grid.points, [0.0, 0.5, 1.0, 1.5])
        np.testing.assert_array_equal(ds.values[0], [1, 2, 3, 4])
        self.assertEqual(forced.n, 3)
        np.testing.assert_array_equal(forced.grid.points, [1, 2, 3, 4])

    def test_zero_table_is_valid(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "zeros.csv", "0,0,0,0\n0,0,0,0\n")
            ds = load_dataset(path)
        self.assertEqual(float(np.abs(ds.values).sum()), 0.0)

    def test_non_numeric_cell_reports_position(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "bad.csv", "1,2,3,4\n5,6,7,8\n9,abc,11,12\n")
            with self.assertRaises(DatasetParseError) as ctx:
                load_dataset(path)
        self.assertEqual((ctx.exception.row, ctx.exception.column), (3, 2))
        self.assertIn("row 3, column 2", str(ctx.exception))

    def test_long_row_is_format_error(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "ragged.csv", "1,2,3,4\n5,6,7,8,9\n")
            with self.assertRaises(DatasetFormatError):
                load_dataset(path)

    def test_too_few_time_points(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "short.csv", "1,2,3\n4,5,6\n")
            with self.assertRaises(DimensionError):
                load_dataset(path)

    def test_empty_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = _write(tmp, "empty.csv", "")
            with self.assertRaises(DatasetFormatError):
                load_dataset(path)

    def test_missing_file(self):
        with self.assertRaises(FileNotFoundError):
            load_dataset("/nonexistent/curves.csv")

    def test_unsupported_format(self):
        with self.assertRaises(ValidationError):
            load_dataset("curves.parquet", fmt="parquet")

    def test_save_then_load_is_exact(self):
        rng = np.random.default_rng(3)
        ds = FunctionalDataset(values=rng.normal(size=(3, 5)), grid=TimeGrid(np.linspace(0, 1, 5)))
        with tempfile.TemporaryDirectory() as tmp:
            path = save_dataset(ds, Path(tmp) / "out.csv")
            back = load_dataset(path)
        np.testing.assert_array_equal(back.values, ds.values)
        np.testing.assert_array_equal(back.grid.points, ds.grid.points)
        self.assertEqual(back.labels, ("curve_1", "curve_2", "curve_3"))

    def test_matrix_round_trip_with_header(self):
        values = np.arange(6, dtype=float).reshape(2, 3) / 7.0
        with tempfile.TemporaryDirectory() as tmp:
            path = save_matrix(values, Path(tmp) / "m.csv", columns=["a", "b", "c"])
            back = load_matrix(path, header=True)
        np.testing.assert_array_equal(back, values)


class TestDomainTypes(unittest.TestCase):
    def test_grid_must_increase(self):
        with self.assertRaises(ValidationError):
            TimeGrid(np.array([1.0, 2.0, 2.0, 3.0]))

    def test_non_finite_value_rejected(self):
        values = np.ones((2, 4))
        values[1, 2] = np.nan
        with self.assertRaises(DatasetParseError) as ctx:
            FunctionalDataset(values=values, grid=TimeGrid.default(4))
        self.assertEqual((ctx.exception.row, ctx.exception.column), (2, 3))

    def test_single_curve_rejected(self):
        with self.assertRaises(DimensionError):
            FunctionalDataset(values=np.ones((1, 4)), grid=TimeGrid.default(4))

    def test_center_removes_column_means(self):
        rng = np.random.default_rng(0)
        ds = FunctionalDataset(values=rng.normal(3.0, 2.0, size=(10, 6)), grid=TimeGrid.default(6))
        centred = center(ds)
        np.testing.assert_allclose(centred.values.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(centred.restore(), ds.values, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
