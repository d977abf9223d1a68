"""Tabular ingestion, splitting, standardization and input-uncertainty specs."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

WINE_FEATURES = ["alcohol", "pH", "total sulfur dioxide", "sulphates", "volatile acidity"]
WINE_UNCERTAIN = ["alcohol", "volatile acidity"]
WINE_LABEL = "quality"

# Noise scale in units of the (training) feature standard deviation.
UNCERTAINTY_LEVELS = {"high": 1.0, "medium": 0.5, "low": 0.3, "none": 0.0}


class SchemaError(ValueError):
    """A requested column is absent from the CSV header."""


class ParseError(ValueError):
    """A cell could not be read as a number."""


class DegenerateFeatureError(ValueError):
    """A feature column has zero variance on the fitting split."""


def wine_csv_path() -> Path:
    """Path of the bundled UCI red-wine quality table (1599 rows, comma separated)."""
    return Path(str(resources.files("uncertain_attr") / "datasets" / "winequality-red.csv"))


@dataclass(frozen=True)
class RawTable:
    feature_names: list[str]
    rows: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.feature_names):
            raise ValueError("rows must be a 2-D array with one column per feature name")
        if self.labels.shape != (self.rows.shape[0],):
            raise ValueError("labels must have one entry per row")

    def __len__(self) -> int:
        return self.rows.shape[0]


@dataclass(frozen=True)
class Scaler:
    means: np.ndarray
    sds: np.ndarray
    feature_names: list[str]

    def __post_init__(self):
        if np.any(self.sds <= 0):
            raise ValueError("scaler standard deviations must be strictly positive")
        if not (len(self.means) == len(self.sds) == len(self.feature_names)):
            raise ValueError("scaler fields must have equal length")

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.sds + self.means

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(np.asarray(d["means"], float), np.asarray(d["sds"], float), list(d["feature_names"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass(frozen=True)
class StandardizedDataset:
    features: np.ndarray
    labels: np.ndarray
    scaler: Scaler
    feature_names: list[str]

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def index_of(self, name: str) -> int:
        try:
            return self.feature_names.index(name)
        except ValueError:
            raise ValueError(f"unknown feature {name!r}; known: {self.feature_names}") from None


@dataclass(frozen=True)
class UncertaintySpec:
    sigma: np.ndarray
    distribution: str = "gaussian"

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim != 1 or not np.all(np.isfinite(sigma)) or np.any(sigma < 0):
            raise ValueError("sigma must be a finite, nonnegative vector")
        if self.distribution != "gaussian":
            raise ValueError(f"unsupported noise distribution {self.distribution!r}")
        object.__setattr__(self, "sigma", sigma)

    @property
    def dim(self) -> int:
        return self.sigma.shape[0]

    @classmethod
    def zeros(cls, dim: int) -> "UncertaintySpec":
        return cls(np.zeros(dim))


def ingest(
    path: str | Path,
    feature_subset: Sequence[str] | None,
    label_name: str,
    delimiter: str = ",",
) -> RawTable:
    """Read a header-row CSV into a RawTable.

    Columns are reordered to ``feature_subset``; ``None`` selects every
    column except the label, in file order.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        if feature_subset is None:
            feature_subset = [h for h in header if h != label_name]
        wanted = list(feature_subset) + [label_name]
        for name in wanted:
            if name not in header:
                raise SchemaError(f"column {name!r} not found in {path}")
        idx = [header.index(name) for name in wanted]
        values = []
        for row_no, row in enumerate(reader):
            if not row:
                continue
            try:
                values.append([float(row[i]) for i in idx])
            except (ValueError, IndexError):
                raise ParseError(f"row {row_no}: non-numeric or missing cell in {path}") from None
    data = np.array(values, dtype=float).reshape(-1, len(wanted))
    if not np.all(np.isfinite(data)):
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise ParseError(f"row {bad}: non-finite value in {path}")
    if data.shape[0] < 2:
        raise ValueError(f"{path} needs at least 2 data rows, found {data.shape[0]}")
    return RawTable(list(feature_subset), data[:, :-1], data[:, -1])


def split(raw: RawTable, test_fraction: float, seed: int) -> tuple[RawTable, RawTable]:
    """Seeded shuffle then prefix cut: ceil(N * (1 - f)) training rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n = len(raw)
    n_train = int(np.ceil(n * (1.0 - test_fraction) - 1e-9))
    order = np.random.default_rng(seed).permutation(n)
    tr, te = np.sort(order[:n_train]), np.sort(order[n_train:])
    return (
        RawTable(raw.feature_names, raw.rows[tr], raw.labels[tr]),
        RawTable(raw.feature_names, raw.rows[te], raw.labels[te]),
    )


def fit_standardize(train: RawTable) -> tuple[Scaler, StandardizedDataset]:
    if len(train) < 2:
        raise ValueError("standardization needs at least 2 rows")
    means = train.rows.mean(axis=0)
    sds = train.rows.std(axis=0)
    for name, sd in zip(train.feature_names, sds):
        if not sd > 0:
            raise DegenerateFeatureError(f"feature {name!r} has zero variance")
    scaler = Scaler(means, sds, list(train.feature_names))
    return scaler, transform(scaler, train)


def transform(scaler: Scaler, table: RawTable) -> StandardizedDataset:
    if list(table.feature_names) != list(scaler.feature_names):
        raise ValueError("table columns do not match the scaler's features")
    z = (table.rows - scaler.means) / scaler.sds
    return StandardizedDataset(z, table.labels.copy(), scaler, list(table.feature_names))


def make_uncertainty_spec(
    level: str,
    uncertain_features: Sequence[str],
    dataset: StandardizedDataset,
) -> UncertaintySpec:
    """Gaussian noise of ``level`` training sds on the listed features only."""
    if level not in UNCERTAINTY_LEVELS:
        raise ValueError(f"unknown uncertainty level {level!r}; choose from {list(UNCERTAINTY_LEVELS)}")
    sigma = np.zeros(dataset.dim)
    for name in uncertain_features:
        # standardized units: one training sd is 1.0
        sigma[dataset.index_of(name)] = UNCERTAINTY_LEVELS[level]
    return UncertaintySpec(sigma)


def load_wine(test_fraction: float = 0.2, seed: int = 7, path: str | Path | None = None, delimiter: str = ","):
    """Convenience loader: (train, test) standardized wine splits on the default 5 features."""
    raw = ingest(path or wine_csv_path(), WINE_FEATURES, WINE_LABEL, delimiter=delimiter)
    tr, te = split(raw, test_fraction, seed)
    scaler, train = fit_standardize(tr)
    return train, transform(scaler, te)
