"""
Dataset ingestion and preprocessing.

1. Load a CSV of sensor readings (missing cells imputed by column mean)
2. Fit Min-Max extrema on the training split only
3. Rescale any split into [0, 1] with the training extrema
4. Split with a seeded permutation
5. Generate synthetic stand-ins for the water-quality and BUS14 applications
"""

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from .config import DATA_DEFAULTS
from .exceptions import (
    AllMissingColumnError,
    ArtifactIOError,
    DatasetFileNotFoundError,
    DatasetValidationError,
    LabelRangeError,
    MissingColumnError,
    ShapeError,
    SplitError,
    UnparseableCellError,
    ValidationError,
)
from .utils import make_rng

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature matrix with integer class labels."""
    features: np.ndarray  # n x d, float64
    labels: np.ndarray  # n, int64
    feature_names: Tuple[str, ...]
    num_classes: int
    row_ids: Optional[np.ndarray] = None  # source row of each sample

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, copy=True)
        if features.ndim != 2:
            raise DatasetValidationError(f"features must be a 2-D matrix, got {features.ndim}-D")
        n, d = features.shape
        if n < 1 or d < 1:
            raise DatasetValidationError(f"dataset must have n >= 1 and d >= 1, got {n} x {d}")
        if labels.shape != (n,):
            raise DatasetValidationError(f"expected {n} labels, got shape {labels.shape}")
        if labels.dtype.kind == "f":
            if not np.all(np.isfinite(labels)) or np.any(labels != np.round(labels)):
                raise LabelRangeError("labels must be integers")
        elif labels.dtype.kind not in "iu":
            raise LabelRangeError(f"labels must be integers, got dtype {labels.dtype}")
        labels = labels.astype(np.int64)
        if self.num_classes < 2:
            raise DatasetValidationError(f"num_classes must be >= 2, got {self.num_classes}")
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            bad = labels[(labels < 0) | (labels >= self.num_classes)][0]
            raise LabelRangeError(f"label {bad} outside [0, {self.num_classes})")
        if not np.all(np.isfinite(features)):
            raise DatasetValidationError("features contain NaN or Inf")
        names = tuple(str(name) for name in self.feature_names)
        if len(names) != d:
            raise DatasetValidationError(f"expected {d} feature names, got {len(names)}")

        row_ids = np.arange(n, dtype=np.int64) if self.row_ids is None else np.asarray(self.row_ids, dtype=np.int64)
        if row_ids.shape != (n,):
            raise DatasetValidationError(f"expected {n} row ids, got shape {row_ids.shape}")

        for array in (features, labels, row_ids):
            array.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices: np.ndarray) -> "Dataset":
        """Subset of rows, keeping their source row ids."""
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            features=self.features[indices],
            labels=self.labels[indices],
            feature_names=self.feature_names,
            num_classes=self.num_classes,
            row_ids=self.row_ids[indices],
        )

    def with_features(self, features: np.ndarray) -> "Dataset":
        return Dataset(
            features=features,
            labels=self.labels,
            feature_names=self.feature_names,
            num_classes=self.num_classes,
            row_ids=self.row_ids,
        )


@dataclass(frozen=True, eq=False)
class NormalizationParams:
    """Per-feature extrema of the training split."""
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        minimum = np.array(self.minimum, dtype=np.float64, copy=True)
        maximum = np.array(self.maximum, dtype=np.float64, copy=True)
        if minimum.ndim != 1 or minimum.shape != maximum.shape:
            raise ShapeError("minimum and maximum must be vectors of equal length")
        if np.any(minimum > maximum):
            raise ValidationError("every minimum must be <= its maximum")
        minimum.setflags(write=False)
        maximum.setflags(write=False)
        object.__setattr__(self, "minimum", minimum)
        object.__setattr__(self, "maximum", maximum)

    @property
    def n_features(self) -> int:
        return self.minimum.shape[0]


@dataclass(frozen=True)
class SplitSpec:
    fractions: Tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        fractions = tuple(float(f) for f in self.fractions)
        if not fractions:
            raise SplitError("at least one fraction is required")
        if any(not np.isfinite(f) or f <= 0 for f in fractions):
            raise SplitError(f"every fraction must be > 0, got {list(fractions)}")
        if abs(sum(fractions) - 1.0) > 1e-9:
            raise SplitError(f"fractions must sum to 1, got {sum(fractions)!r}")
        object.__setattr__(self, "fractions", fractions)


class SyntheticKind(str, Enum):
    WATER_LIKE = "water_like"
    BUS14_LIKE = "bus14_like"


# ----------------------------
# CSV INGESTION
# ----------------------------

def load_csv(
    path: PathLike,
    label_column: str,
    num_classes: int = DATA_DEFAULTS["num_classes"],
    impute: bool = DATA_DEFAULTS["impute_missing"],
) -> Dataset:
    """
    Load a CSV file with a header row into a Dataset.

    Missing feature cells (empty or "NA") are replaced by the mean of the
    observed values in their column. With impute=False rows that contain a
    missing feature are dropped instead. Row order is preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetFileNotFoundError(path)

    try:
        frame = pd.read_csv(
            path,
            dtype=str,
            keep_default_na=False,
            na_values=DATA_DEFAULTS["missing_markers"],
            skipinitialspace=True,
        )
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ArtifactIOError(f"cannot read CSV ({e})", path) from e

    if label_column not in frame.columns:
        raise MissingColumnError(label_column, path)

    feature_names = [name for name in frame.columns if name != label_column]
    if not feature_names:
        raise DatasetValidationError(f"{path}: no feature columns besides '{label_column}'")

    label_cells = frame[label_column]
    labels = _parse_numeric_column(label_cells, label_column)
    if np.any(np.isnan(labels)):
        row = int(np.flatnonzero(np.isnan(labels))[0])
        raise LabelRangeError(f"missing label in row {row}")
    if np.any(labels != np.round(labels)):
        row = int(np.flatnonzero(labels != np.round(labels))[0])
        raise LabelRangeError(f"label '{label_cells.iloc[row]}' in row {row} is not an integer")
    labels = labels.astype(np.int64)
    out_of_range = (labels < 0) | (labels >= num_classes)
    if np.any(out_of_range):
        row = int(np.flatnonzero(out_of_range)[0])
        raise LabelRangeError(f"label {labels[row]} in row {row} outside [0, {num_classes})")

    features = np.column_stack([_parse_numeric_column(frame[name], name) for name in feature_names])
    missing = np.isnan(features)
    row_ids = np.arange(features.shape[0], dtype=np.int64)

    if missing.any():
        for j, name in enumerate(feature_names):
            if missing[:, j].all():
                raise AllMissingColumnError(name)
        if impute:
            column_means = np.nanmean(features, axis=0)
            rows, cols = np.nonzero(missing)
            features[rows, cols] = column_means[cols]
            logger.info(f"Imputed {len(rows)} missing cells in {path.name}")
        else:
            keep = ~missing.any(axis=1)
            logger.info(f"Dropped {int((~keep).sum())} rows with missing cells in {path.name}")
            features, labels, row_ids = features[keep], labels[keep], row_ids[keep]

    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(feature_names),
        num_classes=num_classes,
        row_ids=row_ids,
    )


def _parse_numeric_column(cells: pd.Series, name: str) -> np.ndarray:
    """Parse a string column to float64, NaN for missing cells."""
    values = pd.to_numeric(cells, errors="coerce").to_numpy(dtype=np.float64)
    unparsed = np.isnan(values) & cells.notna().to_numpy()
    if unparsed.any():
        row = int(np.flatnonzero(unparsed)[0])
        raise UnparseableCellError(name, row, str(cells.iloc[row]))
    if np.any(np.isinf(values)):
        row = int(np.flatnonzero(np.isinf(values))[0])
        raise UnparseableCellError(name, row, str(cells.iloc[row]))
    return values


def write_csv(data: Dataset, path: PathLike, label_column: str = DATA_DEFAULTS["label_column"]) -> Path:
    """Write features and labels as a CSV readable by load_csv."""
    path = Path(path)
    frame = pd.DataFrame(data.features, columns=list(data.feature_names))
    frame[label_column] = data.labels
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, float_format="%.17g", lineterminator="\n")
    except OSError as e:
        raise ArtifactIOError(e.strerror or str(e), path) from e
    return path


# ----------------------------
# MIN-MAX NORMALIZATION
# ----------------------------

def fit_minmax(train: Dataset) -> NormalizationParams:
    """Column-wise extrema of the training split."""
    return NormalizationParams(
        minimum=train.features.min(axis=0),
        maximum=train.features.max(axis=0),
    )


def apply_minmax(data: Dataset, params: NormalizationParams) -> Dataset:
    """
    Rescale with training extrema: x' = (x - min) / (max - min), clamped to
    [0, 1]. Constant columns (max == min) map to 0.5.
    """
    return data.with_features(minmax_transform(data.features, params))


def minmax_transform(features: np.ndarray, params: NormalizationParams) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.n_features:
        raise ShapeError(
            f"expected {params.n_features} features, got shape {features.shape}"
        )
    span = params.maximum - params.minimum
    constant = span == 0
    safe_span = np.where(constant, 1.0, span)
    scaled = (features - params.minimum) / safe_span
    scaled = np.clip(scaled, 0.0, 1.0)
    scaled[:, constant] = 0.5
    return scaled


# ----------------------------
# SPLITTING
# ----------------------------

def split(data: Dataset, spec: SplitSpec) -> List[Dataset]:
    """
    Seeded permutation, then contiguous partition by fractions.

    Part sizes are round(fraction * n); the last part takes the remainder.
    """
    n = data.n_samples
    sizes = [int(round(f * n)) for f in spec.fractions[:-1]]
    sizes.append(n - sum(sizes))
    if any(size < 1 for size in sizes):
        raise SplitError(f"fractions {list(spec.fractions)} yield an empty part for n={n} (sizes {sizes})")

    order = make_rng(spec.seed).permutation(n)
    bounds = np.cumsum([0] + sizes)
    return [data.take(order[start:stop]) for start, stop in zip(bounds[:-1], bounds[1:])]


def concat(first: Dataset, second: Dataset) -> Dataset:
    """Stack two datasets with the same feature layout."""
    if first.n_features != second.n_features:
        raise ShapeError(f"cannot join {first.n_features} and {second.n_features} features")
    if first.num_classes != second.num_classes:
        raise DatasetValidationError("cannot join datasets with different num_classes")
    offset = int(first.row_ids.max()) + 1
    return Dataset(
        features=np.vstack([first.features, second.features]),
        labels=np.concatenate([first.labels, second.labels]),
        feature_names=first.feature_names,
        num_classes=first.num_classes,
        row_ids=np.concatenate([first.row_ids, second.row_ids + offset]),
    )


# ----------------------------
# SYNTHETIC GENERATORS
# ----------------------------

# (name, mean, sd), shaped after the public water potability sensor columns
WATER_FEATURES = [
    ("ph", 7.08, 1.59),
    ("Hardness", 196.4, 32.9),
    ("Solids", 22014.1, 8768.6),
    ("Chloramines", 7.12, 1.58),
    ("Sulfate", 333.8, 41.4),
    ("Conductivity", 426.2, 80.8),
    ("Organic_carbon", 14.28, 3.31),
    ("Trihalomethanes", 66.4, 16.2),
    ("Turbidity", 3.97, 0.78),
]

# Label rule on standardized features: potable when w . z + noise > 0
WATER_COEFFICIENTS = np.array([0.9, -0.6, 0.5, 0.7, -0.8, -0.4, -0.5, 0.3, 0.6])
WATER_NOISE_SD = 0.6

BUS14_PAIRS = 8
BUS14_MAGNITUDE_SD = 0.02
BUS14_ANGLE_SD = 0.2


def generate_synthetic(kind: Union[SyntheticKind, str], n: int, seed: int) -> Dataset:
    """Deterministic synthetic dataset for one of the two CPS applications."""
    kind = SyntheticKind(kind)
    if n < DATA_DEFAULTS["min_synthetic_rows"]:
        raise ValidationError(f"n must be >= {DATA_DEFAULTS['min_synthetic_rows']}, got {n}")
    rng = make_rng(seed)
    if kind is SyntheticKind.WATER_LIKE:
        return _generate_water_like(rng, n)
    return _generate_bus14_like(rng, n)


def _generate_water_like(rng: np.random.Generator, n: int) -> Dataset:
    means = np.array([mean for _, mean, _ in WATER_FEATURES])
    scales = np.array([sd for _, _, sd in WATER_FEATURES])
    standardized = rng.standard_normal((n, len(WATER_FEATURES)))
    features = means + scales * standardized

    score = standardized @ WATER_COEFFICIENTS + WATER_NOISE_SD * rng.standard_normal(n)
    labels = (score > 0).astype(np.int64)
    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(name for name, _, _ in WATER_FEATURES),
        num_classes=2,
    )


def _generate_bus14_like(rng: np.random.Generator, n: int) -> Dataset:
    # Per-bus operating point: voltage magnitudes near 1 p.u., angles lagging the slack bus
    magnitude_means = np.linspace(0.95, 1.06, BUS14_PAIRS)
    angle_means = -np.linspace(0.0, 0.28, BUS14_PAIRS)
    means = np.concatenate([magnitude_means, angle_means])
    scales = np.concatenate([
        np.full(BUS14_PAIRS, BUS14_MAGNITUDE_SD),
        np.full(BUS14_PAIRS, BUS14_ANGLE_SD),
    ])
    features = means + scales * rng.standard_normal((n, 2 * BUS14_PAIRS))

    labels = np.zeros(n, dtype=np.int64)
    n_anomalies = int(round(DATA_DEFAULTS["bus14_anomaly_rate"] * n))
    anomalous = rng.choice(n, size=n_anomalies, replace=False)
    labels[anomalous] = 1
    for row in anomalous:
        n_perturbed = rng.integers(1, 4)
        columns = rng.choice(2 * BUS14_PAIRS, size=n_perturbed, replace=False)
        signs = rng.choice([-1.0, 1.0], size=n_perturbed)
        features[row, columns] += signs * rng.uniform(3.0, 5.0, size=n_perturbed) * scales[columns]

    angles = features[:, BUS14_PAIRS:]
    features[:, BUS14_PAIRS:] = np.arctan2(np.sin(angles), np.cos(angles))

    names = [f"bus{i + 1}_vm" for i in range(BUS14_PAIRS)] + [f"bus{i + 1}_va" for i in range(BUS14_PAIRS)]
    return Dataset(
        features=features,
        labels=labels,
        feature_names=tuple(names),
        num_classes=2,
    )
