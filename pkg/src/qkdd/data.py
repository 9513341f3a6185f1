"""Dataset generation, CSV ingestion, and the PCA-to-rotation-angle pipeline."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

ANGLE_LOW = -math.pi / 2
ANGLE_HIGH = math.pi / 2

TASK_REGRESSION = "regression"
TASK_BINARY = "binary"


class DataError(ValueError):
    """Malformed or unusable input data."""


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    task: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError("inputs and labels disagree on sample count")
        if not np.all(np.isfinite(self.inputs)):
            raise DataError("inputs contain NaN or Inf")
        if self.task == TASK_BINARY and not np.all(np.isin(self.labels, (-1.0, 1.0))):
            raise DataError("binary labels must be -1/+1")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class SyntheticSpec:
    """Linear ground truth g(x) = <w, x> on the angle box."""

    n: int
    weights: tuple[float, ...]
    seed: int = 0

    def __post_init__(self):
        if len(self.weights) != self.n:
            raise DataError(f"need {self.n} weights, got {len(self.weights)}")


def default_weights(n: int) -> tuple[float, ...]:
    """Fixed non-uniform weights so no coordinate is special-cased away."""
    return tuple(1.0 - 0.5 * k / max(n - 1, 1) for k in range(n))


def synthetic(spec: SyntheticSpec, n_samples: int, seed: int | None = None) -> Dataset:
    """Uniform draws on [-pi/2, pi/2]^n with exact linear labels."""
    if n_samples < 1:
        raise DataError("n_samples must be >= 1")
    rng = np.random.default_rng(spec.seed if seed is None else seed)
    x = rng.uniform(ANGLE_LOW, ANGLE_HIGH, size=(n_samples, spec.n))
    y = x @ np.asarray(spec.weights, dtype=float)
    return Dataset(x, y, TASK_REGRESSION, {"name": "synthetic", "dim": spec.n})


@dataclass(frozen=True)
class TableSpec:
    """A CSV-backed dataset plus its preprocessing knobs."""

    path: str
    label_column: str | int
    task: str = TASK_REGRESSION
    pca_dim: int | None = None
    class_pair: tuple[float, float] | None = None


def load_csv(path, label_column, task: str, class_pair=None) -> Dataset:
    """Read a numeric CSV with a header row into a Dataset.

    Binary labels (exactly two distinct values, optionally pre-filtered to
    `class_pair`) map to -1/+1 in ascending order. Regression labels are
    standardized to zero mean and unit variance, with the original moments
    recorded in `meta`.
    """
    if task not in (TASK_REGRESSION, TASK_BINARY):
        raise DataError(f"unknown task {task!r}")
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        if isinstance(label_column, int):
            if not 0 <= label_column < len(header):
                raise DataError(f"label column index {label_column} out of range")
            label_idx = label_column
        else:
            try:
                label_idx = header.index(label_column)
            except ValueError:
                raise DataError(
                    f"label column {label_column!r} not in header {header}"
                ) from None
        feat_idx = [i for i in range(len(header)) if i != label_idx]
        if not feat_idx:
            raise DataError("no feature columns besides the label")
        rows: list[list[float]] = []
        labels: list[float] = []
        for lineno, record in enumerate(reader, start=2):
            if not record:
                continue
            if len(record) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(record)} cells, expected {len(header)}")
            parsed = []
            for i, cell in enumerate(record):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: row {lineno}, column {header[i]!r}: not numeric: {cell!r}"
                    ) from None
                if not math.isfinite(value):
                    raise DataError(f"{path}: row {lineno}, column {header[i]!r}: non-finite value")
                parsed.append(value)
            labels.append(parsed[label_idx])
            rows.append([parsed[i] for i in feat_idx])
    x = np.asarray(rows, dtype=float)
    y = np.asarray(labels, dtype=float)
    if x.shape[0] == 0:
        raise DataError(f"{path}: no data rows")
    meta: dict = {"name": str(path), "label_column": header[label_idx], "preprocessing": []}

    if task == TASK_BINARY:
        if class_pair is not None:
            keep = np.isin(y, np.asarray(class_pair, dtype=float))
            x, y = x[keep], y[keep]
            meta["preprocessing"].append(f"class filter {tuple(class_pair)}")
            if x.shape[0] == 0:
                raise DataError(f"class pair {class_pair} matches no rows")
        values = np.unique(y)
        if values.shape[0] != 2:
            raise DataError(f"binary task needs exactly 2 label values, found {values.shape[0]}")
        mapped = np.where(y == values[0], -1.0, 1.0)
        meta["classes"] = {float(values[0]): -1.0, float(values[1]): 1.0}
        return Dataset(x, mapped, TASK_BINARY, meta)

    mean, std = float(np.mean(y)), float(np.std(y))
    if std == 0.0:
        raise DataError("regression labels are constant")
    meta["label_mean"] = mean
    meta["label_std"] = std
    meta["preprocessing"].append("labels standardized")
    return Dataset(x, (y - mean) / std, TASK_REGRESSION, meta)


@dataclass(frozen=True)
class PcaTransform:
    """Centered projection onto leading principal axes plus an affine
    rescale of each retained coordinate to the angle box; the rescale
    statistics come from the fitting split only."""

    mean: np.ndarray
    components: np.ndarray
    target_dim: int
    proj_low: np.ndarray
    proj_high: np.ndarray
    explained_variance: np.ndarray


def fit_pca(ds: Dataset, m: int, seed: int | None = None) -> PcaTransform:
    """Top-m principal axes of the inputs (deterministic; seed accepted
    for interface symmetry, exact eigendecompositions need none)."""
    x = ds.inputs
    if m > x.shape[1]:
        raise DataError(f"target dim {m} exceeds input dim {x.shape[1]}")
    if m > x.shape[0]:
        raise DataError(f"target dim {m} exceeds sample count {x.shape[0]}")
    mean = x.mean(axis=0)
    centered = x - mean
    _, svals, vh = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(svals > 1e-12 * max(svals[0], 1e-300) * max(x.shape)))
    if m > rank:
        raise DataError(f"target dim {m} exceeds rank {rank} of centered inputs")
    components = vh[:m].T.copy()
    # deterministic sign convention: largest-magnitude loading is positive
    for j in range(m):
        pivot = np.argmax(np.abs(components[:, j]))
        if components[pivot, j] < 0:
            components[:, j] = -components[:, j]
    projected = centered @ components
    denom = max(x.shape[0] - 1, 1)
    return PcaTransform(
        mean=mean,
        components=components,
        target_dim=m,
        proj_low=projected.min(axis=0),
        proj_high=projected.max(axis=0),
        explained_variance=(svals[:m] ** 2) / denom,
    )


def apply_pca(transform: PcaTransform, ds: Dataset) -> Dataset:
    """Project and rescale inputs into the angle box, clamping outliers."""
    z = (ds.inputs - transform.mean) @ transform.components
    span = transform.proj_high - transform.proj_low
    safe = np.where(span > 0, span, 1.0)
    unit = (z - transform.proj_low) / safe
    unit = np.where(span > 0, unit, 0.5)
    angles = np.clip(ANGLE_LOW + (ANGLE_HIGH - ANGLE_LOW) * unit, ANGLE_LOW, ANGLE_HIGH)
    meta = dict(ds.meta)
    meta["preprocessing"] = list(meta.get("preprocessing", [])) + [
        f"pca to {transform.target_dim} dims, rescaled to angle box"
    ]
    return Dataset(angles, ds.labels.copy(), ds.task, meta)
