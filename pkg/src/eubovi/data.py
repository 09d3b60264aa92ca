"""Dataset loading, standardization, train/test splits and minibatches."""

from __future__ import annotations

import configparser
import csv
import dataclasses
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError
from .models import DataBatch

DATA_DIR = resources.files("eubovi") / "data"


def read_key_values(path_or_text, *, is_text: bool = False) -> dict[str, str]:
    """Parse a flat ``key = value`` file (``#`` comments, no sections)."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       strict=True)
    parser.optionxform = str
    text = path_or_text if is_text else Path(path_or_text).read_text(encoding="utf-8")
    try:
        parser.read_string("[root]\n" + text)
    except configparser.Error as exc:
        raise ConfigurationError(f"cannot parse {path_or_text if not is_text else 'text'}: {exc}")
    return dict(parser["root"])


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class DatasetSchema:
    """How to read one CSV file; see the ``*.schema`` files shipped in ``data/``."""

    name: str
    file: str
    target_column: str
    task: str = "classification"
    header: bool = True
    label_map: dict[str, float] | None = None
    intercept: bool = False
    hidden_units: int | None = None
    drop_columns: tuple[str, ...] = ()
    base_dir: Path | None = None

    @classmethod
    def from_file(cls, path) -> "DatasetSchema":
        path = Path(path)
        try:
            kv = read_key_values(path)
        except FileNotFoundError:
            raise IngestionError(f"schema file not found: {path}") from None
        known = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = set(kv) - known
        if unknown:
            raise ConfigurationError(f"unknown schema keys in {path}: {sorted(unknown)}")
        label_map = None
        if kv.get("label_map", "").strip():
            label_map = {}
            for item in kv["label_map"].split(","):
                label, _, value = item.partition(":")
                label_map[label.strip()] = float(value)
        return cls(
            name=kv.get("name", path.stem),
            file=kv["file"],
            target_column=kv["target_column"].strip(),
            task=kv.get("task", "classification").strip(),
            header=_parse_bool(kv.get("header", "true")),
            label_map=label_map,
            intercept=_parse_bool(kv.get("intercept", "false")),
            hidden_units=int(kv["hidden_units"]) if kv.get("hidden_units", "").strip() else None,
            drop_columns=tuple(c.strip() for c in kv.get("drop_columns", "").split(",") if c.strip()),
            base_dir=path.parent,
        )

    @property
    def path(self) -> Path:
        p = Path(self.file)
        return p if p.is_absolute() or self.base_dir is None else self.base_dir / p


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    name: str = "dataset"
    task: str = "classification"
    intercept: bool = False
    feature_stats: tuple[np.ndarray, np.ndarray] | None = None
    target_stats: tuple[float, float] | None = None

    def __len__(self):
        return self.targets.size

    @property
    def batch(self) -> DataBatch:
        return DataBatch(self.features, self.targets)

    def subset(self, index) -> "Dataset":
        return dataclasses.replace(self, features=self.features[index],
                                   targets=self.targets[index])


def load_csv(path, schema: DatasetSchema) -> Dataset:
    """Read ``path`` according to ``schema``; every cell must parse and be finite."""
    path = Path(path)
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except FileNotFoundError:
        raise IngestionError(f"data file not found: {path}") from None
    if schema.header:
        if not rows:
            raise IngestionError(f"{path}: empty file")
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    else:
        width = len(rows[0]) if rows else 0
        names = [str(i) for i in range(width)]
    if schema.target_column not in names:
        raise IngestionError(f"{path}: no target column {schema.target_column!r}")
    target_idx = names.index(schema.target_column)
    missing = [c for c in schema.drop_columns if c not in names]
    if missing:
        raise IngestionError(f"{path}: cannot drop unknown columns {missing}")
    feature_idx = [i for i, c in enumerate(names)
                   if i != target_idx and c not in schema.drop_columns]

    features, targets = [], []
    for r, row in enumerate(rows, start=2 if schema.header else 1):
        if len(row) != len(names):
            raise IngestionError(f"{path}: row {r} has {len(row)} cells, expected {len(names)}")
        values = []
        for i in feature_idx:
            try:
                v = float(row[i])
            except ValueError:
                raise IngestionError(f"{path}: row {r}, column {names[i]!r}: "
                                     f"cannot parse {row[i]!r}") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}: row {r}, column {names[i]!r}: "
                                     f"non-finite value {row[i]!r}")
            values.append(v)
        raw = row[target_idx].strip()
        if schema.label_map is not None:
            if raw not in schema.label_map:
                raise IngestionError(f"{path}: row {r}, column {names[target_idx]!r}: "
                                     f"unknown label {raw!r}")
            y = schema.label_map[raw]
        else:
            try:
                y = float(raw)
            except ValueError:
                raise IngestionError(f"{path}: row {r}, column {names[target_idx]!r}: "
                                     f"cannot parse {raw!r}") from None
            if not math.isfinite(y):
                raise IngestionError(f"{path}: row {r}: non-finite target {raw!r}")
        features.append(values)
        targets.append(y)

    if len(targets) < 10:
        raise IngestionError(f"{path}: {len(targets)} rows; at least 10 are required")
    x = np.array(features, dtype=float).reshape(len(targets), len(feature_idx))
    if schema.intercept:
        x = np.hstack([x, np.ones((x.shape[0], 1))])
    return Dataset(x, np.array(targets), name=schema.name, task=schema.task,
                   intercept=schema.intercept)


def builtin_schema(name: str) -> DatasetSchema:
    path = DATA_DIR / f"{name}.schema"
    if not path.is_file():
        raise IngestionError(f"no built-in dataset named {name!r}")
    return DatasetSchema.from_file(Path(str(path)))


def load_dataset(name_or_schema: str) -> Dataset:
    """Load a built-in dataset by name, or any dataset through its schema file path."""
    if name_or_schema.endswith(".schema"):
        schema = DatasetSchema.from_file(name_or_schema)
    else:
        schema = builtin_schema(name_or_schema)
    return load_csv(schema.path, schema)


def column_stats(dataset: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-column mean and sample std (ddof=1); constant and intercept columns get std 1."""
    x = dataset.features
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1) if len(dataset) > 1 else np.zeros(x.shape[1])
    std = np.where(std > 0.0, std, 1.0)
    if dataset.intercept:
        mean[-1], std[-1] = 0.0, 1.0
    return mean, std


def standardize(dataset: Dataset, stats=None, targets: bool = False,
                target_stats=None) -> Dataset:
    """Center and scale feature columns (and optionally targets).

    Statistics are computed from ``dataset`` unless given, so a test set can
    be transformed with the training set's statistics.
    """
    mean, std = column_stats(dataset) if stats is None else stats
    out = dataclasses.replace(dataset, features=(dataset.features - mean) / std,
                              feature_stats=(mean, std))
    if targets:
        if target_stats is None:
            y = dataset.targets
            sd = float(y.std(ddof=1)) if len(dataset) > 1 else 0.0
            target_stats = (float(y.mean()), sd if sd > 0 else 1.0)
        ym, ys = target_stats
        out = dataclasses.replace(out, targets=(dataset.targets - ym) / ys,
                                  target_stats=target_stats)
    return out


def inverse_standardize(dataset: Dataset) -> Dataset:
    """Undo :func:`standardize` using the statistics stored on ``dataset``."""
    out = dataset
    if dataset.feature_stats is not None:
        mean, std = dataset.feature_stats
        out = dataclasses.replace(out, features=out.features * std + mean, feature_stats=None)
    if dataset.target_stats is not None:
        ym, ys = dataset.target_stats
        out = dataclasses.replace(out, targets=out.targets * ys + ym, target_stats=None)
    return out


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigurationError("train_fraction must lie strictly between 0 and 1")


def train_size(n: int, fraction: float) -> int:
    """ceil(fraction * n), guarded against float noise such as 0.9 * 150 > 135."""
    return min(n - 1, max(1, math.ceil(round(fraction * n, 9))))


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Random disjoint train/test partition with ceil(fraction * N) training rows."""
    n = len(dataset)
    perm = np.random.default_rng(spec.seed).permutation(n)
    k = train_size(n, spec.train_fraction)
    return dataset.subset(np.sort(perm[:k])), dataset.subset(np.sort(perm[k:]))


class MinibatchSampler:
    """Shuffled-epoch minibatches over ``range(n)``; the last batch may be short."""

    def __init__(self, n: int, batch_size: int = 100, seed=0):
        if n < 1 or batch_size < 1:
            raise ConfigurationError("sampler needs n >= 1 and batch_size >= 1")
        self.n = int(n)
        self.batch_size = int(batch_size)
        self._rng = np.random.default_rng(seed)
        self._queue: list[np.ndarray] = []
        self.epoch = 0

    def epoch_batches(self) -> list[np.ndarray]:
        """Index arrays for one full pass, in a fresh random order."""
        perm = self._rng.permutation(self.n)
        self.epoch += 1
        return [perm[i:i + self.batch_size] for i in range(0, self.n, self.batch_size)]

    def next_batch(self) -> np.ndarray:
        if not self._queue:
            self._queue = self.epoch_batches()
        return self._queue.pop(0)

    def scale_factor(self, batch) -> float:
        return self.n / len(batch)
