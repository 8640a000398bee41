"""Dataset ingestion, preprocessing, SMOTE, client partitioning and synthetic data.

The preprocessing chain mirrors a typical intrusion-detection workflow:

1. drop corrupted (missing / non-finite) and duplicated rows
2. drop unneeded columns
3. one-hot encode categorical columns
4. seeded random train/test split (80/20 by default)
5. standard scaling, fitted on train only
6. SMOTE oversampling of minority classes (train only, optional)
7. reshape, which is a no-op for the MLP
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from fedpoison import _seeding
from fedpoison.errors import (
    ConfigError,
    DataError,
    IngestionError,
    OversamplingError,
    PartitionError,
)

STD_FLOOR = 1e-9


@dataclass
class RawDataset:
    columns: list[str]
    rows: list[list[str]]
    label_column: str
    kinds: dict[str, str] = field(default_factory=dict)  # column -> "numeric" | "categorical"

    def __post_init__(self):
        if self.label_column not in self.columns:
            raise IngestionError(
                f"label column {self.label_column!r} not found; available columns: {self.columns}"
            )
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise IngestionError(f"row {i + 1} has {len(row)} cells, header has {width}")
        if not self.kinds:
            self.kinds = infer_kinds(self.columns, self.rows)

    def __len__(self):
        return len(self.rows)


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.int64)
        if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
            raise DataError(f"features {x.shape} and labels {y.shape} do not align")
        if y.size and (y.min() < 0 or y.max() >= len(self.class_names)):
            raise DataError(f"labels outside [0, {len(self.class_names)})")
        if not np.all(np.isfinite(x)):
            raise DataError("features contain NaN or Inf")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", list(self.class_names))
        names = list(self.feature_names) or [f"f{i}" for i in range(x.shape[1])]
        object.__setattr__(self, "feature_names", names)

    def __len__(self):
        return int(self.labels.shape[0])

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def class_id(self, name_or_id) -> int:
        if isinstance(name_or_id, (int, np.integer)):
            if not 0 <= name_or_id < self.n_classes:
                raise DataError(f"class id {name_or_id} outside [0, {self.n_classes})")
            return int(name_or_id)
        try:
            return self.class_names.index(name_or_id)
        except ValueError:
            raise DataError(
                f"unknown class {name_or_id!r}; classes are {self.class_names}"
            ) from None

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_names,
                              self.feature_names)

    def with_labels(self, labels) -> "LabeledDataset":
        return LabeledDataset(self.features, labels, self.class_names, self.feature_names)

    def append(self, features, labels) -> "LabeledDataset":
        return LabeledDataset(
            np.vstack([self.features, np.asarray(features, dtype=np.float64).reshape(-1, self.n_features)]),
            np.concatenate([self.labels, np.asarray(labels, dtype=np.int64)]),
            self.class_names,
            self.feature_names,
        )


@dataclass(frozen=True)
class ScalerState:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class PartitionPlan:
    client_indices: list[np.ndarray]
    distribution: str
    beta: float | None = None

    @property
    def n_clients(self) -> int:
        return len(self.client_indices)

    def sizes(self) -> list[int]:
        return [len(ix) for ix in self.client_indices]

    def check(self, n: int) -> None:
        """Raise unless the plan is a disjoint cover of ``range(n)`` with no empty client."""
        if any(len(ix) == 0 for ix in self.client_indices):
            raise PartitionError("partition has an empty client")
        allix = np.concatenate(self.client_indices)
        if len(allix) != n or not np.array_equal(np.sort(allix), np.arange(n)):
            raise PartitionError("partition is not a disjoint cover of the training set")

    def to_json(self) -> str:
        return json.dumps(
            {
                "distribution": self.distribution,
                "beta": self.beta,
                "clients": {str(k): ix.tolist() for k, ix in enumerate(self.client_indices)},
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "PartitionPlan":
        d = json.loads(text)
        clients = d["clients"]
        idx = [np.asarray(clients[str(k)], dtype=np.int64) for k in range(len(clients))]
        return cls(idx, d["distribution"], d.get("beta"))


# -- ingestion ---------------------------------------------------------------


def _parses(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def infer_kinds(columns: Sequence[str], rows: Sequence[Sequence[str]]) -> dict[str, str]:
    kinds = {}
    for j, col in enumerate(columns):
        cells = [r[j] for r in rows if r[j].strip() != ""]
        kinds[col] = "numeric" if cells and all(_parses(c) for c in cells) else "categorical"
    return kinds


def load_csv(path, label_column: str) -> RawDataset:
    path = Path(path)
    if not path.is_file():
        raise IngestionError(f"CSV file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestionError(f"{path} is empty") from None
        header = [h.strip() for h in header]
        if label_column not in header:
            raise IngestionError(
                f"label column {label_column!r} not found; available columns: {header}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise IngestionError(
                    f"{path}: line {lineno} has {len(row)} cells, header has {len(header)}"
                )
            rows.append([c.strip() for c in row])
    return RawDataset(header, rows, label_column)


# -- preprocessing steps -----------------------------------------------------


def clean(raw: RawDataset) -> RawDataset:
    """Drop rows with missing or non-finite cells, then exact duplicates (first kept)."""
    numeric = [raw.kinds[c] == "numeric" for c in raw.columns]
    seen = set()
    kept = []
    for row in raw.rows:
        if any(c == "" for c in row):
            continue
        if any(isnum and not math.isfinite(float(c)) for c, isnum in zip(row, numeric)):
            continue
        key = tuple(row)
        if key in seen:
            continue
        seen.add(key)
        kept.append(row)
    return RawDataset(raw.columns, kept, raw.label_column, dict(raw.kinds))


def drop_columns(raw: RawDataset, columns: Sequence[str]) -> RawDataset:
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise ConfigError(f"cannot drop unknown columns {missing}; available: {raw.columns}")
    if raw.label_column in columns:
        raise ConfigError(f"cannot drop the label column {raw.label_column!r}")
    keep = [j for j, c in enumerate(raw.columns) if c not in set(columns)]
    cols = [raw.columns[j] for j in keep]
    rows = [[r[j] for j in keep] for r in raw.rows]
    return RawDataset(cols, rows, raw.label_column, {c: raw.kinds[c] for c in cols})


def encode_onehot(raw: RawDataset) -> LabeledDataset:
    """Numeric columns pass through; each categorical column becomes one indicator per category.

    Labels are integer-encoded against the sorted set of observed label values.
    """
    if not raw.rows:
        raise DataError("no rows to encode")
    li = raw.columns.index(raw.label_column)
    class_names = sorted({r[li] for r in raw.rows})
    lookup = {name: i for i, name in enumerate(class_names)}
    labels = np.array([lookup[r[li]] for r in raw.rows], dtype=np.int64)

    blocks, names = [], []
    for j, col in enumerate(raw.columns):
        if j == li:
            continue
        cells = [r[j] for r in raw.rows]
        if raw.kinds[col] == "numeric":
            blocks.append(np.array([float(c) for c in cells])[:, None])
            names.append(col)
        else:
            cats = sorted(set(cells))
            pos = {c: k for k, c in enumerate(cats)}
            block = np.zeros((len(cells), len(cats)))
            block[np.arange(len(cells)), [pos[c] for c in cells]] = 1.0
            blocks.append(block)
            names.extend(f"{col}={c}" for c in cats)
    x = np.hstack(blocks) if blocks else np.zeros((len(labels), 0))
    return LabeledDataset(x, labels, class_names, names)


def split_train_test(dataset: LabeledDataset, fraction: float = 0.8, seed: int = 0,
                     stratified: bool = False, notes: list[str] | None = None):
    """Seeded random split; ``fraction`` is the train share."""
    if not 0 < fraction < 1:
        raise ConfigError(f"train fraction must lie in (0, 1), got {fraction}")
    gen = _seeding.rng(_seeding.SPLIT, seed)
    n = len(dataset)
    if stratified:
        train_idx, test_idx = [], []
        for c in range(dataset.n_classes):
            rows = np.flatnonzero(dataset.labels == c)
            rows = rows[gen.permutation(len(rows))]
            cut = int(round(fraction * len(rows)))
            train_idx.append(rows[:cut])
            test_idx.append(rows[cut:])
        train_idx = np.sort(np.concatenate(train_idx))
        test_idx = np.sort(np.concatenate(test_idx))
    else:
        perm = gen.permutation(n)
        cut = int(round(fraction * n))
        train_idx, test_idx = perm[:cut], perm[cut:]
    if len(train_idx) == 0 or len(test_idx) == 0:
        raise DataError(f"split of {n} rows at {fraction} leaves an empty side")
    train, test = dataset.subset(train_idx), dataset.subset(test_idx)
    only_test = [
        dataset.class_names[c]
        for c in range(dataset.n_classes)
        if train.class_counts()[c] == 0 and test.class_counts()[c] > 0
    ]
    if only_test:
        msg = f"classes present only in the test split: {only_test}"
        warnings.warn(msg)
        if notes is not None:
            notes.append(msg)
    return train, test


def standardize(train: LabeledDataset, test: LabeledDataset):
    mean = train.features.mean(axis=0)
    std = np.maximum(train.features.std(axis=0), STD_FLOOR)
    scaler = ScalerState(mean, std)

    def apply(ds):
        return LabeledDataset(scaler.transform(ds.features), ds.labels, ds.class_names,
                              ds.feature_names)

    return apply(train), apply(test), scaler


def preprocess(raw: RawDataset, drop: Sequence[str] = (), fraction: float = 0.8, seed: int = 0,
               stratified: bool = False, notes: list[str] | None = None):
    """Steps 1-5 and 7. Returns ``(train, test, scaler)``; SMOTE is applied separately."""
    notes = notes if notes is not None else []
    before = len(raw)
    raw = clean(raw)
    notes.append(f"clean: {before} -> {len(raw)} rows")
    if not raw.rows:
        raise DataError("no rows left after cleaning")
    if drop:
        raw = drop_columns(raw, drop)
        notes.append(f"dropped columns: {list(drop)}")
    ds = encode_onehot(raw)
    train, test = split_train_test(ds, fraction, seed, stratified, notes)
    train, test, scaler = standardize(train, test)
    notes.append("reshape: no-op for the MLP")
    return train, test, scaler


def collapse_binary(ds: LabeledDataset, normal: str = "Normal") -> LabeledDataset:
    """Relabel every non-``normal`` class as ``Attack``; classes become ``["Attack", "Normal"]``."""
    normal_id = ds.class_id(normal)
    labels = np.where(ds.labels == normal_id, 1, 0)
    return LabeledDataset(ds.features, labels, ["Attack", "Normal"], ds.feature_names)


# -- SMOTE -------------------------------------------------------------------


def _k_nearest(points: np.ndarray, i: int, k: int) -> np.ndarray:
    d = np.sum((points - points[i]) ** 2, axis=1)
    d[i] = np.inf
    # stable sort keeps the lower row index first among equal distances
    return np.argsort(d, kind="stable")[:k]


def smote_oversample(train: LabeledDataset, k_neighbors: int = 5, seed: int = 0,
                     return_provenance: bool = False):
    """Bring every present class up to the majority count with SMOTE interpolation.

    Synthetic rows are appended after all original rows, grouped by class id.
    With ``return_provenance`` also returns an array of
    ``(base_row, neighbor_row, u)`` for each synthetic row, indexing ``train``.
    """
    if k_neighbors < 1:
        raise ConfigError(f"k_neighbors must be >= 1, got {k_neighbors}")
    counts = train.class_counts()
    target = counts.max()
    gen = _seeding.rng(_seeding.SMOTE, seed)
    new_x, new_y, prov = [], [], []
    for c in range(train.n_classes):
        have = counts[c]
        if have == 0 or have == target:
            continue
        if have < 2:
            raise OversamplingError(
                f"class {train.class_names[c]!r} has a single sample; SMOTE needs at least 2"
            )
        rows = np.flatnonzero(train.labels == c)
        pts = train.features[rows]
        k = min(k_neighbors, have - 1)
        need = target - have
        bases = gen.integers(0, have, size=need)
        picks = gen.integers(0, k, size=need)
        us = gen.random(need)
        cache: dict[int, np.ndarray] = {}
        for b, p, u in zip(bases, picks, us):
            b = int(b)
            if b not in cache:
                cache[b] = _k_nearest(pts, b, k)
            nn = int(cache[b][p])
            new_x.append(pts[b] + u * (pts[nn] - pts[b]))
            new_y.append(c)
            prov.append((rows[b], rows[nn], u))
    if not new_x:
        out = train
    else:
        out = train.append(np.array(new_x), np.array(new_y))
    if return_provenance:
        return out, np.array(prov, dtype=np.float64).reshape(-1, 3)
    return out


# -- partitioning ------------------------------------------------------------


def partition_iid(train: LabeledDataset, K: int, seed: int = 0) -> PartitionPlan:
    """Seeded shuffle cut into ``K`` contiguous slices; the first ``n % K`` get one extra row."""
    n = len(train)
    if K < 1:
        raise PartitionError(f"K must be >= 1, got {K}")
    if K > n:
        raise PartitionError(f"cannot split {n} rows across {K} clients")
    perm = _seeding.rng(_seeding.PARTITION, seed).permutation(n)
    return PartitionPlan([np.asarray(s) for s in np.array_split(perm, K)], "iid")


def partition_noniid(train: LabeledDataset, K: int, beta: float = 0.5,
                     seed: int = 0) -> PartitionPlan:
    """Dirichlet label skew: each class is spread over clients by ``Dir(beta, ..., beta)``."""
    n = len(train)
    if K < 1:
        raise PartitionError(f"K must be >= 1, got {K}")
    if beta <= 0:
        raise PartitionError(f"beta must be > 0, got {beta}")
    if n < K:
        raise PartitionError(f"cannot split {n} rows across {K} clients")
    gen = _seeding.rng(_seeding.PARTITION, seed)
    buckets: list[list[int]] = [[] for _ in range(K)]
    for c in range(train.n_classes):
        rows = np.flatnonzero(train.labels == c)
        if len(rows) == 0:
            continue
        rows = rows[gen.permutation(len(rows))]
        props = gen.dirichlet(np.full(K, beta))
        cuts = (np.cumsum(props) * len(rows)).astype(np.int64)[:-1]
        for k, part in enumerate(np.split(rows, cuts)):
            buckets[k].extend(part.tolist())
    clients = [sorted(b) for b in buckets]
    while True:
        empty = [k for k, b in enumerate(clients) if not b]
        if not empty:
            break
        donor = max(range(K), key=lambda k: (len(clients[k]), -k))
        clients[empty[0]].append(clients[donor].pop())
    return PartitionPlan([np.asarray(b, dtype=np.int64) for b in clients], "noniid", beta)


# -- synthetic data ----------------------------------------------------------


def synthetic_class_names(n_classes: int) -> list[str]:
    return ["Normal"] + [f"Attack_{i}" for i in range(1, n_classes)]


def generate_synthetic(n_classes: int = 4, n_features: int = 8, n_per_class: int = 250,
                       separation: float = 6.0, seed: int = 0) -> LabeledDataset:
    """Unit-covariance Gaussian blobs with class centers at least ``separation`` apart.

    Class 0 is named ``Normal``; rows are shuffled.
    """
    if min(n_classes, n_features, n_per_class) < 1:
        raise ConfigError("n_classes, n_features and n_per_class must all be >= 1")
    gen = _seeding.rng(seed)
    scale = max(separation, 1.0)
    for _ in range(10_000):
        centers = gen.normal(0.0, scale, size=(n_classes, n_features))
        d = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(-1))
        off = d[~np.eye(n_classes, dtype=bool)]
        if off.size == 0 or off.min() >= separation:
            break
        scale *= 1.05
    x = np.concatenate(
        [gen.normal(centers[c], 1.0, size=(n_per_class, n_features)) for c in range(n_classes)]
    )
    y = np.repeat(np.arange(n_classes), n_per_class)
    perm = gen.permutation(len(y))
    return LabeledDataset(x[perm], y[perm], synthetic_class_names(n_classes))
