"""Synthetic datasets, CSV I/O, stratified splits and minibatching.

All randomness comes from ``numpy.random.Philox`` (Philox-4x64-10,
counter-based) keyed by a ``SeedSequence`` built from the caller's seed
plus a per-purpose stream tag, so each generator, split and epoch shuffle
draws from an independent stream.
"""

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

_STREAMS = {"blobs": 1, "moons": 2, "spirals": 3, "split": 4, "batches": 5, "probe": 6}


def make_rng(seed: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), _STREAMS[stream], *extra])))


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    n_classes: int
    name: str = "dataset"

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=np.float64))
        y = np.asarray(self.y, dtype=np.int64)
        if X.shape[0] < 1:
            raise InputError("dataset must contain at least one row")
        if y.shape != (X.shape[0],):
            raise InputError(f"{X.shape[0]} rows but {y.size} labels")
        if not np.all(np.isfinite(X)):
            raise InputError("dataset contains NaN or Inf")
        if np.any(y < 0) or np.any(y >= self.n_classes):
            raise InputError(f"labels must lie in [0, {self.n_classes})")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def take(self, idx, name: str | None = None) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.n_classes, name or self.name)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.n_classes)


def _shuffled(X, y, rng, n_classes, name):
    perm = rng.permutation(len(y))
    return Dataset(X[perm], y[perm], n_classes, name)


def gen_blobs(n: int, n_classes: int = 3, dim: int = 2, spread: float = 0.5, seed: int = 0,
              scale: float = 4.0) -> Dataset:
    """Isotropic Gaussian blobs around well-separated class centres.

    Centres are ``scale`` times the standard basis vectors (a scaled simplex)
    when ``n_classes <= dim``, otherwise evenly spaced on a circle of radius
    ``scale`` in the first two coordinates (or on a line when ``dim == 1``).
    """
    if n < n_classes or n_classes < 1 or dim < 1:
        raise InputError("need n >= n_classes >= 1 and dim >= 1")
    centres = np.zeros((n_classes, dim))
    if n_classes <= dim:
        centres[np.arange(n_classes), np.arange(n_classes)] = scale
    elif dim == 1:
        centres[:, 0] = scale * np.arange(n_classes)
    else:
        angles = 2 * np.pi * np.arange(n_classes) / n_classes
        centres[:, 0] = scale * np.cos(angles)
        centres[:, 1] = scale * np.sin(angles)
    rng = make_rng(seed, "blobs")
    y = np.arange(n) % n_classes
    X = centres[y] + spread * rng.standard_normal((n, dim))
    return _shuffled(X, y, rng, n_classes, "blobs")


def gen_moons(n: int, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Two interleaved half circles of radius 1 centred at (0, 0) and (1, 0.5)."""
    if n < 2:
        raise InputError("moons needs n >= 2")
    n_outer = n // 2
    n_inner = n - n_outer
    t_out = np.linspace(0.0, np.pi, n_outer)
    t_in = np.linspace(0.0, np.pi, n_inner)
    X = np.vstack([
        np.column_stack([np.cos(t_out), np.sin(t_out)]),
        np.column_stack([1.0 - np.cos(t_in), 0.5 - np.sin(t_in)]),
    ])
    y = np.r_[np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)]
    rng = make_rng(seed, "moons")
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return _shuffled(X, y, rng, 2, "moons")


def gen_spirals(n: int, turns: float = 1.5, noise: float = 0.05, seed: int = 0) -> Dataset:
    """Two interleaved Archimedean spiral arms, the second rotated by pi."""
    if n < 2:
        raise InputError("spirals needs n >= 2")
    n0 = n // 2
    n1 = n - n0
    arms = []
    for k, m in enumerate((n0, n1)):
        t = np.linspace(0.25, 1.0, m) * turns * 2 * np.pi
        r = t / (turns * 2 * np.pi)
        arms.append(np.column_stack([r * np.cos(t + k * np.pi), r * np.sin(t + k * np.pi)]))
    X = np.vstack(arms)
    y = np.r_[np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)]
    rng = make_rng(seed, "spirals")
    if noise > 0:
        X = X + noise * rng.standard_normal(X.shape)
    return _shuffled(X, y, rng, 2, "spirals")


def save_csv(dataset: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join([f"f{k}" for k in range(dataset.dim)] + ["label"]) + "\n")
        for row, label in zip(dataset.X, dataset.y):
            fh.write(",".join(format(float(v), ".17g") for v in row) + f",{int(label)}\n")


def load_csv(path, n_classes: int | None = None) -> Dataset:
    """Read ``f0,...,f{d-1},label`` rows; ``n_classes`` defaults to max label + 1."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[-1] != "label" or header[:-1] != [f"f{k}" for k in range(d)]:
            raise ParseError("header must be f0,...,f{d-1},label", 1)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != d + 1:
                raise ParseError(f"expected {d + 1} fields, got {len(rec)}", lineno)
            try:
                vals = [float(v) for v in rec[:-1]]
                label = int(rec[-1])
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise ParseError("non-finite value", lineno)
            if label < 0:
                raise ParseError("negative label", lineno)
            rows.append(vals)
            labels.append(label)
    if not rows:
        raise ParseError("no data rows", 2)
    y = np.array(labels, dtype=np.int64)
    inferred = int(y.max()) + 1
    if n_classes is None or n_classes < inferred:
        n_classes = inferred
    return Dataset(np.array(rows, dtype=np.float64), y, n_classes, Path(path).stem)


def split(dataset: Dataset, test_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Stratified train/test split; each class keeps at least one row per side."""
    if not 0.0 < test_fraction < 1.0:
        raise InputError("test_fraction must lie in (0, 1)")
    rng = make_rng(seed, "split")
    train_idx, test_idx = [], []
    for c in range(dataset.n_classes):
        idx = np.flatnonzero(dataset.y == c)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise InputError(f"class {c} has fewer than 2 samples; cannot stratify")
        idx = rng.permutation(idx)
        k = min(max(int(round(test_fraction * idx.size)), 1), idx.size - 1)
        test_idx.append(idx[:k])
        train_idx.append(idx[k:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.take(train_idx, f"{dataset.name}-train"), dataset.take(test_idx, f"{dataset.name}-test")


class BatchIterator:
    """One epoch of shuffled minibatches; the order depends only on (seed, epoch)."""

    def __init__(self, dataset: Dataset, batch_size: int, seed: int, epoch: int):
        if batch_size < 1:
            raise InputError("batch_size must be positive")
        self.dataset = dataset
        self.batch_size = batch_size
        self.seed = seed
        self.epoch = epoch
        self.order = make_rng(seed, "batches", epoch).permutation(len(dataset))

    def __len__(self) -> int:
        return math.ceil(len(self.dataset) / self.batch_size)

    def __iter__(self):
        for start in range(0, len(self.order), self.batch_size):
            idx = self.order[start:start + self.batch_size]
            yield self.dataset.X[idx], self.dataset.y[idx]


def minibatches(dataset: Dataset, batch_size: int, seed: int, epoch: int) -> BatchIterator:
    return BatchIterator(dataset, batch_size, seed, epoch)


def make_dataset(kind: str, n: int, seed: int = 0, noise: float | None = None, **kwargs) -> Dataset:
    """Generator dispatch used by the CLI and config files."""
    if kind == "moons":
        return gen_moons(n, 0.05 if noise is None else noise, seed)
    if kind == "spirals":
        return gen_spirals(n, kwargs.get("turns", 1.5), 0.05 if noise is None else noise, seed)
    if kind == "blobs":
        spread = kwargs.get("spread", 0.5 if noise is None else noise)
        return gen_blobs(n, kwargs.get("n_classes", 3), kwargs.get("dim", 2), spread, seed)
    raise InputError(f"unknown dataset {kind!r}")
