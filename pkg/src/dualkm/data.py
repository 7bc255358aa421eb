"""Dataset loading, normalization, splitting and synthetic fixtures."""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse as sp

__all__ = [
    "DataFormatError",
    "Dataset",
    "ZScoreStats",
    "load_libsvm",
    "save_libsvm",
    "load_csv",
    "load_dataset",
    "zscore_fit",
    "zscore_apply",
    "train_test_split",
    "encode_binary_labels",
    "synth_make",
]


class DataFormatError(ValueError):
    """Malformed input file; the message names the offending line."""


@dataclass(frozen=True, eq=False)
class Dataset:
    X: object  # ndarray or scipy CSR matrix, shape (n, d)
    y: np.ndarray
    feature_names: Optional[tuple] = None

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def dense(self) -> np.ndarray:
        return self.X.toarray() if sp.issparse(self.X) else np.asarray(self.X)

    def subset(self, rows) -> "Dataset":
        return Dataset(self.X[rows], self.y[rows], self.feature_names)


# -- libsvm -----------------------------------------------------------------


def load_libsvm(path, n_features: Optional[int] = None) -> Dataset:
    """Read ``label idx:value ...`` lines with 1-based, increasing indices.

    Blank lines and ``#`` comments are skipped.  Missing indices are zeros.
    ``n_features`` pads the width; a larger index than it is an error.
    """
    labels, indptr, indices, values = [], [0], [], []
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            try:
                labels.append(float(parts[0]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad label {parts[0]!r}") from None
            last = 0
            for tok in parts[1:]:
                idx, sep, val = tok.partition(":")
                try:
                    j = int(idx)
                    v = float(val)
                except ValueError:
                    raise DataFormatError(f"{path}:{lineno}: bad feature {tok!r}") from None
                if not sep or j < 1:
                    raise DataFormatError(f"{path}:{lineno}: bad feature {tok!r}")
                if j <= last:
                    raise DataFormatError(f"{path}:{lineno}: indices must increase ({j} after {last})")
                last = j
                indices.append(j - 1)
                values.append(v)
            indptr.append(len(indices))
    width = (max(indices) + 1) if indices else 0
    if n_features is not None:
        if width > n_features:
            raise DataFormatError(f"{path}: feature index {width} exceeds expected dimension {n_features}")
        width = n_features
    X = sp.csr_matrix(
        (np.array(values, dtype=np.float64), np.array(indices, dtype=np.int64), np.array(indptr, dtype=np.int64)),
        shape=(len(labels), width),
    )
    return Dataset(X, np.array(labels, dtype=np.float64))


def save_libsvm(path, data: Dataset) -> None:
    """Write ``data`` in libsvm format with round-trip exact float text."""
    X = sp.csr_matrix(data.X)
    with open(path, "w") as fh:
        for i in range(X.shape[0]):
            start, stop = X.indptr[i], X.indptr[i + 1]
            feats = " ".join(
                f"{j + 1}:{float(v)!r}" for j, v in zip(X.indices[start:stop], X.data[start:stop]) if v != 0
            )
            fh.write(f"{float(data.y[i])!r} {feats}".rstrip() + "\n")


# -- csv ----------------------------------------------------------------------


def _is_number(cell: str) -> bool:
    try:
        float(cell)
    except ValueError:
        return False
    return True


def load_csv(path, label_column: int = -1, delimiter: str = ",") -> Dataset:
    """Read a rectangular numeric table; a non-numeric first row is a header."""
    with open(path, newline="") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh, delimiter=delimiter), 1) if any(c.strip() for c in r)]
    names = None
    if rows and not all(_is_number(c) for c in rows[0][1]):
        names = [c.strip() for c in rows[0][1]]
        rows = rows[1:]
    if not rows:
        width = len(names) if names else 1
        return Dataset(np.zeros((0, max(width - 1, 0))), np.zeros(0), None)
    width = len(rows[0][1])
    table = np.empty((len(rows), width), dtype=np.float64)
    for k, (lineno, row) in enumerate(rows):
        if len(row) != width:
            raise DataFormatError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
        try:
            table[k] = [float(c) for c in row]
        except ValueError:
            bad = next(c for c in row if not _is_number(c))
            raise DataFormatError(f"{path}:{lineno}: non-numeric cell {bad!r}") from None
    col = label_column % width
    keep = [j for j in range(width) if j != col]
    feature_names = tuple(names[j] for j in keep) if names and len(names) == width else None
    return Dataset(np.ascontiguousarray(table[:, keep]), table[:, col].copy(), feature_names)


def load_dataset(path, fmt: Optional[str] = None, label_column: int = -1, n_features: Optional[int] = None) -> Dataset:
    """Dispatch on ``fmt`` or on the file extension (``.csv`` vs libsvm)."""
    fmt = fmt or ("csv" if str(path).lower().endswith(".csv") else "libsvm")
    if fmt == "csv":
        data = load_csv(path, label_column=label_column)
        if n_features is not None and data.n_samples and data.n_features != n_features:
            raise DataFormatError(f"{path}: expected {n_features} features, got {data.n_features}")
        if n_features is not None and not data.n_samples:
            data = Dataset(np.zeros((0, n_features)), data.y)
        return data
    if fmt == "libsvm":
        return load_libsvm(path, n_features=n_features)
    raise ValueError(f"unknown data format {fmt!r}")


# -- normalization ------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ZScoreStats:
    mean: np.ndarray
    std: np.ndarray  # population standard deviation


def zscore_fit(X) -> ZScoreStats:
    if sp.issparse(X):
        X = X.toarray()
    X = np.asarray(X, dtype=np.float64)
    std = X.std(axis=0)
    # rounding in the mean can leave a constant column with a tiny spread
    std[np.ptp(X, axis=0) == 0] = 0.0
    return ZScoreStats(X.mean(axis=0), std)


def zscore_apply(stats: ZScoreStats, X, dtype=np.float64) -> np.ndarray:
    """Standardize columns; zero-variance columns map to 0.

    Sparse input comes back dense since centering removes sparsity.
    """
    if sp.issparse(X):
        X = X.toarray()
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != stats.mean.shape[0]:
        raise ValueError(f"dimension mismatch: expected {stats.mean.shape[0]} features, got {X.shape[-1]}")
    safe = np.where(stats.std > 0, stats.std, 1.0)
    Z = (X - stats.mean) / safe
    Z[:, stats.std == 0] = 0.0
    return Z.astype(dtype, copy=False)


# -- splitting / labels -------------------------------------------------------


def train_test_split(data: Dataset, fraction: float = 0.8, seed: int = 0):
    """Seeded shuffle, then the first ``round(fraction * n)`` rows train."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must lie strictly between 0 and 1")
    n = data.n_samples
    n_train = int(round(fraction * n))
    if n_train == 0 or n_train == n:
        raise ValueError(f"split of {n} samples at {fraction} leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(np.sort(perm[:n_train])), data.subset(np.sort(perm[n_train:]))


def encode_binary_labels(y):
    """Map two label values to ``{-1, +1}``; returns ``(y_pm, (neg, pos))``.

    The smaller label becomes -1.  Anything other than ``{-1, +1}`` triggers
    a warning so silent remapping of ``{0, 1}`` files is visible.
    """
    y = np.asarray(y, dtype=np.float64)
    classes = np.unique(y)
    if classes.size != 2:
        raise ValueError(f"binary classification needs exactly 2 labels, found {classes.size}")
    neg, pos = float(classes[0]), float(classes[1])
    if (neg, pos) != (-1.0, 1.0):
        warnings.warn(f"remapping labels {{{neg:g}, {pos:g}}} to {{-1, +1}}", stacklevel=2)
    return np.where(y == pos, 1.0, -1.0), (neg, pos)


# -- synthetic fixtures -------------------------------------------------------


def synth_make(kind: str, n: int, d: int, seed: int = 0, *, separation: float = 6.0, noise: float = 0.1) -> Dataset:
    """Deterministic toy datasets.

    ``two_gaussians``
        Balanced classes ``+1``/``-1`` drawn from unit-variance Gaussians
        whose means are ``separation`` apart along the first axis.
    ``linear_regression_noise``
        ``y = X w + noise * e`` with ``X``, ``w``, ``e`` standard normal.
    ``sinusoid``
        ``y = sin(2 x_1) + 0.5 cos(x_2) + noise * e`` (the cosine term only
        when ``d >= 2``) with ``X`` uniform on ``[-3, 3]^d``.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be at least 1")
    rng = np.random.default_rng(seed)
    if kind == "two_gaussians":
        y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
        X = rng.standard_normal((n, d))
        X[:, 0] += 0.5 * separation * y
        return Dataset(X, y)
    if kind == "linear_regression_noise":
        X = rng.standard_normal((n, d))
        w = rng.standard_normal(d)
        y = X @ w + noise * rng.standard_normal(n)
        return Dataset(X, y)
    if kind == "sinusoid":
        X = rng.uniform(-3.0, 3.0, size=(n, d))
        y = np.sin(2.0 * X[:, 0])
        if d >= 2:
            y = y + 0.5 * np.cos(X[:, 1])
        y = y + noise * rng.standard_normal(n)
        return Dataset(X, y)
    raise ValueError(f"unknown synthetic dataset {kind!r}")
