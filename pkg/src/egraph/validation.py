"""Input-validation helpers shared by the estimators and the data loaders."""

from __future__ import annotations

import numpy as np

from .autodiff import NORM_EPS, as_matrix
from .errors import DataError, DegenerateVectorError


def check_features(x) -> np.ndarray:
    """A finite 2-D float64 feature matrix with at least one column."""
    x = as_matrix(x)
    if x.shape[1] < 1:
        raise DataError("feature matrix needs at least one column")
    return x


def normalize_rows(x) -> np.ndarray:
    """Scale every row to unit Euclidean norm; zero rows are an error."""
    x = check_features(x)
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    bad = np.nonzero(norms[:, 0] <= NORM_EPS)[0]
    if bad.size:
        raise DegenerateVectorError(f"row {bad[0]} has zero norm and cannot be normalised")
    return x / norms


def cosine_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain-numpy all-pairs cosine similarity (no tape), same error policy."""
    a = check_features(a)
    b = check_features(b)
    if a.shape[1] != b.shape[1]:
        raise DataError(f"widths differ: {a.shape} vs {b.shape}")
    return normalize_rows(a) @ normalize_rows(b).T


def check_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_rows:
        raise DataError(f"labels shape {y.shape} does not match {n_rows} samples")
    return y
