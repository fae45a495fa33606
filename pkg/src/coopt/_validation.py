"""Input validation helpers built on top of sklearn's checks."""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError, NumericError


def check_matrix(X, *, name="X", n_cols=None, min_rows=0, error=DimensionError, dtype=np.float64):
    """Return ``X`` as a finite 2-D float array, raising coopt errors on bad input."""
    X = np.asarray(X)
    if X.ndim != 2:
        raise error(f"{name} must be 2-D, got shape {X.shape}")
    if X.shape[0] and not np.all(np.isfinite(X)):
        raise NumericError(f"{name} contains non-finite values")
    if n_cols is not None and X.shape[1] != n_cols:
        raise error(f"{name} has {X.shape[1]} columns, expected {n_cols}")
    if X.shape[0] < min_rows:
        raise error(f"{name} has {X.shape[0]} rows, expected at least {min_rows}")
    if X.shape[0] == 0:
        return np.zeros(X.shape, dtype=dtype)
    return check_array(X, dtype=dtype, ensure_min_samples=1, ensure_all_finite=True)


def rowwise_matmul(X, M):
    """Compute ``X @ M.T`` so that each output row depends only on its input row.

    BLAS kernels may pick different accumulation orders for different batch
    shapes; reducing explicitly over a contiguous axis keeps every row
    bit-identical no matter how the batch was sliced.
    """
    X = np.asarray(X, dtype=np.float64)
    M = np.ascontiguousarray(M, dtype=np.float64)
    out = np.empty((X.shape[0], M.shape[0]), dtype=np.float64)
    # bounded temporary: rows * M.size floats per chunk
    chunk = max(1, 4_000_000 // max(M.size, 1))
    for start in range(0, X.shape[0], chunk):
        block = X[start:start + chunk]
        out[start:start + chunk] = (block[:, None, :] * M[None, :, :]).sum(axis=-1)
    return out


def check_seed(seed, name="seed"):
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)) or seed < 0:
        raise ValueError(f"{name} must be a non-negative integer, got {seed!r}")
    return int(seed)
