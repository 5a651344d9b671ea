"""Input checks for ragged sequence collections.

sklearn's ``check_array`` handles one matrix; the estimators here consume lists
of variable-length matrices, so these helpers apply it element-wise and check
cross-element consistency.
"""

import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DataError, ParameterError


def check_sequence(x, n_features=None, name="sequence", min_rows=1):
    try:
        x = check_array(x, dtype=np.float64, ensure_min_samples=min_rows)
    except ValueError as exc:
        raise DataError(f"{name}: {exc}") from None
    if n_features is not None and x.shape[1] != n_features:
        raise ParameterError(f"{name}: expected {n_features} features per frame, got {x.shape[1]}")
    return x


def check_sequences(X, n_features=None, name="X"):
    """Validate a list of (T_i, D) arrays sharing D; return float64 copies."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    if len(X) == 0:
        raise ParameterError(f"{name}: empty collection")
    out = []
    for i, x in enumerate(X):
        x = check_sequence(x, n_features, name=f"{name}[{i}]")
        n_features = x.shape[1]
        out.append(x)
    return out


def check_labels(y, n_symbols, name="y"):
    """Validate label sequences: non-empty integer lists with ids < n_symbols."""
    out = []
    for i, seq in enumerate(y):
        seq = np.asarray(seq, dtype=np.int64).ravel()
        if seq.size == 0:
            raise DataError(f"{name}[{i}]: empty label sequence")
        if seq.min() < 0 or seq.max() >= n_symbols:
            raise DataError(f"{name}[{i}]: label id outside [0, {n_symbols})")
        out.append(seq)
    return out
