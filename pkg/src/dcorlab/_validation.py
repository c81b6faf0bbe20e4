"""Input validation helpers shared by all modules."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import DimensionError, InvalidInputError, SizeError


def check_batch(x, name="x", min_samples=1):
    """Return ``x`` as a finite float64 array of shape (n, p).

    1-D input is treated as n samples of a scalar feature. Inputs with more
    than two dimensions are flattened row-major per sample.
    """
    arr = np.asarray(x)
    if arr.ndim == 0:
        raise InvalidInputError(f"{name} must have at least one dimension")
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    elif arr.ndim > 2:
        arr = arr.reshape(arr.shape[0], -1)
    try:
        arr = check_array(
            arr,
            dtype=np.float64,
            ensure_all_finite=True,
            ensure_min_samples=1,
            ensure_min_features=1,
            input_name=name,
        )
    except ValueError as exc:
        raise InvalidInputError(str(exc)) from exc
    if arr.shape[0] < min_samples:
        raise SizeError(
            f"{name} has {arr.shape[0]} samples; at least {min_samples} required"
        )
    return arr


def check_same_n(*arrays, names=None):
    ns = {a.shape[0] for a in arrays}
    if len(ns) != 1:
        labels = names or [f"arg{i}" for i in range(len(arrays))]
        shapes = ", ".join(f"{lab}={a.shape[0]}" for lab, a in zip(labels, arrays))
        raise DimensionError(f"sample counts differ: {shapes}")
    return ns.pop()


def check_square(m, name="matrix"):
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def check_same_size(a, b):
    if a.shape != b.shape:
        raise DimensionError(f"matrix sizes differ: {a.shape} vs {b.shape}")


def check_labels(labels, n_classes, n=None):
    y = np.asarray(labels)
    if y.ndim != 1:
        raise InvalidInputError("labels must be a 1-D array of class indices")
    if not np.issubdtype(y.dtype, np.integer):
        if np.any(y != np.round(y)):
            raise InvalidInputError("labels must be integers")
        y = y.astype(np.int64)
    if n is not None and y.shape[0] != n:
        raise DimensionError(f"{y.shape[0]} labels for {n} samples")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise InvalidInputError(f"labels must lie in [0, {n_classes})")
    return y
