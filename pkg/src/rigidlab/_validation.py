"""Small input-checking helpers shared by the estimators."""

import numpy as np
from sklearn.utils.validation import check_array


def check_unit_vector(omega, n=None, atol=1e-12):
    omega = np.asarray(omega, dtype=float).ravel()
    if n is not None and omega.size != n:
        raise ValueError(f"direction has {omega.size} components, expected {n}")
    norm = np.linalg.norm(omega)
    if abs(norm - 1.0) > atol:
        raise ValueError(f"direction must have unit Euclidean norm, got |omega|={norm!r}")
    return omega


def check_points(X, n):
    """Return ``X`` as a float array of shape (N, n); a single point is promoted."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    X = check_array(X, ensure_min_samples=1)
    if X.shape[1] != n:
        raise ValueError(f"points have dimension {X.shape[1]}, expected {n}")
    return X


def check_positive(name, value):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive, got {value!r}")
    return value
