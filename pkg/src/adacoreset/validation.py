"""Input validation helpers shared by the data containers and the estimator."""

from __future__ import annotations

import numpy as np

MODEL_KINDS = ("gaussian_location", "linear_reg", "logistic_reg", "poisson_reg")


def as_float_matrix(X, name: str = "X") -> np.ndarray:
    """Coerce to a 2-d float64 array and require every entry finite."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {X.shape}")
    if X.shape[0] < 1:
        raise ValueError(f"{name} must contain at least one row")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite entries")
    return X


def as_response_vector(y, kind: str, n_rows: int, name: str = "y") -> np.ndarray:
    """Coerce responses to float64 and enforce the domain for the model kind."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != n_rows:
        raise ValueError(f"{name} has {y.shape[0]} entries for {n_rows} rows")
    if not np.all(np.isfinite(y)):
        raise ValueError(f"{name} contains non-finite entries")
    if kind == "logistic_reg":
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("logistic responses must be in {0, 1}")
    elif kind == "poisson_reg":
        if np.any(y < 0) or np.any(y != np.floor(y)):
            raise ValueError("poisson responses must be nonnegative integers")
    return y


def check_kind(kind: str) -> str:
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return kind


def check_parameter(theta, dim: int) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64).reshape(-1)
    if theta.shape[0] != dim:
        raise ValueError(f"parameter has length {theta.shape[0]}, model dimension is {dim}")
    return theta
