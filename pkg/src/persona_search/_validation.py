"""Input validation helpers shared by the estimators and pure functions."""
from __future__ import annotations

import math
from typing import Iterable, Mapping

import numpy as np
from sklearn.utils import check_array

DIST_TOL = 1e-9


def check_distribution(probs: Mapping[str, float] | Iterable[float], name: str = "distribution") -> None:
    values = list(probs.values()) if isinstance(probs, Mapping) else list(probs)
    if not values:
        raise ValueError(f"{name} is empty")
    if any((not math.isfinite(p)) or p < 0 for p in values):
        raise ValueError(f"{name} has negative or non-finite entries")
    if abs(sum(values) - 1.0) > DIST_TOL:
        raise ValueError(f"{name} sums to {sum(values)!r}, expected 1")


def check_features(x, d: int | None = None) -> np.ndarray:
    """Validate a single feature vector and return it as a 1-d float array."""
    arr = check_array(np.asarray(x, dtype=float).reshape(1, -1), ensure_all_finite=True)[0]
    if d is not None and arr.shape[0] != d:
        raise ValueError(f"feature dimension {arr.shape[0]} != expected {d}")
    return arr


def check_feature_matrix(X, d: int | None = None) -> np.ndarray:
    arr = check_array(X, dtype=float, ensure_all_finite=True)
    if d is not None and arr.shape[1] != d:
        raise ValueError(f"feature dimension {arr.shape[1]} != expected {d}")
    return arr


def check_positive(value: float, name: str, strict: bool = True) -> None:
    if not math.isfinite(value) or (value <= 0 if strict else value < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {value!r}")
