"""Input validation helpers shared by the estimator facade and the CLI."""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch
from .system import LinearSystem


def as_float_array(value, name: str, ndim: int | None = None) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite values")
    if ndim is not None and arr.ndim != ndim:
        raise DimensionMismatch(f"{name} must be {ndim}-dimensional, got ndim={arr.ndim}")
    return arr


def check_states(x, n: int) -> np.ndarray:
    """Validate a batch of states as an (m, n) array (a single state is
    promoted to one row)."""
    arr = as_float_array(x, "X")
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != n:
        raise DimensionMismatch(f"states must have {n} columns, got shape {arr.shape}")
    return arr


def check_system(system) -> LinearSystem:
    if isinstance(system, LinearSystem):
        return system
    if isinstance(system, dict):
        return LinearSystem.from_dict(system)
    raise DimensionMismatch(
        "system must be a LinearSystem or a dict with keys A, B, Q, R, Psi, sigma2"
    )
