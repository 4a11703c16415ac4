"""Small input-validation helpers used by the public entry points."""

from __future__ import annotations

import numpy as np


def as_positions(arr, name: str = "positions") -> np.ndarray:
    """Coerce to a finite (N, 3) float array or raise ValueError."""
    out = np.asarray(arr, dtype=float)
    if out.ndim != 2 or out.shape[1] != 3:
        raise ValueError(f"{name} must have shape (N, 3), got {out.shape}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite values")
    return out


def as_square(arr, name: str = "matrix") -> np.ndarray:
    """Coerce to a square 2-D float array or raise ValueError."""
    out = np.asarray(arr, dtype=float)
    if out.ndim != 2 or out.shape[0] != out.shape[1]:
        raise ValueError(f"{name} must be square, got shape {out.shape}")
    return out


def as_symmetric(arr, name: str = "matrix", tol: float = 0.0) -> np.ndarray:
    out = as_square(arr, name)
    if not np.allclose(out, out.T, rtol=0.0, atol=tol):
        raise ValueError(f"{name} must be symmetric")
    return out


def as_mask(arr, n: int, name: str = "mask") -> np.ndarray:
    """Coerce to a symmetric (n, n) boolean mask with a false diagonal."""
    out = np.asarray(arr)
    if out.shape != (n, n):
        raise ValueError(f"{name} must have shape ({n}, {n}), got {out.shape}")
    out = out.astype(bool)
    if not np.array_equal(out, out.T):
        raise ValueError(f"{name} must be symmetric")
    if np.any(np.diag(out)):
        raise ValueError(f"{name} must be false on the diagonal")
    return out


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)
