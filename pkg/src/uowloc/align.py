"""Anchor alignment of relative localization solutions.

The solver recovers geometry only up to a similarity: translation,
rotation, uniform scale, and possibly a reflection. This module fits the
best proper (rotation-only) similarity mapping estimated anchor positions
onto their surveyed coordinates, and a chirality-aware wrapper that also
tries the mirrored solution and keeps whichever fits the anchors better.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateAnchorsError
from .validation import as_positions

# Centered anchor sets are coplanar when the smallest singular value
# collapses relative to the largest.
_RANK_RTOL = 1e-8
_ORTHO_TOL = 1e-10


@dataclass(frozen=True)
class SimilarityTransform:
    """Proper similarity p -> beta * p @ omega + upsilon (rows as points).

    beta is a positive scale, omega a proper rotation (orthogonal,
    determinant +1), upsilon a translation. Validated on construction.
    """

    beta: float
    omega: np.ndarray
    upsilon: np.ndarray

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        omega = np.asarray(self.omega, dtype=float)
        upsilon = np.asarray(self.upsilon, dtype=float)
        if omega.shape != (3, 3):
            raise ValueError(f"omega must be 3x3, got {omega.shape}")
        if upsilon.shape != (3,):
            raise ValueError(f"upsilon must be a 3-vector, got {upsilon.shape}")
        if not np.allclose(omega.T @ omega, np.eye(3), atol=_ORTHO_TOL):
            raise ValueError("omega must be orthogonal")
        if not abs(np.linalg.det(omega) - 1.0) <= _ORTHO_TOL:
            raise ValueError("omega must have determinant +1 (no reflection)")
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "upsilon", upsilon)

    def to_dict(self) -> dict:
        return {
            "beta": float(self.beta),
            "omega": [float(v) for v in self.omega.ravel()],
            "upsilon": [float(v) for v in self.upsilon],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimilarityTransform":
        return cls(
            beta=float(data["beta"]),
            omega=np.asarray(data["omega"], dtype=float).reshape(3, 3),
            upsilon=np.asarray(data["upsilon"], dtype=float),
        )


def apply_transform(positions: np.ndarray, tf: SimilarityTransform) -> np.ndarray:
    """Map each row p to beta * p @ omega + upsilon."""
    p = as_positions(positions)
    return tf.beta * p @ tf.omega + tf.upsilon


def _check_span(centered: np.ndarray, name: str) -> None:
    s = np.linalg.svd(centered, compute_uv=False)
    if s[0] == 0.0 or s[2] / s[0] < _RANK_RTOL:
        raise DegenerateAnchorsError(
            f"{name} anchor set is degenerate (coplanar or collinear); "
            "alignment needs at least four points spanning three dimensions"
        )


def fit_procrustes(estimated: np.ndarray, true: np.ndarray) -> SimilarityTransform:
    """Least-squares proper similarity from estimated points to true points.

    Minimizes sum_k || beta * p_k @ omega + upsilon - b_k ||^2 over all
    proper similarities. Both point sets must contain at least four points
    and span three dimensions after centering; a flat or collinear set
    cannot pin down the rotation (and leaves the reflection ambiguous), so
    it is rejected outright.
    """
    x = as_positions(estimated, "estimated")
    y = as_positions(true, "true")
    if x.shape != y.shape:
        raise ValueError(
            f"point sets must match in shape, got {x.shape} and {y.shape}"
        )
    if x.shape[0] < 4:
        raise DegenerateAnchorsError(
            f"alignment needs at least 4 point pairs, got {x.shape[0]}"
        )

    x_mean = x.mean(axis=0)
    y_mean = y.mean(axis=0)
    xc = x - x_mean
    yc = y - y_mean
    _check_span(xc, "estimated")
    _check_span(yc, "true")

    m = xc.T @ yc
    u, s, vt = np.linalg.svd(m)
    sign = np.sign(np.linalg.det(u @ vt))
    d = np.array([1.0, 1.0, sign])
    omega = u @ np.diag(d) @ vt
    beta = float((d * s).sum() / (xc**2).sum())
    upsilon = y_mean - beta * x_mean @ omega
    return SimilarityTransform(beta=beta, omega=omega, upsilon=upsilon)


def anchor_residual_rms(
    positions: np.ndarray, true: np.ndarray, tf: SimilarityTransform
) -> float:
    """RMS distance between transformed points and their targets."""
    mapped = apply_transform(positions, tf)
    return float(np.sqrt(((mapped - true) ** 2).sum(axis=1).mean()))


def align_to_anchors(
    positions: np.ndarray,
    anchor_indices: np.ndarray,
    anchor_truth: np.ndarray,
) -> tuple[np.ndarray, SimilarityTransform, bool]:
    """Align a relative solution to surveyed anchors, resolving chirality.

    A distance-only solution carries an unknowable handedness: the mirror
    image fits every measurement equally well, and a proper similarity can
    never undo a reflection. Both the solution and its z-negated copy are
    therefore fitted to the anchors and the one with the smaller anchor
    residual wins. Returns (aligned_positions, transform, mirrored); when
    mirrored is True the transform applies to the z-negated input. Anchor
    geometry must be non-coplanar, otherwise the two fits tie and the
    choice would be a coin flip.
    """
    p = as_positions(positions)
    idx = np.asarray(anchor_indices, dtype=int)
    truth = as_positions(anchor_truth, "anchor_truth")
    if idx.ndim != 1 or idx.shape[0] != truth.shape[0]:
        raise ValueError("anchor_indices must pair one index per truth row")

    flipped = p * np.array([1.0, 1.0, -1.0])
    tf_direct = fit_procrustes(p[idx], truth)
    tf_mirror = fit_procrustes(flipped[idx], truth)
    res_direct = anchor_residual_rms(p[idx], truth, tf_direct)
    res_mirror = anchor_residual_rms(flipped[idx], truth, tf_mirror)

    if res_mirror < res_direct:
        return apply_transform(flipped, tf_mirror), tf_mirror, True
    return apply_transform(p, tf_direct), tf_direct, False


def save_transform(tf: SimilarityTransform, path) -> None:
    with open(path, "w") as fh:
        json.dump(tf.to_dict(), fh, indent=1)


def load_transform(path) -> SimilarityTransform:
    with open(path) as fh:
        return SimilarityTransform.from_dict(json.load(fh))
