"""Scikit-learn style front ends for localization and alignment.

RobustLocalizer mirrors the precomputed-dissimilarity embedding API:
fit on a partially observed pairwise distance matrix (NaN for missing
pairs), read the recovered coordinates off ``embedding_``. It composes
with the usual estimator tooling (get_params, set_params, clone).
ProcrustesAlignment is a paired-points transformer fitting the proper
similarity that maps its X onto its y.
"""

from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .align import apply_transform, fit_procrustes
from .ranging import ObservedDistances
from .solver import SolverConfig, solve
from .validation import as_positions


class RobustLocalizer(BaseEstimator):
    """Outlier-tolerant 3D embedding of a partial distance matrix.

    Parameters follow the solver: lambda1 is the outlier sparsity weight
    ("adaptive" or None for residual-scaled, "inf" or math.inf to disable
    outlier estimation, any nonnegative float as given), lambda2 the
    position ridge, c the half-quadratic constant, rho the robust-loss
    threshold, loss one of huber/tukey/l2, trim drops flagged links from
    the fit instead of merely shrinking them. init is "auto" for the
    deterministic distance-geometry start or "random"; random_state only
    matters for the latter.

    After fit: embedding_ (N, 3), outliers_ (N, N), objective_trace_,
    n_iter_, converged_. The embedding is relative; anchor it with
    ProcrustesAlignment.
    """

    def __init__(
        self,
        lambda1=None,
        lambda2=0.0,
        c=1.0,
        rho=1.345,
        loss="l2",
        trim=True,
        max_iters=500,
        tol=1e-6,
        init="auto",
        random_state=0,
    ):
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.c = c
        self.rho = rho
        self.loss = loss
        self.trim = trim
        self.max_iters = max_iters
        self.tol = tol
        self.init = init
        self.random_state = random_state

    def _solver_config(self) -> SolverConfig:
        lam1 = self.lambda1
        if isinstance(lam1, str):
            text = lam1.strip().lower()
            if text == "adaptive":
                lam1 = None
            elif text in ("inf", "infinity"):
                lam1 = math.inf
            else:
                raise ValueError(
                    f"lambda1 must be 'adaptive', 'inf', or a number, got {lam1!r}"
                )
        return SolverConfig(
            lambda1=lam1,
            lambda2=self.lambda2,
            c=self.c,
            rho=self.rho,
            loss=self.loss,
            trim=self.trim,
            max_iters=self.max_iters,
            tol=self.tol,
        )

    @staticmethod
    def _as_observations(X) -> ObservedDistances:
        arr = np.asarray(X, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise ValueError(
                f"X must be a square pairwise distance matrix, got shape {arr.shape}"
            )
        mask = np.isfinite(arr)
        np.fill_diagonal(mask, False)
        if not np.array_equal(mask, mask.T):
            raise ValueError("observation pattern must be symmetric")
        return ObservedDistances(
            size=arr.shape[0],
            entries=np.where(mask, arr, 0.0),
            mask=mask,
        )

    def fit(self, X, y=None):
        """Embed X, a square distance matrix with NaN marking missing pairs."""
        obs = self._as_observations(X)
        if self.init == "auto":
            init = None
        elif self.init == "random":
            init = "random"
        else:
            raise ValueError(f"init must be 'auto' or 'random', got {self.init!r}")
        state = solve(
            obs,
            self._solver_config(),
            init=init,
            random_state=self.random_state,
        )
        self.embedding_ = state.positions
        self.outliers_ = state.outliers
        self.objective_trace_ = np.asarray(state.objective_trace)
        self.n_iter_ = state.iteration
        self.converged_ = state.converged
        return self

    def fit_transform(self, X, y=None) -> np.ndarray:
        """Fit and return the embedded coordinates."""
        return self.fit(X, y).embedding_


class ProcrustesAlignment(BaseEstimator, TransformerMixin):
    """Proper-similarity registration of paired 3D point sets.

    fit(X, y) finds the reflection-free similarity minimizing
    ||beta * X @ omega + upsilon - y||^2; transform applies it and
    inverse_transform undoes it. Both point sets must have at least four
    non-coplanar points.
    """

    def fit(self, X, y):
        tf = fit_procrustes(X, y)
        self.transform_ = tf
        self.beta_ = tf.beta
        self.omega_ = tf.omega
        self.upsilon_ = tf.upsilon
        return self

    def transform(self, X) -> np.ndarray:
        self._check_fitted()
        return apply_transform(X, self.transform_)

    def fit_transform(self, X, y=None) -> np.ndarray:
        return self.fit(X, y).transform(X)

    def inverse_transform(self, X) -> np.ndarray:
        self._check_fitted()
        p = as_positions(X)
        return (p - self.upsilon_) @ self.omega_.T / self.beta_

    def _check_fitted(self) -> None:
        if not hasattr(self, "transform_"):
            raise RuntimeError(
                "this ProcrustesAlignment instance is not fitted yet"
            )
