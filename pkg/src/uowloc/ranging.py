"""RSS ranging: power-to-distance inversion and measurement synthesis.

Inverts the optical link budget for distance via the principal branch of
the Lambert W function and builds the partially observed, noise- and
outlier-contaminated pairwise distance matrix for a scenario.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import channel
from .channel import OpticalLink, WaterModel
from .validation import as_mask, as_square, require

_INV_E = math.exp(-1.0)


def lambert_w0(x):
    """Principal branch W0 of the Lambert W function.

    Solves w*exp(w) = x for w >= -1, accurate to 1e-12 relative. Halley
    iteration from a regime-dependent initial guess: a branch-point series
    below -0.25, log(1+x) in the midrange, and the asymptotic log form for
    large arguments. Scalar in, scalar out; arrays are handled elementwise.

    Raises ValueError for x < -1/e (no real solution on this branch).
    """
    arr = np.asarray(x, dtype=float)
    scalar = arr.ndim == 0
    w = np.atleast_1d(arr).astype(float).copy()

    # 4 ulps of slack so x == -1/e survives rounding of the literal.
    if np.any(w < -_INV_E * (1.0 + 4e-16)):
        raise ValueError("lambert_w0 requires x >= -1/e")

    v = np.empty_like(w)
    # series variable around the branch point, clamped against rounding
    p = np.sqrt(np.maximum(2.0 * (np.e * w + 1.0), 0.0))
    near = w < -0.25
    mid = (~near) & (w < 3.0)
    big = w >= 3.0
    v[near] = -1.0 + p[near] * (1.0 - p[near] / 3.0 + 11.0 / 72.0 * p[near] ** 2)
    v[mid] = np.log1p(w[mid])
    lx = np.log(w[big])
    v[big] = lx - np.log(lx)

    # Halley steps; quadratic-plus convergence, so 50 is a generous cap.
    # Points within the series' accuracy floor at the branch point are
    # frozen to avoid dividing by w + 1 = 0.
    active = p > 1e-5
    for _ in range(50):
        if not np.any(active):
            break
        wa = v[active]
        ew = np.exp(wa)
        f = wa * ew - w[active]
        denom = ew * (wa + 1.0) - (wa + 2.0) * f / (2.0 * (wa + 1.0))
        step = f / denom
        v[active] = wa - step
        moved = np.abs(step) > 1e-15 * (1.0 + np.abs(wa))
        idx = np.flatnonzero(active)
        active[idx[~moved]] = False

    return float(v[0]) if scalar else v.reshape(arr.shape)


def invert_power(link: OpticalLink, e: float, p_r) -> float:
    """Distance (m) at which the link would deliver received power p_r (W).

    Closed-form inverse of the link budget. Writing the budget as
    p_r * d^2 = K * exp(-e*d/cos(theta)) with K the geometric prefactor,
    the unique positive root is d = (2*cos(theta)/e) * W0(z) with
    z = (e / (2*cos(theta))) * sqrt(K / p_r); for e = 0 it reduces to the
    inverse-square solution sqrt(K / p_r).

    Raises ValueError for p_r <= 0 or when p_r is too small to invert in
    float arithmetic at the given extinction.
    """
    require(e >= 0, "extinction must be nonnegative")
    p_arr = np.asarray(p_r, dtype=float)
    if np.any(p_arr <= 0):
        raise ValueError("received power must be positive")
    k = channel.geometric_gain(link)
    root = np.sqrt(k / p_arr)
    if e == 0.0:
        out = root
    else:
        cos_t = math.cos(link.theta)
        z = (e / (2.0 * cos_t)) * root
        if not np.all(np.isfinite(z)):
            raise ValueError(
                "received power too small to invert at this extinction"
            )
        out = (2.0 * cos_t / e) * lambert_w0(z)
    return float(out) if np.isscalar(p_r) or p_arr.ndim == 0 else out


@dataclass(frozen=True)
class RangingNoise:
    """Measurement error model for synthesized range estimates.

    sigma: per-link Gaussian standard deviation (m). outlier_prob:
    probability that an observed link carries an additive outlier.
    outlier_scale: maximum outlier magnitude (m); None defers to the
    scenario bounding-box diagonal. seed: RNG seed for generation.
    """

    sigma: float = 0.6
    outlier_prob: float = 0.0
    outlier_scale: float | None = None
    seed: int = 0

    def __post_init__(self):
        require(self.sigma >= 0, "sigma must be nonnegative")
        require(0.0 <= self.outlier_prob <= 1.0, "outlier_prob must lie in [0, 1]")
        if self.outlier_scale is not None:
            require(self.outlier_scale >= 0, "outlier_scale must be nonnegative")


@dataclass
class ObservedDistances:
    """Symmetric, partially observed pairwise distance matrix.

    entries holds measured distances (m) where mask is true and zeros
    elsewhere; the diagonal is always zero and unobserved. truth_outliers
    records the outlier magnitude injected per pair, for simulation
    bookkeeping only.
    """

    size: int
    entries: np.ndarray
    mask: np.ndarray
    truth_outliers: np.ndarray | None = None

    def __post_init__(self):
        # Only observed entries are constrained; masked-out slots may hold
        # anything and are guaranteed to never influence downstream results.
        self.entries = as_square(self.entries, "entries")
        require(self.entries.shape[0] == self.size, "entries shape must match size")
        self.mask = as_mask(self.mask, self.size, "mask")
        observed = self.entries[self.mask]
        require(bool(np.all(np.isfinite(observed))), "observed entries must be finite")
        require(bool(np.all(observed >= 0)), "observed entries must be nonnegative")
        require(
            bool(np.array_equal(observed, self.entries.T[self.mask])),
            "observed entries must be symmetric",
        )
        if self.truth_outliers is not None:
            self.truth_outliers = as_square(self.truth_outliers, "truth_outliers")

    @property
    def n_observed_pairs(self) -> int:
        return int(np.count_nonzero(np.triu(self.mask, 1)))

    def to_dict(self) -> dict:
        """JSON-ready form: upper-triangle triplets; mask implicit by presence."""
        i, j = np.nonzero(np.triu(self.mask, 1))
        out = {
            "n": self.size,
            "entries": [[int(a), int(b), float(self.entries[a, b])] for a, b in zip(i, j)],
        }
        if self.truth_outliers is not None and np.any(self.truth_outliers):
            oi, oj = np.nonzero(np.triu(self.truth_outliers, 1))
            out["truth_outliers"] = [
                [int(a), int(b), float(self.truth_outliers[a, b])] for a, b in zip(oi, oj)
            ]
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ObservedDistances":
        n = int(data["n"])
        entries = np.zeros((n, n))
        mask = np.zeros((n, n), dtype=bool)
        for i, j, value in data["entries"]:
            entries[i, j] = entries[j, i] = float(value)
            mask[i, j] = mask[j, i] = True
        truth = None
        if data.get("truth_outliers"):
            truth = np.zeros((n, n))
            for i, j, value in data["truth_outliers"]:
                truth[i, j] = truth[j, i] = float(value)
        return cls(size=n, entries=entries, mask=mask, truth_outliers=truth)


def save_observations(obs: ObservedDistances, path) -> None:
    with open(path, "w") as fh:
        json.dump(obs.to_dict(), fh, indent=1)


def load_observations(path) -> ObservedDistances:
    with open(path) as fh:
        return ObservedDistances.from_dict(json.load(fh))


def estimate_pairwise(
    scenario, w: WaterModel, link: OpticalLink, noise: RangingNoise
) -> ObservedDistances:
    """Measure every in-range pair of scenario nodes through the channel.

    Each unordered pair whose true separation is within the transmission
    range is pushed through the forward link budget and inverted back with
    lambert_w0, then perturbed with Gaussian noise and, with probability
    outlier_prob, an additive Uniform(0, outlier_scale) outlier; results
    are clamped at zero. Pairs beyond range stay unobserved. Deterministic
    per seed; the mask depends only on geometry, never on the seed.
    """
    positions = scenario.positions
    n = positions.shape[0]
    require(n >= 2, "scenario must contain at least 2 nodes")

    diff = positions[:, None, :] - positions[None, :, :]
    true_d = np.sqrt((diff**2).sum(axis=-1))
    iu, ju = np.triu_indices(n, k=1)
    within = true_d[iu, ju] <= scenario.transmission_range

    entries = np.zeros((n, n))
    mask = np.zeros((n, n), dtype=bool)
    truth_outliers = np.zeros((n, n))

    d_pairs = true_d[iu[within], ju[within]]
    if d_pairs.size:
        e = channel.extinction_coefficient(w)
        p_r = channel.received_power(link, e, d_pairs)
        ranged = invert_power(link, e, p_r)

        rng = np.random.default_rng(noise.seed)
        gauss = rng.normal(0.0, noise.sigma, size=d_pairs.size) if noise.sigma > 0 else 0.0
        scale = noise.outlier_scale
        if scale is None:
            scale = float(np.linalg.norm(np.asarray(scenario.region, dtype=float)))
        hit = rng.random(d_pairs.size) < noise.outlier_prob
        outlier = np.where(hit, rng.uniform(0.0, scale, size=d_pairs.size), 0.0)

        measured = np.maximum(ranged + gauss + outlier, 0.0)
        ii, jj = iu[within], ju[within]
        entries[ii, jj] = entries[jj, ii] = measured
        mask[ii, jj] = mask[jj, ii] = True
        truth_outliers[ii, jj] = truth_outliers[jj, ii] = outlier

    return ObservedDistances(
        size=n, entries=entries, mask=mask, truth_outliers=truth_outliers
    )
