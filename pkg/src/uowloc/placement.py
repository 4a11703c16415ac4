"""Anchor depth optimization via the range-only Fisher information matrix.

Surface buoys can winch their optical heads down to chosen depths, and
the choice matters: localization error is bounded below by the CRLB,
whose vertical component blows up when all anchors see a node from
similar elevation angles. This module builds the FIM of a single node
position from ranges to the anchors, extracts the CRLB diagonal, sums
the vertical component over all unknown nodes as the design objective,
and descends it with a projected, backtracking gradient scheme acting on
the anchor depths alone (horizontal anchor positions stay surveyed and
fixed).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import SingularGeometryError
from .validation import as_positions

# det(J) at or below this times the cubed mean eigenvalue scale counts
# as numerically singular.
_DET_RTOL = 1e-12

_ARMIJO_MAX_BACKTRACKS = 60
_GRAD_NORM_FLOOR = 1e-10

# Width of the smooth in-range gate as a fraction of the transmission
# range, floored at one metre so the finite-difference depth gradient
# never straddles a cliff.
_GATE_WIDTH_FRACTION = 0.02


@dataclass(frozen=True)
class PlacementConfig:
    """Backtracking-descent knobs for the depth optimizer.

    mu: initial trial step. delta: backtracking shrink factor. c1: Armijo
    sufficient-decrease constant. h: central-difference half-width for the
    depth gradient. max_outer: cap on accepted descent iterations.
    """

    mu: float = 10.0
    delta: float = 0.5
    c1: float = 1e-4
    h: float = 1e-3
    max_outer: int = 100

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError("mu must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if not 0 < self.c1 < 1:
            raise ValueError("c1 must lie in (0, 1)")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")


class Crlb(NamedTuple):
    """Diagonal of the inverse FIM: positional error lower bounds."""

    cx: float
    cy: float
    cz: float


@dataclass
class PlacementResult:
    """Optimized anchors plus the descent trace.

    trace rows are (objective, step_size); the first row logs the starting
    objective with step 0, and objectives decrease strictly down the rows.
    """

    anchors: np.ndarray
    objective: float
    trace: list[tuple[float, float]] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


def _as_sigmas(sigmas, n_anchors: int) -> np.ndarray:
    s = np.asarray(sigmas, dtype=float)
    if s.ndim == 0:
        s = np.full(n_anchors, float(s))
    if s.shape != (n_anchors,):
        raise ValueError(
            f"sigmas must be scalar or length {n_anchors}, got shape {s.shape}"
        )
    if not np.all(s > 0):
        raise ValueError("ranging sigmas must be positive")
    return s


def _fim_stack(nodes: np.ndarray, anchors: np.ndarray, sigmas: np.ndarray,
               transmission_range: float | None = None,
               prior_information=None) -> np.ndarray:
    """FIMs of every node at once, shape (K, 3, 3).

    With a transmission_range, each anchor term is faded out smoothly as
    the pair separation crosses it: a link that cannot close carries no
    ranging information, whatever the formula says. prior_information
    (scalar or per-axis 3-vector, 1/m^2) is added to the diagonal.
    """
    diff = nodes[:, None, :] - anchors[None, :, :]
    d2 = (diff**2).sum(axis=-1)
    if np.any(d2 == 0.0):
        k, i = np.argwhere(d2 == 0.0)[0]
        raise SingularGeometryError(
            f"node {k} coincides with anchor {i}; range information "
            "is undefined at zero distance"
        )
    w = 1.0 / (sigmas[None, :] ** 2 * d2)
    if transmission_range is not None:
        width = max(_GATE_WIDTH_FRACTION * transmission_range, 1.0)
        gap = (np.sqrt(d2) - transmission_range) / width
        w = w / (1.0 + np.exp(np.clip(gap, -60.0, 60.0)))
    j = np.einsum("ki,kia,kib->kab", w, diff, diff)
    if prior_information is not None:
        j = j + np.diag(np.broadcast_to(
            np.asarray(prior_information, dtype=float), (3,)
        ))
    return j


def fim(node: np.ndarray, anchors: np.ndarray, sigmas) -> np.ndarray:
    """Fisher information of one node position from anchor ranges.

    J_ab = sum_i (node_a - anchor_i_a)(node_b - anchor_i_b) / (sigma_i d_i)^2
    where d_i is the node-anchor distance. Gaussian range errors with
    per-anchor standard deviations sigma_i (a scalar is broadcast).
    """
    node = np.asarray(node, dtype=float)
    if node.shape != (3,):
        raise ValueError(f"node must be a 3-vector, got shape {node.shape}")
    a = as_positions(anchors, "anchors")
    s = _as_sigmas(sigmas, a.shape[0])
    return _fim_stack(node[None, :], a, s)[0]


def _crlb_diag(j: np.ndarray) -> tuple[float, float, float]:
    det = float(np.linalg.det(j))
    scale = float(np.trace(j)) / 3.0
    if det <= _DET_RTOL * scale**3 or det <= 0.0:
        raise SingularGeometryError(
            "Fisher information matrix is singular; the anchor geometry "
            "does not determine all three coordinates"
        )
    cx = (j[1, 1] * j[2, 2] - j[1, 2] ** 2) / det
    cy = (j[0, 0] * j[2, 2] - j[0, 2] ** 2) / det
    cz = (j[0, 0] * j[1, 1] - j[0, 1] ** 2) / det
    return float(cx), float(cy), float(cz)


def crlb(j: np.ndarray) -> Crlb:
    """CRLB per axis: the diagonal of the inverse FIM, by cofactors."""
    j = np.asarray(j, dtype=float)
    if j.shape != (3, 3):
        raise ValueError(f"FIM must be 3x3, got shape {j.shape}")
    return Crlb(*_crlb_diag(j))


def depth_objective(nodes: np.ndarray, anchors: np.ndarray, sigmas,
                    transmission_range: float | None = None,
                    prior_information=None) -> float:
    """Sum of vertical CRLBs over all unknown nodes.

    The design criterion for anchor depths: total lower bound on the
    z-coordinate error variance. Singular geometry is reported with the
    offending node index.

    By default every anchor informs every node, which is the right model
    when the ranging graph is complete. On range-limited deployments pass
    transmission_range so anchors beyond reach stop counting, and
    prior_information (1/m^2, scalar or per-axis) so nodes no anchor can
    reach contribute a bounded term instead of a singularity; the uniform
    deployment-box prior 12/length^2 per axis is the natural choice.
    """
    nodes = as_positions(nodes, "nodes")
    a = as_positions(anchors, "anchors")
    s = _as_sigmas(sigmas, a.shape[0])
    j = _fim_stack(nodes, a, s, transmission_range, prior_information)
    det = np.linalg.det(j)
    scale = np.trace(j, axis1=1, axis2=2) / 3.0
    bad = (det <= _DET_RTOL * scale**3) | (det <= 0.0)
    if np.any(bad):
        k = int(np.argmax(bad))
        raise SingularGeometryError(
            f"node {k}: Fisher information matrix is singular; the anchor "
            "geometry does not determine all three coordinates"
        )
    cz = (j[:, 0, 0] * j[:, 1, 1] - j[:, 0, 1] ** 2) / det
    return float(cz.sum())


def d_optimality(nodes: np.ndarray, anchors: np.ndarray, sigmas) -> float:
    """Sum of FIM determinants over nodes. Diagnostic companion metric."""
    nodes = as_positions(nodes, "nodes")
    a = as_positions(anchors, "anchors")
    s = _as_sigmas(sigmas, a.shape[0])
    return float(np.linalg.det(_fim_stack(nodes, a, s)).sum())


def _depth_gradient(nodes, anchors, sigmas, h: float,
                    transmission_range=None, prior_information=None) -> np.ndarray:
    """Central-difference gradient of the objective in the anchor depths."""
    grad = np.zeros(anchors.shape[0])
    for i in range(anchors.shape[0]):
        hi = anchors.copy()
        lo = anchors.copy()
        hi[i, 2] += h
        lo[i, 2] -= h
        grad[i] = (
            depth_objective(nodes, hi, sigmas, transmission_range,
                            prior_information)
            - depth_objective(nodes, lo, sigmas, transmission_range,
                              prior_information)
        ) / (2.0 * h)
    return grad


def optimize_depths(
    nodes: np.ndarray,
    anchors: np.ndarray,
    sigmas,
    config: PlacementConfig = PlacementConfig(),
    z_bounds: tuple[float, float] | None = None,
    transmission_range: float | None = None,
    prior_information=None,
) -> PlacementResult:
    """Descend the summed vertical CRLB by adjusting anchor depths.

    Projected gradient descent on the anchor z coordinates with Armijo
    backtracking: trial steps mu * delta^s, the first s in 0..60 whose
    projected point satisfies the sufficient-decrease test is accepted.
    x and y stay fixed. z is clipped to z_bounds when given. Stops when
    no trial step decreases the objective, when the depth gradient norm
    falls below 1e-10, or after max_outer accepted steps; the first two
    count as converged.

    transmission_range and prior_information forward to depth_objective;
    on range-limited deployments they keep the search from parking buoys
    where no node can hear them, which the unweighted criterion would
    happily reward.

    Trial points with singular geometry are treated as failed steps, not
    errors, so the search simply backs away from them.
    """
    nodes = as_positions(nodes, "nodes")
    a = as_positions(anchors, "anchors").copy()
    s = _as_sigmas(sigmas, a.shape[0])
    if z_bounds is not None:
        z_lo, z_hi = float(z_bounds[0]), float(z_bounds[1])
        if not z_lo < z_hi:
            raise ValueError("z_bounds must satisfy lo < hi")
        a[:, 2] = np.clip(a[:, 2], z_lo, z_hi)

    q = depth_objective(nodes, a, s, transmission_range, prior_information)
    trace = [(q, 0.0)]
    iterations = 0
    converged = False

    while iterations < config.max_outer:
        grad = _depth_gradient(nodes, a, s, config.h, transmission_range,
                               prior_information)
        gnorm2 = float(grad @ grad)
        if np.sqrt(gnorm2) <= _GRAD_NORM_FLOOR:
            converged = True
            break

        accepted = None
        for back in range(_ARMIJO_MAX_BACKTRACKS + 1):
            step = config.mu * config.delta**back
            trial = a.copy()
            trial[:, 2] = a[:, 2] - step * grad
            if z_bounds is not None:
                trial[:, 2] = np.clip(trial[:, 2], z_lo, z_hi)
            try:
                q_trial = depth_objective(nodes, trial, s,
                                          transmission_range,
                                          prior_information)
            except SingularGeometryError:
                continue
            # The extra q_trial < q keeps the trace strictly decreasing
            # even when the Armijo margin underflows next to q.
            if q_trial < q and q_trial <= q - config.c1 * step * gnorm2:
                accepted = (trial, q_trial, step)
                break

        if accepted is None:
            converged = True
            break

        a, q, step = accepted
        iterations += 1
        trace.append((q, step))

    return PlacementResult(
        anchors=a,
        objective=q,
        trace=trace,
        iterations=iterations,
        converged=converged,
    )
