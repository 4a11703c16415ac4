"""Robust network localization from partial pairwise distances.

Alternating scheme that jointly estimates relative 3D positions and a
sparse additive outlier matrix from an incomplete, noisy distance matrix.
Outliers are shrunk by soft thresholding, the stress term is majorized
through a pair of graph Laplacians, heavy-tailed residuals are absorbed
by half-quadratic auxiliary variables, and positions are refreshed by a
closed-form linear solve. In trim mode (default) the pairs currently
flagged as outliers are dropped from the quadratic term entirely, so a
gross corruption cannot bleed a shrinkage bias into the geometry; the
flag threshold tracks the noise scale of the unflagged residuals and
tightens as the fit improves. The recovered geometry is relative; anchor
alignment lives in the align module.

solve_anchored is the deployment entry point: it keeps the anchors fixed
at their surveyed coordinates inside the iteration itself and searches
several starting configurations, because on range-limited graphs the
relative problem often has near-zero-stress folds that no amount of
post-hoc alignment can undo.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import minimum_spanning_tree, shortest_path

from .align import align_to_anchors
from .errors import DisconnectedGraphError, UowlocError
from .ranging import ObservedDistances
from .validation import as_positions

_LOSSES = ("huber", "tukey", "l2")

# Trimming flags a pair when its residual exceeds 3 robust standard
# deviations of the unflagged residual pool (1.4826 converts MAD to a
# Gaussian-consistent sigma).
_TRIM_SIGMAS = 3.0
_MADN = 1.4826

# Robust scales collapse when most links fit exactly: on noise-free
# data a partial fold can satisfy over half the pairs to machine
# precision, the residual MAD drops to zero, and the contradicted
# minority is silenced even though it is off by metres. Ranges here
# are metre-scale, so a residual spread below a metre is never the
# difference between a right and a wrong embedding; flooring the
# robust scale keeps metre-scale contradictions pulling.
_SCALE_FLOOR = 1.0

# solve_anchored candidate search: reweighting rounds and majorization
# steps per round for each candidate. Candidates are ranked by the
# median squared residual (50% breakdown) plus a small mean-squared
# blend: with exact measurements a reflection fold can fit over half
# the links perfectly, tying the median at zero, and only the mean
# notices the contradicted tail. Every candidate is evaluated; a fixed
# fit-quality cutoff cannot tell a true fit under heavy noise from a
# fold on clean data, so there is no early exit. Random restarts get a
# short rough pass and only the best of them is refined in full.
_IRLS_ROUNDS = 80
_IRLS_INNER = 25
_RESTART_ROUNDS = 20
_SCORE_BLEND = 1e-6
_FLIP_PASSES = 3


@dataclass(frozen=True)
class SolverConfig:
    """Tuning knobs for one localization run.

    lambda1: outlier sparsity weight. None (default) adapts it every
        iteration: with trim on, to 2 * (3 * 1.4826 * MAD) of the
        residuals on currently trusted pairs, so the dead zone sits three
        robust sigmas out and tightens as the fit improves; with trim
        off, to 2 * (1.345 * MAD) of all residuals. math.inf disables
        outlier estimation entirely (O pinned to zero); any finite value
        >= 0 is used as given.
    lambda2: position ridge weight. Default 0 solves the normal equations
        through the pseudo-inverse, the pure majorization update. Any
        positive value contracts the weakly constrained modes of the
        observation graph toward the origin; on partial graphs that
        contraction is anisotropic and survives Procrustes alignment, so
        a large ridge (e.g. 150) visibly distorts sparse scenes even
        though it is harmless on complete graphs, where it reduces to a
        uniform rescale that alignment removes exactly.
    c: half-quadratic constant (default 1).
    rho: residual-loss threshold (default 1.345, the usual Huber choice;
        4.685 is the matching Tukey value).
    loss: l2 (default), huber, or tukey. l2 keeps the auxiliary matrix at
        zero, which preserves the exact majorization geometry; huber and
        tukey route the tail of the node-space majorization residual into
        the auxiliaries instead, and are ablation options.
    trim: drop flagged pairs from the quadratic term while they are
        flagged (default on). Without trimming every flagged pair keeps
        pulling with a residual bias of lambda1/2 left by the shrinkage,
        and under heavy contamination those ghost forces compound:
        the configuration inflates, more pairs get flagged, and the fit
        walks away from the data. Trimming removes the ghost force; the
        pair re-enters the moment its residual drops inside the dead
        zone. Pairs are never trimmed to the point of disconnecting the
        graph; the least-suspicious bridges are kept.
    max_iters / tol: iteration cap and relative Frobenius change in P at
        which the run is declared converged.
    """

    lambda1: float | None = None
    lambda2: float = 0.0
    c: float = 1.0
    rho: float = 1.345
    loss: str = "l2"
    trim: bool = True
    max_iters: int = 500
    tol: float = 1e-6

    def __post_init__(self):
        if self.lambda1 is not None and not self.lambda1 >= 0:
            raise ValueError("lambda1 must be nonnegative, inf, or None")
        if not self.lambda2 >= 0:
            raise ValueError("lambda2 must be nonnegative")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.loss not in _LOSSES:
            raise ValueError(f"loss must be one of {_LOSSES}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass
class SolverState:
    """Iterate snapshot: positions P, outliers O, auxiliaries A, trace."""

    positions: np.ndarray
    outliers: np.ndarray
    aux: np.ndarray
    iteration: int = 0
    objective_trace: list[float] = field(default_factory=list)
    converged: bool = False


@dataclass
class GraphLaplacians:
    """Fixed observation Laplacian and the per-iteration majorization one."""

    base: np.ndarray
    plus: np.ndarray


def soft_threshold(x, lambda1: float):
    """Shrinkage operator sign(x) * max(|x| - lambda1/2, 0).

    Exact minimizer of (x - o)^2 + lambda1*|o| over o, hence the proximal
    update for the outlier entries. Works elementwise on arrays.
    """
    if not lambda1 >= 0:
        raise ValueError("lambda1 must be nonnegative")
    arr = np.asarray(x, dtype=float)
    if math.isinf(lambda1):
        out = np.zeros_like(arr)
    else:
        out = np.sign(arr) * np.maximum(np.abs(arr) - lambda1 / 2.0, 0.0)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """Dense Euclidean distance matrix of an (N, 3) configuration."""
    diff = positions[:, None, :] - positions[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def adaptive_lambda1(residuals: np.ndarray) -> float:
    """Default outlier weight: 2 * (1.345 * MAD) of the given residuals."""
    med = np.median(residuals)
    mad = np.median(np.abs(residuals - med))
    return float(2.0 * 1.345 * mad)


def _trim_lambda1(residuals: np.ndarray) -> float:
    # dead zone at 3 robust sigmas of the trusted-pair residuals, never
    # narrower than a metre so exact fits do not absorb honest links
    med = np.median(residuals)
    mad = np.median(np.abs(residuals - med))
    return float(max(2.0 * _TRIM_SIGMAS * _MADN * mad, 2.0 * _SCALE_FLOOR))


def base_laplacian(mask: np.ndarray) -> np.ndarray:
    """Unit-weight graph Laplacian of the observation mask.

    Degree on the diagonal, -1 for observed pairs. For a complete mask
    this is the dense matrix with diagonal N-1 and off-diagonal -1.
    """
    m = np.asarray(mask, dtype=bool)
    off = -m.astype(float)
    np.fill_diagonal(off, 0.0)
    lap = off.copy()
    np.fill_diagonal(lap, -off.sum(axis=1))
    return lap


def laplacian_plus(
    positions: np.ndarray, outliers: np.ndarray, obs: ObservedDistances
) -> np.ndarray:
    """Majorization Laplacian rebuilt from the current iterate.

    Off-diagonal (i, j): -(dhat_ij - o_ij) / d_ij(P) for observed pairs
    with d_ij(P) != 0 and dhat_ij > o_ij; zero for coincident points, for
    pairs whose measurement is fully absorbed by the outlier estimate,
    and for unobserved pairs. Diagonal: negative row sum, so row sums
    vanish identically.
    """
    d = pairwise_distances(as_positions(positions))
    return _laplacian_plus(d, outliers, obs.entries, obs.mask)


def _laplacian_plus(d, outliers, entries, mask, weights=None) -> np.ndarray:
    target = entries - outliers
    live = mask & (d > 0.0) & (target > 0.0)
    off = np.where(live, -target / np.where(d > 0.0, d, 1.0), 0.0)
    if weights is not None:
        off = off * weights
    np.fill_diagonal(off, 0.0)
    lap = off.copy()
    np.fill_diagonal(lap, -off.sum(axis=1))
    return lap


def _weighted_laplacian(weights: np.ndarray) -> np.ndarray:
    off = -weights.copy()
    np.fill_diagonal(off, 0.0)
    lap = off.copy()
    np.fill_diagonal(lap, -off.sum(axis=1))
    return lap


def hq_minimizer(residual, rho: float, loss: str = "huber") -> np.ndarray:
    """Auxiliary-variable update A = mu(residual) for the chosen loss.

    huber: the auxiliary absorbs the residual tail beyond rho, leaving a
    clipped quadratic part. tukey: beyond rho the full residual moves to
    the auxiliary (hard redescent), inside it follows the biweight curve.
    l2: always zero, reducing the scheme to plain least squares.
    """
    if not rho > 0:
        raise ValueError("rho must be positive")
    r = np.asarray(residual, dtype=float)
    if loss == "huber":
        return np.sign(r) * np.maximum(np.abs(r) - rho, 0.0)
    if loss == "tukey":
        inner = r * (1.0 - (1.0 - (r / rho) ** 2) ** 2)
        return np.where(np.abs(r) > rho, r, inner)
    if loss == "l2":
        return np.zeros_like(r)
    raise ValueError(f"loss must be one of {_LOSSES}")


def update_outliers(state: SolverState, obs: ObservedDistances,
                    lambda1: float) -> np.ndarray:
    """Refresh O by soft-thresholding the current distance residuals."""
    d = pairwise_distances(state.positions)
    resid = np.where(obs.mask, obs.entries - d, 0.0)
    out = np.where(obs.mask, soft_threshold(resid, lambda1), 0.0)
    return out


def update_positions(
    state: SolverState, laplacians: GraphLaplacians, config: SolverConfig
) -> tuple[np.ndarray, np.ndarray]:
    """One closed-form position refresh; returns (P_next, A_next).

    A_next = mu(L P - L+ P) absorbs heavy residual rows, then P_next
    solves the ridge normal equations
    (c L^T L + lambda2 I) P = c L^T (L+ P + A_next / c).
    With lambda2 = 0 the system is solved through the pseudo-inverse,
    which is well defined whenever the graph behind L is connected (the
    only null direction is the all-ones translation mode); a genuinely
    singular system still surfaces as a numerical error.
    """
    lap, lap_plus = laplacians.base, laplacians.plus
    p = state.positions
    lp = lap @ p
    lpp = lap_plus @ p
    a_next = hq_minimizer(lp - lpp, config.rho, config.loss)
    rhs = config.c * (lap.T @ (lpp + a_next / config.c))
    gram = config.c * (lap.T @ lap)
    if config.lambda2 > 0:
        system = gram + config.lambda2 * np.eye(lap.shape[0])
        p_next = np.linalg.solve(system, rhs)
    else:
        p_next = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return p_next, a_next


def objective(state: SolverState, obs: ObservedDistances,
              config: SolverConfig) -> float:
    """Penalized stress: sum of squared adjusted residuals plus the L1 term.

    Sum over observed pairs of (dhat - d(P) - o)^2 plus lambda1 * sum |o|
    with unit pair weights. In adaptive mode lambda1 is evaluated from the
    current residuals; with lambda1 = inf and O = 0 the penalty is zero.
    """
    d = pairwise_distances(state.positions)
    lam1 = _lambda1_value(config, obs, d)
    return _objective_value(obs.entries, obs.mask, d, state.outliers, lam1)


def _objective_value(entries, mask, d, outliers, lam1) -> float:
    triu = np.triu(mask, 1)
    resid = (entries - d - outliers)[triu]
    data = float((resid**2).sum())
    abs_o = float(np.abs(outliers[triu]).sum())
    penalty = 0.0 if abs_o == 0.0 else lam1 * abs_o
    return data + penalty


def _lambda1_value(config: SolverConfig, obs: ObservedDistances, d) -> float:
    if config.lambda1 is not None:
        return config.lambda1
    triu = np.triu(obs.mask, 1)
    resid = (obs.entries - d)[triu]
    return adaptive_lambda1(resid)


def connected_components(mask: np.ndarray) -> list[set[int]]:
    """Connected components of the observation graph, by BFS."""
    n = mask.shape[0]
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        frontier = [start]
        seen[start] = True
        comp = {start}
        while frontier:
            node = frontier.pop()
            for nbr in np.flatnonzero(mask[node]):
                if not seen[nbr]:
                    seen[nbr] = True
                    comp.add(int(nbr))
                    frontier.append(int(nbr))
        components.append(comp)
    return components


def completed_distances(positions: np.ndarray) -> np.ndarray:
    """Model distance matrix d(P), the completion of the missing entries."""
    return pairwise_distances(as_positions(positions))


def mds_init(obs: ObservedDistances) -> np.ndarray:
    """Deterministic starting configuration from the observed distances.

    Missing pairs are filled with shortest-path distances over the
    observation graph and the completed squared-distance matrix is
    double-centered; its top three eigenpairs give the classical
    multidimensional-scaling embedding. Two completions are embedded: one
    verbatim, and one with unusually long measurements capped at the
    larger of the bottleneck-tree maximum and the 75th percentile of the
    observed lengths, which stops a single corrupted link from
    stretching a whole family of path estimates but also squashes honest
    long links on clean data. The embedding whose median squared
    residual against the observations is smaller wins; that score
    tolerates up to half the links being corrupted.
    """
    n = obs.size
    triu = np.triu(obs.mask, 1)
    edge_lengths = obs.entries[triu]
    if edge_lengths.size == 0:
        return np.zeros((n, 3))

    def embed(ceiling):
        w = np.where(obs.mask, np.minimum(obs.entries, ceiling), np.inf)
        np.fill_diagonal(w, 0.0)
        sp = shortest_path(w, method="D", directed=False)
        centering = np.eye(n) - np.ones((n, n)) / n
        gram = -0.5 * centering @ (sp**2) @ centering
        eigvals, eigvecs = np.linalg.eigh(gram)
        return eigvecs[:, -3:] * np.sqrt(np.maximum(eigvals[-3:], 0.0))

    def median_sq_residual(p):
        d = pairwise_distances(p)
        return float(np.median((edge_lengths - d[triu]) ** 2))

    graph = csr_matrix(np.where(triu, obs.entries, 0.0))
    # capping keeps connectivity: every bottleneck-tree edge survives
    bottleneck = float(minimum_spanning_tree(graph + graph.T).max())
    capped = max(bottleneck, float(np.percentile(edge_lengths, 75)))
    candidates = [embed(math.inf)]
    if capped < float(edge_lengths.max()):
        candidates.append(embed(capped))
    return min(candidates, key=median_sq_residual)


def consistency_screen(obs: ObservedDistances, slack: float = 1.0) -> np.ndarray:
    """Boolean mask of observed pairs consistent with their two-hop bounds.

    Each measured length is compared against the tightest detour through
    any common neighbor, min_k (d_ik + d_kj), computed from the
    measurements themselves; pairs measuring longer than slack times
    their bound are dropped. True lengths always satisfy the triangle
    inequality, so exact data passes untouched, while a large additive
    corruption sticks out above every honest detour. Corruption inside a
    detour only ever raises the bound, so the test errs toward keeping:
    honest pairs are dropped only when ranging noise makes a near-tight
    detour dip below the direct measurement. Pairs with no two-hop
    alternative are kept, as are all pairs of a node that would otherwise
    lose every link.

    Returns a symmetric mask selecting the kept subset of obs.mask.
    Memory is O(N^3); fine for network-sized problems.
    """
    if not slack >= 1.0:
        raise ValueError("slack must be at least 1")
    d = np.where(obs.mask, obs.entries, np.inf)
    np.fill_diagonal(d, np.inf)
    bound = (d[:, :, None] + d[None, :, :]).min(axis=1)
    keep = obs.mask & (obs.entries <= bound * slack + 1e-9)
    keep |= keep.T
    lonely = obs.mask.any(axis=1) & ~keep.any(axis=1)
    if lonely.any():
        # better to let the solver downweight than to orphan the node
        keep[lonely] = obs.mask[lonely]
        keep |= keep.T
    return keep


def _repair_connectivity(mask, flags, outliers):
    """Unflag the least-suspicious flagged pairs until the graph holds.

    Trimming must never split the observation graph: a disconnected
    quadratic term loses the relative placement of the components. The
    flagged pair with the smallest |o| that bridges two components is
    restored, repeatedly, until one component remains.
    """
    n = mask.shape[0]
    kept = mask & ~flags
    comps = connected_components(kept | np.eye(n, dtype=bool))
    while len(comps) > 1:
        label = np.empty(n, dtype=int)
        for idx, comp in enumerate(comps):
            for node in comp:
                label[node] = idx
        ii, jj = np.nonzero(np.triu(flags, 1))
        bridges = [
            (abs(outliers[i, j]), i, j)
            for i, j in zip(ii, jj)
            if label[i] != label[j]
        ]
        if not bridges:
            break
        _, i, j = min(bridges)
        flags[i, j] = flags[j, i] = False
        kept = mask & ~flags
        comps = connected_components(kept | np.eye(n, dtype=bool))
    return flags


def solve(
    obs: ObservedDistances,
    config: SolverConfig = SolverConfig(),
    init: np.ndarray | str | None = None,
    random_state: int | np.random.Generator | None = 0,
    weights: np.ndarray | None = None,
) -> SolverState:
    """Run the alternating localization scheme to convergence.

    Per iteration: soft-threshold the residuals into O, drop the flagged
    pairs from the quadratic term when trimming, rebuild the majorization
    Laplacian, absorb heavy rows into the auxiliaries, and refresh P
    through the normal equations. Stops when the relative Frobenius
    change of P drops below config.tol or after config.max_iters
    iterations. The objective is recorded at the initial point and after
    every full iteration.

    init seeds P0: an (N, 3) array is used as given, "random" draws P0
    uniformly from a cube spanning the largest observed distance using
    random_state, and None (default) takes the deterministic mds_init
    embedding. weights optionally scales each observed pair's influence
    in the quadratic term (unit weights by default). Masked-out entries
    of obs never influence the result.

    Raises DisconnectedGraphError when the mask splits into components and
    RuntimeError if the iteration produces non-finite values.
    """
    n = obs.size
    mask = obs.mask
    entries = np.where(mask, obs.entries, 0.0)

    components = connected_components(mask)
    if len(components) > 1:
        raise DisconnectedGraphError(components)

    if isinstance(init, str):
        if init != "random":
            raise ValueError(f'init must be an array, "random", or None; got {init!r}')
        rng = np.random.default_rng(random_state)
        span = float(entries.max()) or 1.0
        p = rng.uniform(0.0, span, size=(n, 3))
    elif init is not None:
        p = as_positions(init, "init").copy()
        if p.shape[0] != n:
            raise ValueError(f"init must have shape ({n}, 3), got {p.shape}")
    else:
        p = mds_init(obs)

    if weights is None:
        base_weights = np.where(mask, 1.0, 0.0)
    else:
        base_weights = np.asarray(weights, dtype=float)
        if base_weights.shape != mask.shape:
            raise ValueError(
                f"weights must have shape {mask.shape}, got {base_weights.shape}"
            )
        if np.any(base_weights < 0):
            raise ValueError("weights must be nonnegative")
        base_weights = np.where(mask, base_weights, 0.0)

    trimming = config.trim and (
        config.lambda1 is None
        or (config.lambda1 > 0 and not math.isinf(config.lambda1))
    )

    o = np.zeros((n, n))
    a = np.zeros((n, 3))
    triu = np.triu(mask, 1)
    flags = np.zeros_like(mask)

    solver = _PositionSolver(config, n)
    lap = solver.refresh(base_weights)

    d = pairwise_distances(p)
    lam1 = _lambda1_value(config, obs, d)
    trace = [_objective_value(entries, mask, d, o, lam1)]

    converged = False
    iteration = 0
    for iteration in range(1, config.max_iters + 1):
        resid = np.where(mask, entries - d, 0.0)
        if config.lambda1 is not None:
            lam1 = config.lambda1
        elif trimming:
            trusted = triu & ~flags
            pool = resid[trusted] if trusted.any() else resid[triu]
            lam1 = _trim_lambda1(pool)
        else:
            lam1 = adaptive_lambda1(resid[triu])
        o = np.where(mask, soft_threshold(resid, lam1), 0.0)

        if trimming:
            flags = np.abs(o) > 0
            if flags.any():
                flags = _repair_connectivity(mask, flags, o)
            lap = solver.refresh(np.where(flags, 0.0, base_weights))
            lap_plus = _laplacian_plus(
                d, o, entries, mask, np.where(flags, 0.0, base_weights)
            )
        else:
            lap_plus = _laplacian_plus(d, o, entries, mask, base_weights)

        lp = lap @ p
        lpp = lap_plus @ p
        a = hq_minimizer(lp - lpp, config.rho, config.loss)
        p_next = solver.positions(lpp + a / config.c)

        if not np.all(np.isfinite(p_next)):
            raise RuntimeError(
                f"solver produced non-finite positions at iteration {iteration}"
            )

        d = pairwise_distances(p_next)
        trace.append(_objective_value(entries, mask, d, o, lam1))

        delta = np.linalg.norm(p_next - p) / max(np.linalg.norm(p), 1.0)
        p = p_next
        if delta < config.tol:
            converged = True
            break

    return SolverState(
        positions=p,
        outliers=o,
        aux=a,
        iteration=iteration,
        objective_trace=trace,
        converged=converged,
    )


class _PositionSolver:
    """Normal-equation solver with caching keyed on the active weights.

    The system matrix c L^T L (+ lambda2 I) only changes when the trim
    support changes, so the factorization (lambda2 > 0) or pseudo-inverse
    (lambda2 = 0) is rebuilt only then.
    """

    def __init__(self, config: SolverConfig, n: int):
        self._config = config
        self._n = n
        self._key = None
        self._lap = None
        self._factor = None
        self._pinv = None

    def refresh(self, weights: np.ndarray) -> np.ndarray:
        key = weights.tobytes()
        if key != self._key:
            self._key = key
            self._lap = _weighted_laplacian(weights)
            gram = self._config.c * (self._lap.T @ self._lap)
            if self._config.lambda2 > 0:
                system = gram + self._config.lambda2 * np.eye(self._n)
                self._factor = cho_factor(system, lower=True)
                self._pinv = None
            else:
                self._factor = None
                self._pinv = np.linalg.pinv(gram)
        return self._lap

    def positions(self, target: np.ndarray) -> np.ndarray:
        rhs = self._config.c * (self._lap.T @ target)
        if self._factor is not None:
            return cho_solve(self._factor, rhs)
        return self._pinv @ rhs


class _AnchoredSolver:
    """Free-block normal equations for the anchor-pinned majorization step.

    Solves (c V_ff + lambda2 I) X_f = c ((B X)_f - V_fa X_a) where V is
    the weighted graph Laplacian and f/a index free and anchored rows.
    The inverse is cached on the weight bytes, since weights only move
    when the trim support or the robust scale does. With lambda2 = 0 the
    pseudo-inverse covers weight patterns that cut some free nodes loose.
    """

    def __init__(self, config: SolverConfig, free: np.ndarray,
                 anchors: np.ndarray):
        self._config = config
        self._free = free
        self._anchors = anchors
        self._key = None
        self._vfa = None
        self._factor = None
        self._pinv = None

    def refresh(self, weights: np.ndarray) -> None:
        key = weights.tobytes()
        if key == self._key:
            return
        self._key = key
        lap = _weighted_laplacian(weights)
        self._vfa = lap[np.ix_(self._free, self._anchors)]
        system = self._config.c * lap[np.ix_(self._free, self._free)]
        if self._config.lambda2 > 0:
            system = system + self._config.lambda2 * np.eye(self._free.size)
            self._factor = cho_factor(system, lower=True)
            self._pinv = None
        else:
            self._factor = None
            self._pinv = np.linalg.pinv(system)

    def step(self, guide: np.ndarray, positions: np.ndarray) -> np.ndarray:
        rhs = self._config.c * (
            (guide @ positions)[self._free]
            - self._vfa @ positions[self._anchors]
        )
        if self._factor is not None:
            return cho_solve(self._factor, rhs)
        return self._pinv @ rhs


def _guide_matrix(d, weights, targets) -> np.ndarray:
    # majorization pull matrix: off-diagonal -w*target/d, zero for
    # coincident points or non-positive targets, diagonal the negated
    # row sum so row sums vanish identically
    live = (weights > 0.0) & (d > 0.0) & (targets > 0.0)
    off = np.where(live, -weights * targets / np.where(d > 0.0, d, 1.0), 0.0)
    np.fill_diagonal(off, 0.0)
    np.fill_diagonal(off, -off.sum(axis=1))
    return off


def _huber_weights(resid, mask, rho: float) -> np.ndarray:
    # unit weight inside rho robust sigmas, 1/|r| taper outside
    pool = resid[np.triu(mask, 1)]
    scale = _MADN * float(np.median(np.abs(pool - np.median(pool))))
    cut = rho * max(scale, _SCALE_FLOOR)
    a = np.abs(resid)
    w = np.where(a <= cut, 1.0, cut / np.maximum(a, 1e-300))
    return np.where(mask, w, 0.0)


def _mirror_through_anchor_plane(positions, anchor_indices):
    # Companion start for a fitted embedding: its reflection through the
    # anchors' best-fit plane. With near-coplanar anchors the two half
    # spaces explain the data almost equally well and descent never
    # crosses between them on its own, so both sides must be tried.
    a = positions[anchor_indices]
    centre = a.mean(axis=0)
    _, _, vt = np.linalg.svd(a - centre)
    normal = vt[-1]
    return positions - 2.0 * ((positions - centre) @ normal)[:, None] * normal


def _flip_repair(obs, positions, free, noise_sq, clamp=None):
    # A lone node caught on the wrong side of its neighbours survives the
    # descent: every quadratic step pulls it toward the mirror image rather
    # than across the separating plane. Reflect each free node through its
    # neighbours' best-fit plane and keep the other side only when it fits
    # the node's own links decisively better: with exactly three links both
    # mirror points fit perfectly on clean data and within noise otherwise,
    # so a bare comparison would flip fine nodes on a coin toss. The margin
    # scales with the fit's own residual level and never drops below the
    # metre scale that separates right from wrong geometry.
    x = positions.copy()
    for _ in range(_FLIP_PASSES):
        changed = False
        for k in free:
            nbrs = np.flatnonzero(obs.mask[k])
            if nbrs.size < 3:
                continue
            pts = x[nbrs]
            centre = pts.mean(axis=0)
            _, _, vt = np.linalg.svd(pts - centre)
            normal = vt[-1]
            mirrored = x[k] - 2.0 * float((x[k] - centre) @ normal) * normal
            if clamp is not None:
                mirrored = np.clip(mirrored, clamp[0], clamp[1])
            target = obs.entries[k, nbrs]
            have = np.linalg.norm(x[k] - pts, axis=1) - target
            trial = np.linalg.norm(mirrored - pts, axis=1) - target
            margin = max(_SCALE_FLOOR**2, 9.0 * noise_sq * nbrs.size)
            if have @ have - trial @ trial > margin:
                x[k] = mirrored
                changed = True
        if not changed:
            break
    return x


def _anchored_irls(obs, start, free, anchors, solver, config,
                   tol: float, rounds: int = _IRLS_ROUNDS,
                   clamp=None) -> np.ndarray:
    """Huber-reweighted anchored majorization from one starting point."""
    x = start
    entries = np.where(obs.mask, obs.entries, 0.0)
    moved = math.inf
    for round_ in range(rounds):
        d = pairwise_distances(x)
        resid = np.where(obs.mask, entries - d, 0.0)
        w = _huber_weights(resid, obs.mask, config.rho)
        solver.refresh(w)
        for _ in range(_IRLS_INNER):
            guide = _guide_matrix(d, w, entries)
            xf = solver.step(guide, x)
            if clamp is not None:
                xf = np.clip(xf, clamp[0], clamp[1])
            moved = float(np.abs(xf - x[free]).max())
            x[free] = xf
            d = pairwise_distances(x)
            if moved < tol:
                break
        # a few extra rounds let the weights settle before trusting them
        if moved < tol and round_ >= 5:
            break
    return x


def _anchored_trim(obs, start, free, anchors, solver, config, clamp=None):
    """Soft-threshold / trim descent with pinned anchors.

    Same per-iteration semantics as solve (threshold policy, trimming,
    connectivity repair, objective trace), but positions are refreshed
    only on the free rows and convergence is read as absolute movement
    below config.tol, meaningful here because the frame is fixed.
    Returns (positions, outliers, trace, iterations, converged).
    """
    n = obs.size
    mask = obs.mask
    x = start
    entries = np.where(mask, obs.entries, 0.0)
    triu = np.triu(mask, 1)
    trimming = config.trim and (
        config.lambda1 is None
        or (config.lambda1 > 0 and not math.isinf(config.lambda1))
    )
    base_weights = np.where(mask, 1.0, 0.0)
    o = np.zeros((n, n))
    flags = np.zeros_like(mask)

    d = pairwise_distances(x)
    lam1 = _lambda1_value(config, obs, d)
    trace = [_objective_value(entries, mask, d, o, lam1)]
    converged = False
    iteration = 0
    for iteration in range(1, config.max_iters + 1):
        resid = np.where(mask, entries - d, 0.0)
        if config.lambda1 is not None:
            lam1 = config.lambda1
        elif trimming:
            trusted = triu & ~flags
            pool = resid[trusted] if trusted.any() else resid[triu]
            lam1 = _trim_lambda1(pool)
        else:
            lam1 = adaptive_lambda1(resid[triu])
        o = np.where(mask, soft_threshold(resid, lam1), 0.0)

        if trimming:
            flags = np.abs(o) > 0
            if flags.any():
                flags = _repair_connectivity(mask, flags, o)
            weights = np.where(flags, 0.0, base_weights)
        else:
            weights = base_weights
        solver.refresh(weights)

        guide = _guide_matrix(d, weights, entries - o)
        xf = solver.step(guide, x)
        if not np.all(np.isfinite(xf)):
            raise RuntimeError(
                f"solver produced non-finite positions at iteration {iteration}"
            )
        if clamp is not None:
            xf = np.clip(xf, clamp[0], clamp[1])
        delta = float(np.abs(xf - x[free]).max()) if free.size else 0.0
        x[free] = xf
        d = pairwise_distances(x)
        trace.append(_objective_value(entries, mask, d, o, lam1))
        if delta < config.tol:
            converged = True
            break

    return x, o, trace, iteration, converged


def _fit_scores(obs, positions) -> tuple[float, float]:
    """(median, mean) squared residual over the observed pairs."""
    d = pairwise_distances(positions)
    sq = (obs.entries - d)[np.triu(obs.mask, 1)] ** 2
    return float(np.median(sq)), float(sq.mean())


def _candidate_box(box, anchor_positions, obs):
    if box is not None:
        lo = np.asarray(box[0], dtype=float).reshape(3)
        hi = np.asarray(box[1], dtype=float).reshape(3)
        if not np.all(hi > lo):
            raise ValueError("box upper corner must exceed the lower corner")
        return lo, hi
    lengths = obs.entries[np.triu(obs.mask, 1)]
    span = max(float(np.percentile(lengths, 90)), 1.0) if lengths.size else 1.0
    return anchor_positions.min(axis=0) - span, anchor_positions.max(axis=0) + span


def solve_anchored(
    obs: ObservedDistances,
    anchor_indices: np.ndarray,
    anchor_positions: np.ndarray,
    config: SolverConfig = SolverConfig(),
    *,
    restarts: int = 8,
    box: tuple | None = None,
    init: np.ndarray | None = None,
    random_state: int | np.random.Generator | None = 0,
) -> SolverState:
    """Localize with the anchors pinned inside the iteration.

    On range-limited graphs the purely relative problem is often not
    identifiable: reflection folds of whole node groups reach residuals
    as low as the true configuration, and a post-hoc similarity fit
    cannot repair them. Pinning the anchor rows during the descent makes
    those folds expensive, and a multi-start search picks the basin that
    explains the measurements best.

    The candidate starts are the aligned spectral embeddings of the
    screened and, when it differs, the raw observations, plus `restarts`
    uniform draws from `box` (a (lower, upper) corner pair; defaults to
    the anchor bounding box padded by a high quantile of the measured
    lengths). An explicit box is treated as hard knowledge of the
    deployment region and bounds the solution too: free nodes are
    projected into it after every update, which prices fold branches
    that wander outside it out of the search. `init`, when given, is
    tried first, as absolute coordinates. With outlier handling enabled (lambda1 adaptive or
    finite positive) the links failing consistency_screen are excluded
    up front and each candidate descends under Huber reweighting on the
    surviving links; every fitted embedding is then reflected through
    the anchors' best-fit plane and refitted, because near-coplanar
    anchors leave the two half spaces almost indistinguishable and
    descent never crosses between them on its own. The random draws get
    a short rough fit and the best of them a full one. Candidates are
    scored by the median squared residual plus a small mean-squared
    blend that breaks the exact-data ties a fold can force, and every
    candidate is evaluated. The winner then gets a per-node repair pass,
    reflecting each free node through its neighbours' best-fit plane
    and keeping the better-fitting side, because a single node caught
    on the wrong side survives whole-configuration descent, and finally
    a soft-threshold/trim polish against the full observations, which
    also yields the reported outlier matrix. With rejection disabled
    (lambda1 = inf or 0) every candidate descends with plain quadratic
    weights on the raw observations and the smallest final stress wins.

    The returned state is in the anchor frame: anchor rows equal
    anchor_positions exactly, outliers and the objective trace refer to
    the full observation set, and aux is unused (zeros). Deterministic
    for fixed inputs and random_state. Raises DisconnectedGraphError if
    the observation graph is split; a disconnected post-screen graph is
    fine because anchors hold the pieces in place.
    """
    n = obs.size
    aidx = np.asarray(anchor_indices, dtype=int).ravel()
    if aidx.size == 0:
        raise ValueError("at least one anchor index is required")
    if np.unique(aidx).size != aidx.size:
        raise ValueError("anchor_indices must be unique")
    if aidx.min() < 0 or aidx.max() >= n:
        raise ValueError(f"anchor_indices must lie in [0, {n})")
    apos = as_positions(anchor_positions, "anchor_positions")
    if apos.shape[0] != aidx.size:
        raise ValueError("anchor_positions must pair one row per anchor index")
    if restarts < 0:
        raise ValueError("restarts must be nonnegative")

    components = connected_components(obs.mask)
    if len(components) > 1:
        raise DisconnectedGraphError(components)

    free = np.setdiff1d(np.arange(n), aidx)
    if free.size == 0:
        positions = np.zeros((n, 3))
        positions[aidx] = apos
        d = pairwise_distances(positions)
        lam1 = _lambda1_value(config, obs, d)
        value = _objective_value(
            np.where(obs.mask, obs.entries, 0.0), obs.mask, d,
            np.zeros((n, n)), lam1,
        )
        return SolverState(
            positions=positions,
            outliers=np.zeros((n, n)),
            aux=np.zeros((n, 3)),
            iteration=0,
            objective_trace=[value],
            converged=True,
        )

    # lambda1 = inf pins O to zero; lambda1 = 0 would absorb every
    # residual and freeze the geometry, so both mean rejection off here
    rejecting = config.lambda1 is None or (
        config.lambda1 > 0 and not math.isinf(config.lambda1)
    )
    if rejecting:
        screened = ObservedDistances(
            size=n, entries=obs.entries, mask=consistency_screen(obs)
        )
    else:
        screened = obs
        config = replace(config, lambda1=math.inf)

    candidates = []
    if init is not None:
        p0 = as_positions(init, "init").copy()
        if p0.shape[0] != n:
            raise ValueError(f"init must have shape ({n}, 3), got {p0.shape}")
        candidates.append(p0)
    sources = [screened]
    if rejecting and not np.array_equal(screened.mask, obs.mask):
        sources.append(obs)
    for source in sources:
        try:
            embedded = mds_init(source)
            aligned, _, _ = align_to_anchors(embedded, aidx, apos)
        except (UowlocError, ValueError, np.linalg.LinAlgError):
            continue
        if np.all(np.isfinite(aligned)):
            candidates.append(aligned)
    rng = np.random.default_rng(random_state)
    lo, hi = _candidate_box(box, apos, obs)
    # an explicit box is hard prior knowledge about the deployment, so it
    # also bounds the solution; the derived default is only a draw region
    clamp = (lo, hi) if box is not None else None
    if not rejecting:
        for _ in range(restarts):
            candidates.append(rng.uniform(lo, hi, size=(n, 3)))

    solver = _AnchoredSolver(config, free, aidx)
    best_score = math.inf
    best = None

    if rejecting:
        fits = []
        for candidate in candidates:
            start = candidate.copy()
            start[aidx] = apos
            fitted = _anchored_irls(
                screened, start, free, aidx, solver, config, tol=config.tol,
                clamp=clamp,
            )
            fits.append(fitted)
            start = _mirror_through_anchor_plane(fitted, aidx)
            start[aidx] = apos
            fits.append(_anchored_irls(
                screened, start, free, aidx, solver, config, tol=config.tol,
                clamp=clamp,
            ))
        rough = None
        rough_score = math.inf
        for _ in range(restarts):
            start = rng.uniform(lo, hi, size=(n, 3))
            start[aidx] = apos
            fitted = _anchored_irls(
                screened, start, free, aidx, solver, config,
                tol=config.tol, rounds=_RESTART_ROUNDS, clamp=clamp,
            )
            median_sq, mean_sq = _fit_scores(screened, fitted)
            score = median_sq + _SCORE_BLEND * mean_sq
            if score < rough_score:
                rough_score = score
                rough = fitted
        if rough is not None:
            fits.append(_anchored_irls(
                screened, rough, free, aidx, solver, config, tol=config.tol,
                clamp=clamp,
            ))
        for fitted in fits:
            median_sq, mean_sq = _fit_scores(screened, fitted)
            score = median_sq + _SCORE_BLEND * mean_sq
            if score < best_score:
                best_score = score
                best = fitted
        if best is None:
            raise RuntimeError("no usable starting configuration was produced")
        repaired = _flip_repair(screened, best, free, clamp=clamp)
        if not np.array_equal(repaired, best):
            repaired = _anchored_irls(
                screened, repaired, free, aidx, solver, config,
                tol=config.tol, rounds=_RESTART_ROUNDS, clamp=clamp,
            )
            median_sq, mean_sq = _fit_scores(screened, repaired)
            if median_sq + _SCORE_BLEND * mean_sq < best_score:
                best = repaired
        best = _anchored_trim(obs, best.copy(), free, aidx, solver, config,
                              clamp=clamp)
    else:
        for candidate in candidates:
            start = candidate.copy()
            start[aidx] = apos
            outcome = _anchored_trim(obs, start, free, aidx, solver, config,
                                     clamp=clamp)
            if outcome[2][-1] < best_score:
                best_score = outcome[2][-1]
                best = outcome
        if best is None:
            raise RuntimeError("no usable starting configuration was produced")

    positions, outliers, trace, iteration, converged = best
    return SolverState(
        positions=positions,
        outliers=outliers,
        aux=np.zeros((n, 3)),
        iteration=iteration,
        objective_trace=trace,
        converged=converged,
    )


def result_to_dict(state: SolverState, mask: np.ndarray | None = None) -> dict:
    """JSON-ready result: positions, sparse outliers, trace, convergence."""
    i, j = np.nonzero(np.triu(state.outliers, 1))
    return {
        "positions": [[float(v) for v in row] for row in state.positions],
        "outliers": [
            [int(a), int(b), float(state.outliers[a, b])] for a, b in zip(i, j)
        ],
        "objective_trace": [float(v) for v in state.objective_trace],
        "iterations": int(state.iteration),
        "converged": bool(state.converged),
    }


def save_result(state: SolverState, path) -> None:
    with open(path, "w") as fh:
        json.dump(result_to_dict(state), fh, indent=1)
