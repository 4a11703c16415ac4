"""Scenario generation, evaluation cases, and Monte Carlo sweeps.

A scenario is a box-shaped deployment region with three node tiers:
seabed sensors resting in the bottom tenth of the water column, relays
drifting anywhere in between, and surface buoys (the anchors) whose
optical heads can be lowered to chosen depths. Depth is the positive-down
z coordinate, so the surface sits at z = 0.

The four standard evaluation cases cross two switches: anchor depths
random vs optimized, and outlier rejection off vs on. Monte Carlo sweeps
repeat a case over many generated scenarios while varying one parameter
(noise level, outlier fraction, or the position ridge weight).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .channel import OpticalLink, WaterModel
from .errors import UowlocError
from .placement import PlacementConfig, optimize_depths
from .ranging import RangingNoise, estimate_pairwise
from .solver import SolverConfig, connected_components, solve_anchored
from .validation import as_positions, require

_GENERATION_ATTEMPTS = 1000
_SWEEP_NAMES = ("sigma", "outliers", "lambda2")

# Bottom band of the water column where seabed sensors settle.
_SEABED_BAND = 0.9


@dataclass(frozen=True)
class Scenario:
    """A deployment: node positions, tier counts, region, and link range.

    positions holds the m seabed sensors first, then the n relays, then
    the o buoys, one row each. region gives the box side lengths
    (lx, ly, lz); lz is the water depth, and z grows downward from the
    surface. transmission_range bounds which pairs can exchange optical
    ranging signals.
    """

    positions: np.ndarray
    m: int
    n: int
    o: int
    region: tuple[float, float, float] = (100.0, 100.0, 100.0)
    transmission_range: float = 80.0
    seed: int | None = None

    def __post_init__(self):
        require(self.m >= 0 and self.n >= 0 and self.o >= 0,
                "node counts must be nonnegative")
        require(self.m + self.n + self.o >= 2,
                "scenario needs at least two nodes")
        p = as_positions(self.positions)
        require(p.shape[0] == self.m + self.n + self.o,
                f"positions rows ({p.shape[0]}) must equal m+n+o "
                f"({self.m + self.n + self.o})")
        region = tuple(float(v) for v in self.region)
        require(len(region) == 3 and all(v > 0 for v in region),
                "region must be three positive side lengths")
        require(self.transmission_range > 0,
                "transmission_range must be positive")
        object.__setattr__(self, "positions", p.copy())
        object.__setattr__(self, "region", region)

    @property
    def n_nodes(self) -> int:
        return self.m + self.n + self.o

    @property
    def depth(self) -> float:
        return self.region[2]

    @property
    def roles(self) -> list[str]:
        return ["seabed"] * self.m + ["relay"] * self.n + ["buoy"] * self.o

    @property
    def unknown_indices(self) -> np.ndarray:
        return np.arange(self.m + self.n)

    @property
    def anchor_indices(self) -> np.ndarray:
        return np.arange(self.m + self.n, self.n_nodes)

    @property
    def unknown_positions(self) -> np.ndarray:
        return self.positions[: self.m + self.n]

    @property
    def anchor_positions(self) -> np.ndarray:
        return self.positions[self.m + self.n :]

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "o": self.o,
            "region": list(self.region),
            "transmission_range": self.transmission_range,
            "seed": self.seed,
            "positions": [[float(v) for v in row] for row in self.positions],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(
            positions=np.asarray(data["positions"], dtype=float),
            m=int(data["m"]),
            n=int(data["n"]),
            o=int(data["o"]),
            region=tuple(data["region"]),
            transmission_range=float(data["transmission_range"]),
            seed=data.get("seed"),
        )


def save_scenario(scenario: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario.to_dict(), fh, indent=1)


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def with_anchor_depths(scenario: Scenario, depths) -> Scenario:
    """Copy of the scenario with buoy optical heads lowered to depths."""
    d = np.asarray(depths, dtype=float)
    require(d.shape == (scenario.o,),
            f"depths must have shape ({scenario.o},), got {d.shape}")
    require(bool(np.all(np.isfinite(d))), "depths must be finite")
    positions = scenario.positions.copy()
    positions[scenario.anchor_indices, 2] = d
    return replace(scenario, positions=positions)


def _range_mask(positions: np.ndarray, transmission_range: float) -> np.ndarray:
    diff = positions[:, None, :] - positions[None, :, :]
    d = np.sqrt((diff**2).sum(axis=-1))
    mask = d <= transmission_range
    np.fill_diagonal(mask, False)
    return mask


def is_connected(scenario: Scenario) -> bool:
    """Whether every node can reach every other through in-range hops."""
    mask = _range_mask(scenario.positions, scenario.transmission_range)
    return len(connected_components(mask)) == 1


def generate_scenario(
    m: int = 10,
    n: int = 4,
    o: int = 4,
    *,
    region: tuple[float, float, float] = (100.0, 100.0, 100.0),
    transmission_range: float = 80.0,
    seed: int = 0,
) -> Scenario:
    """Draw a random connected deployment, deterministic per seed.

    Seabed sensors get uniform x, y and depths in the bottom tenth of the
    column; relays are uniform anywhere in the box; buoys float at the
    surface (z = 0). Redraws until the ranging graph is connected, up to
    1000 attempts.
    """
    require(m >= 0 and n >= 0 and o >= 0, "node counts must be nonnegative")
    require(m + n + o >= 2, "scenario needs at least two nodes")
    lx, ly, lz = (float(v) for v in region)
    rng = np.random.default_rng(seed)

    for _ in range(_GENERATION_ATTEMPTS):
        xy = rng.uniform([0.0, 0.0], [lx, ly], size=(m + n + o, 2))
        z_seabed = rng.uniform(_SEABED_BAND * lz, lz, size=m)
        z_relay = rng.uniform(0.0, lz, size=n)
        z = np.concatenate([z_seabed, z_relay, np.zeros(o)])
        positions = np.column_stack([xy, z])
        scenario = Scenario(
            positions=positions,
            m=m,
            n=n,
            o=o,
            region=(lx, ly, lz),
            transmission_range=transmission_range,
            seed=seed,
        )
        if is_connected(scenario):
            return scenario

    raise UowlocError(
        f"no connected deployment found in {_GENERATION_ATTEMPTS} attempts; "
        "increase transmission_range or shrink the region"
    )


def rmse(scenario: Scenario, estimated: np.ndarray) -> float:
    """Root mean square position error over the unknown nodes only."""
    est = as_positions(estimated, "estimated")
    require(est.shape[0] == scenario.n_nodes,
            f"estimated must cover all {scenario.n_nodes} nodes")
    idx = scenario.unknown_indices
    err = est[idx] - scenario.positions[idx]
    return float(np.sqrt((err**2).sum() / idx.size))


def derive_seed(seed: int, tag: int) -> int:
    """Independent child seed for one named stream of a run.

    Tags keep the depth draw (11), the measurement noise (13), and the
    solver's restart draws (19) statistically independent, so changing
    one model never perturbs the others' randomness.
    """
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


def derive_rng(seed: int, tag: int) -> np.random.Generator:
    """Generator seeded from derive_seed's stream for the same tag."""
    return np.random.default_rng(np.random.SeedSequence([seed, tag]))


def random_anchor_depths(scenario: Scenario, seed: int) -> np.ndarray:
    """Uniform depths over the water column, one per buoy."""
    return derive_rng(seed, 11).uniform(0.0, scenario.depth, size=scenario.o)


def optimized_anchor_depths(
    scenario: Scenario,
    start_depths: np.ndarray,
    sigma: float,
    config: PlacementConfig = PlacementConfig(),
) -> np.ndarray:
    """Descend the vertical-CRLB objective from the given starting depths.

    Starting from a concrete (generically non-coplanar) depth vector both
    keeps the FIM well conditioned at the first step and guarantees the
    result is no worse than that start. The objective counts only anchors
    within ranging reach of each node and carries the uniform
    deployment-box prior, so a buoy is never parked where nothing hears
    it just to stretch the vertical aperture.
    """
    start = scenario.anchor_positions.copy()
    start[:, 2] = np.asarray(start_depths, dtype=float)
    result = optimize_depths(
        scenario.unknown_positions,
        start,
        sigma,
        config,
        z_bounds=(0.0, scenario.depth),
        transmission_range=scenario.transmission_range,
        prior_information=12.0 / np.asarray(scenario.region, dtype=float) ** 2,
    )
    return result.anchors[:, 2]


@dataclass
class RunResult:
    """Outcome of one localization run, aligned to the anchors."""

    case: int
    rmse: float
    iterations: int
    converged: bool
    per_node_error: np.ndarray
    positions: np.ndarray


def run_case(
    case: int,
    scenario: Scenario,
    water: WaterModel = WaterModel(),
    link: OpticalLink = OpticalLink(),
    noise: RangingNoise = RangingNoise(),
    solver_config: SolverConfig = SolverConfig(),
    placement_config: PlacementConfig = PlacementConfig(),
    seed: int = 0,
    *,
    anchor_depths: np.ndarray | None = None,
    init: np.ndarray | None = None,
) -> RunResult:
    """Run one of the four standard evaluation cases end to end.

    Case 1: random anchor depths, outlier rejection off (lambda1 pinned
    to infinity). Case 2: optimized depths, rejection off. Case 3: random
    depths, rejection on. Case 4: optimized depths, rejection on. The
    optimized cases start their descent from the very depth vector the
    random cases use, so per seed the optimized design is never worse.

    Localization runs anchored: the buoys are pinned at their surveyed
    coordinates inside the solver and the multi-start draws come from the
    deployment region box. The seed splits into independent streams for
    the random depths, the measurement noise, and the restart draws, so
    e.g. changing only the noise model never changes the depth draw.
    anchor_depths overrides the depth policy entirely; init supplies one
    extra starting configuration in absolute coordinates.
    """
    if case not in (1, 2, 3, 4):
        raise ValueError(f"case must be 1, 2, 3, or 4, got {case}")
    require(seed >= 0, "seed must be nonnegative")

    if anchor_depths is None:
        depths = random_anchor_depths(scenario, seed)
        if case in (2, 4):
            sigma = noise.sigma if noise.sigma > 0 else 1.0
            depths = optimized_anchor_depths(
                scenario, depths, sigma, placement_config
            )
    else:
        depths = np.asarray(anchor_depths, dtype=float)

    scn = with_anchor_depths(scenario, depths)

    obs = estimate_pairwise(
        scn, water, link, replace(noise, seed=derive_seed(seed, 13))
    )

    cfg = solver_config
    if case in (1, 2):
        cfg = replace(solver_config, lambda1=math.inf)

    state = solve_anchored(
        obs,
        scn.anchor_indices,
        scn.anchor_positions,
        cfg,
        box=((0.0, 0.0, 0.0), scn.region),
        init=init,
        random_state=derive_seed(seed, 19),
    )

    idx = scn.unknown_indices
    per_node = np.linalg.norm(state.positions[idx] - scn.positions[idx], axis=1)
    return RunResult(
        case=case,
        rmse=rmse(scn, state.positions),
        iterations=state.iteration,
        converged=state.converged,
        per_node_error=per_node,
        positions=state.positions,
    )


@dataclass(frozen=True)
class SweepSpec:
    """One-parameter sweep: name in {sigma, outliers, lambda2} + values."""

    name: str
    values: tuple[float, ...]

    def __post_init__(self):
        if self.name not in _SWEEP_NAMES:
            raise ValueError(f"sweep name must be one of {_SWEEP_NAMES}")
        values = tuple(float(v) for v in self.values)
        require(len(values) >= 1, "sweep needs at least one value")
        require(all(np.isfinite(v) for v in values),
                "sweep values must be finite")
        object.__setattr__(self, "values", values)


@dataclass
class MonteCarloResult:
    """Aggregated sweep statistics plus the raw per-run values behind them.

    rows hold (sweep_param, value, mean_rmse, median_rmse, std_rmse,
    failures) per sweep point, std with ddof=0, failures counting runs
    that raised instead of producing an estimate. raw maps each sweep
    value to the successful per-run RMSE list in run order.
    """

    sweep: SweepSpec
    case: int
    runs: int
    rows: list[tuple[str, float, float, float, float, int]] = field(
        default_factory=list
    )
    raw: dict[float, list[float]] = field(default_factory=dict)


def monte_carlo(
    sweep: SweepSpec,
    runs: int,
    case: int = 4,
    *,
    m: int = 10,
    n: int = 4,
    o: int = 4,
    region: tuple[float, float, float] = (100.0, 100.0, 100.0),
    transmission_range: float = 80.0,
    water: WaterModel = WaterModel(),
    link: OpticalLink = OpticalLink(),
    noise: RangingNoise = RangingNoise(),
    solver_config: SolverConfig = SolverConfig(),
    placement_config: PlacementConfig = PlacementConfig(),
    master_seed: int = 0,
) -> MonteCarloResult:
    """Sweep one parameter over freshly generated scenarios.

    Run r uses seed master_seed + r for its scenario, depth draws, noise,
    and solver start, and the same r-th scenario recurs at every sweep
    point, so sweep points differ only in the swept parameter. Anchor
    depths are drawn (and, for cases 2 and 4, optimized) once per run and
    reused across the sweep; depth optimization always uses the template
    noise sigma, never the swept one, since the optimal depths do not
    depend on a uniform ranging-error scale.

    Individual run failures are counted per sweep point rather than
    raised. Fully deterministic for fixed inputs.
    """
    require(runs >= 1, "runs must be at least 1")
    if case not in (1, 2, 3, 4):
        raise ValueError(f"case must be 1, 2, 3, or 4, got {case}")

    sigma_pl = noise.sigma if noise.sigma > 0 else 1.0
    prepared = []
    for r in range(runs):
        seed = master_seed + r
        scenario = generate_scenario(
            m, n, o,
            region=region,
            transmission_range=transmission_range,
            seed=seed,
        )
        depths = random_anchor_depths(scenario, seed)
        if case in (2, 4):
            depths = optimized_anchor_depths(
                scenario, depths, sigma_pl, placement_config
            )
        prepared.append((seed, scenario, depths))

    result = MonteCarloResult(sweep=sweep, case=case, runs=runs)
    for value in sweep.values:
        noise_v, solver_v = noise, solver_config
        if sweep.name == "sigma":
            noise_v = replace(noise, sigma=value)
        elif sweep.name == "outliers":
            noise_v = replace(noise, outlier_prob=value)
        else:
            solver_v = replace(solver_config, lambda2=value)

        rmses = []
        failures = 0
        for seed, scenario, depths in prepared:
            try:
                res = run_case(
                    case,
                    scenario,
                    water,
                    link,
                    noise_v,
                    solver_v,
                    placement_config,
                    seed=seed,
                    anchor_depths=depths,
                )
                rmses.append(res.rmse)
            except (UowlocError, RuntimeError):
                failures += 1

        arr = np.asarray(rmses)
        if arr.size:
            row = (
                sweep.name,
                float(value),
                float(arr.mean()),
                float(np.median(arr)),
                float(arr.std(ddof=0)),
                failures,
            )
        else:
            row = (sweep.name, float(value), math.nan, math.nan, math.nan,
                   failures)
        result.rows.append(row)
        result.raw[float(value)] = rmses

    return result


def montecarlo_csv(result: MonteCarloResult) -> str:
    """Render the aggregate rows as a CSV string, stable byte for byte."""
    lines = ["sweep_param,value,mean_rmse,median_rmse,std_rmse,failures"]
    for name, value, mean, median, std, failures in result.rows:
        lines.append(f"{name},{value!r},{mean!r},{median!r},{std!r},{failures}")
    return "\n".join(lines) + "\n"
