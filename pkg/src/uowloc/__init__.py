"""Robust 3D localization for underwater optical wireless sensor networks.

The pipeline: an optical channel model turns geometry into received
power (channel), received power inverts back into noisy range estimates
(ranging), a robust alternating solver recovers relative positions and
flags outlier links (solver), a Procrustes step anchors the solution to
surveyed buoys (align), Fisher-information analysis optimizes buoy
depths (placement), and scenario generation plus Monte Carlo sweeps tie
it together for evaluation (sim). A scikit-learn style facade lives in
estimator, an INI-driven CLI in cli.
"""

from .align import (
    SimilarityTransform,
    align_to_anchors,
    apply_transform,
    fit_procrustes,
)
from .channel import (
    WATER_PRESETS,
    OpticalLink,
    WaterModel,
    absorption_coefficient,
    extinction_coefficient,
    received_power,
    scattering_coefficient,
)
from .errors import (
    ConfigError,
    DegenerateAnchorsError,
    DisconnectedGraphError,
    SingularGeometryError,
    UowlocError,
)
from .estimator import ProcrustesAlignment, RobustLocalizer
from .placement import (
    PlacementConfig,
    PlacementResult,
    crlb,
    d_optimality,
    depth_objective,
    fim,
    optimize_depths,
)
from .ranging import (
    ObservedDistances,
    RangingNoise,
    estimate_pairwise,
    invert_power,
    lambert_w0,
)
from .sim import (
    MonteCarloResult,
    RunResult,
    Scenario,
    SweepSpec,
    generate_scenario,
    monte_carlo,
    rmse,
    run_case,
    with_anchor_depths,
)
from .solver import (
    SolverConfig,
    SolverState,
    consistency_screen,
    solve,
    solve_anchored,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DegenerateAnchorsError",
    "DisconnectedGraphError",
    "MonteCarloResult",
    "ObservedDistances",
    "OpticalLink",
    "PlacementConfig",
    "PlacementResult",
    "ProcrustesAlignment",
    "RangingNoise",
    "RobustLocalizer",
    "RunResult",
    "Scenario",
    "SimilarityTransform",
    "SingularGeometryError",
    "SolverConfig",
    "SolverState",
    "SweepSpec",
    "UowlocError",
    "WATER_PRESETS",
    "WaterModel",
    "absorption_coefficient",
    "align_to_anchors",
    "apply_transform",
    "consistency_screen",
    "crlb",
    "d_optimality",
    "depth_objective",
    "estimate_pairwise",
    "extinction_coefficient",
    "fim",
    "fit_procrustes",
    "generate_scenario",
    "invert_power",
    "lambert_w0",
    "monte_carlo",
    "optimize_depths",
    "received_power",
    "rmse",
    "run_case",
    "scattering_coefficient",
    "solve",
    "solve_anchored",
    "with_anchor_depths",
    "__version__",
]
