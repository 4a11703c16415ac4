"""INI run configuration shared by the CLI subcommands.

One file configures every pipeline stage through six optional sections:
[water], [link], [noise], [solver], [placement], [sim]. Any section or
key not listed below is rejected outright rather than silently ignored,
since a typo in a tuning knob would otherwise change results without a
trace. Values omitted fall back to the library defaults.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass

from .channel import OpticalLink, WaterModel
from .errors import ConfigError
from .placement import PlacementConfig
from .ranging import RangingNoise
from .solver import SolverConfig
from .validation import require


@dataclass(frozen=True)
class SimParams:
    """Scenario-generation parameters: tier counts, region, link range."""

    m: int = 10
    n: int = 4
    o: int = 4
    region: tuple[float, float, float] = (100.0, 100.0, 100.0)
    transmission_range: float = 80.0

    def __post_init__(self):
        require(self.m >= 0 and self.n >= 0 and self.o >= 0,
                "node counts must be nonnegative")
        region = tuple(float(v) for v in self.region)
        require(len(region) == 3 and all(v > 0 for v in region),
                "region must be three positive side lengths")
        require(self.transmission_range > 0,
                "transmission_range must be positive")
        object.__setattr__(self, "region", region)


@dataclass(frozen=True)
class RunConfig:
    """All stage configurations bundled, each at its default unless set."""

    water: WaterModel = WaterModel()
    link: OpticalLink = OpticalLink()
    noise: RangingNoise = RangingNoise()
    solver: SolverConfig = SolverConfig()
    placement: PlacementConfig = PlacementConfig()
    sim: SimParams = SimParams()


def parse_lambda1(text: str):
    """Outlier weight: 'adaptive' (residual-scaled), 'inf' (off), or a float."""
    value = text.strip().lower()
    if value == "adaptive":
        return None
    if value in ("inf", "infinity"):
        return math.inf
    try:
        return float(value)
    except ValueError:
        raise ConfigError(
            f"solver.lambda1 must be 'adaptive', 'inf', or a number, "
            f"got {text!r}"
        ) from None


def parse_region(text: str) -> tuple[float, float, float]:
    """Region side lengths as 'lx,ly,lz'."""
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ConfigError(
            f"sim.region must be three comma-separated lengths, got {text!r}"
        )
    try:
        lx, ly, lz = (float(p) for p in parts)
    except ValueError:
        raise ConfigError(
            f"sim.region must be three comma-separated lengths, got {text!r}"
        ) from None
    return (lx, ly, lz)


def _optional_float(text: str):
    if text.strip().lower() == "none":
        return None
    return float(text)


def _parse_bool(text: str) -> bool:
    value = text.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_SECTIONS = {
    "water": (WaterModel, {
        "lambda_nm": float,
        "c_c": float,
        "c_e": float,
        "c_o": float,
        "water_preset": str.strip,
        "extinction_override": _optional_float,
        "alpha_f": float,
        "alpha_h": float,
    }),
    "link": (OpticalLink, {
        "p_t": float,
        "rho_t": float,
        "rho_r": float,
        "theta_0": float,
        "b_r": float,
        "theta": float,
    }),
    "noise": (RangingNoise, {
        "sigma": float,
        "outlier_prob": float,
        "outlier_scale": _optional_float,
        "seed": int,
    }),
    "solver": (SolverConfig, {
        "lambda1": parse_lambda1,
        "lambda2": float,
        "c": float,
        "rho": float,
        "loss": str.strip,
        "trim": _parse_bool,
        "max_iters": int,
        "tol": float,
    }),
    "placement": (PlacementConfig, {
        "mu": float,
        "delta": float,
        "c1": float,
        "h": float,
        "max_outer": int,
    }),
    "sim": (SimParams, {
        "m": int,
        "n": int,
        "o": int,
        "region": parse_region,
        "transmission_range": float,
    }),
}


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a RunConfig, rejecting anything unrecognized."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"invalid config syntax: {exc}") from None

    built = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(
                f"unknown config section [{section}]; expected one of "
                f"{sorted(_SECTIONS)}"
            )
        cls, keys = _SECTIONS[section]
        kwargs = {}
        for key, raw in cp.items(section):
            if key not in keys:
                raise ConfigError(
                    f"unknown key {key!r} in section [{section}]; expected "
                    f"one of {sorted(keys)}"
                )
            try:
                kwargs[key] = keys[key](raw)
            except ConfigError:
                raise
            except (ValueError, TypeError) as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r} ({exc})"
                ) from None
        try:
            built[section] = cls(**kwargs)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"invalid [{section}] configuration: {exc}") from None

    return RunConfig(**built)


def load_config(path) -> RunConfig:
    """Read and parse an INI config file; missing file is a config error."""
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return parse_config(text)
