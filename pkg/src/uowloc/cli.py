"""Command line front end.

Six subcommands cover the pipeline end to end: channel-curve tabulates
received power over distance, simulate generates a deployment and its
noisy range observations, localize recovers positions from them,
place-anchors optimizes buoy depths for an existing deployment,
montecarlo sweeps one parameter over many random deployments, and rmse
scores a localization result against the ground-truth scenario.

Exit codes: 0 on success, 2 for usage, configuration, or missing-file
problems, 1 for runtime failures inside a stage. Every error message
names the stage that failed.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .channel import WATER_PRESETS, extinction_coefficient, power_dbw, received_power
from .config import RunConfig, load_config
from .errors import ConfigError, UowlocError
from .placement import optimize_depths
from .ranging import estimate_pairwise, load_observations, save_observations
from .sim import (
    SweepSpec,
    derive_seed,
    generate_scenario,
    load_scenario,
    monte_carlo,
    montecarlo_csv,
    random_anchor_depths,
    rmse,
    save_scenario,
    with_anchor_depths,
)
from .solver import result_to_dict, solve_anchored


def _load_run_config(args) -> RunConfig:
    if args.config is None:
        return RunConfig()
    return load_config(args.config)


def _write_text(path, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1)


def _cmd_channel_curve(args) -> int:
    cfg = _load_run_config(args)
    water = cfg.water
    if args.preset is not None:
        water = replace(water, water_preset=args.preset)
    if not args.max_distance > args.min_distance > 0:
        raise ConfigError("need 0 < min-distance < max-distance")

    e = extinction_coefficient(water)
    distances = np.linspace(args.min_distance, args.max_distance, args.points)
    dbw = power_dbw(received_power(cfg.link, e, distances))

    lines = ["distance_m,power_dBW,water_preset"]
    for d, p in zip(distances, dbw):
        lines.append(f"{float(d)!r},{float(p)!r},{water.water_preset}")
    _write_text(args.out, "\n".join(lines) + "\n")
    return 0


def _cmd_simulate(args) -> int:
    cfg = _load_run_config(args)
    scenario = generate_scenario(
        cfg.sim.m,
        cfg.sim.n,
        cfg.sim.o,
        region=cfg.sim.region,
        transmission_range=cfg.sim.transmission_range,
        seed=args.seed,
    )
    # surface buoys are coplanar and cannot anchor a 3D alignment; lower
    # their ranging projections to random distinct depths before measuring
    scenario = with_anchor_depths(
        scenario, random_anchor_depths(scenario, args.seed)
    )
    noise = replace(cfg.noise, seed=derive_seed(args.seed, 13))
    obs = estimate_pairwise(scenario, cfg.water, cfg.link, noise)
    save_scenario(scenario, args.out)
    save_observations(obs, args.out_obs)
    return 0


def _cmd_localize(args) -> int:
    cfg = _load_run_config(args)
    scenario = load_scenario(args.scenario)
    obs = load_observations(args.obs)
    if obs.size != scenario.n_nodes:
        raise UowlocError(
            f"observations cover {obs.size} nodes but the scenario has "
            f"{scenario.n_nodes}"
        )

    state = solve_anchored(
        obs,
        scenario.anchor_indices,
        scenario.anchor_positions,
        cfg.solver,
        box=((0.0, 0.0, 0.0), scenario.region),
        random_state=args.seed,
    )

    payload = result_to_dict(state)
    payload["rmse"] = rmse(scenario, state.positions)
    _write_json(args.out, payload)
    return 0


def _cmd_place_anchors(args) -> int:
    cfg = _load_run_config(args)
    scenario = load_scenario(args.scenario)
    sigma = cfg.noise.sigma if cfg.noise.sigma > 0 else 1.0
    result = optimize_depths(
        scenario.unknown_positions,
        scenario.anchor_positions,
        sigma,
        cfg.placement,
        z_bounds=(0.0, scenario.depth),
    )

    payload = {
        "anchors": [[float(v) for v in row] for row in result.anchors],
        "depths": [float(z) for z in result.anchors[:, 2]],
        "objective": float(result.objective),
        "iterations": int(result.iterations),
        "converged": bool(result.converged),
    }
    _write_json(args.out, payload)

    if args.trace is not None:
        lines = ["iter,objective,step_size"]
        for i, (obj, step) in enumerate(result.trace):
            lines.append(f"{i},{obj!r},{step!r}")
        _write_text(args.trace, "\n".join(lines) + "\n")
    return 0


def _cmd_montecarlo(args) -> int:
    cfg = _load_run_config(args)
    result = monte_carlo(
        args.sweep,
        args.runs,
        args.case,
        m=cfg.sim.m,
        n=cfg.sim.n,
        o=cfg.sim.o,
        region=cfg.sim.region,
        transmission_range=cfg.sim.transmission_range,
        water=cfg.water,
        link=cfg.link,
        noise=cfg.noise,
        solver_config=cfg.solver,
        placement_config=cfg.placement,
        master_seed=args.seed,
    )
    _write_text(args.out, montecarlo_csv(result))
    return 0


def _cmd_rmse(args) -> int:
    scenario = load_scenario(args.scenario)
    with open(args.result) as fh:
        payload = json.load(fh)
    if "positions" not in payload:
        raise UowlocError(f"result file {args.result} has no 'positions' field")
    value = rmse(scenario, np.asarray(payload["positions"], dtype=float))
    sys.stdout.write(f"{value!r}\n")
    return 0


def _sweep_argument(text: str) -> SweepSpec:
    """Parse name:start:stop:count or name:v1,v2,... into a SweepSpec."""
    name, _, rest = text.partition(":")
    if not rest:
        raise argparse.ArgumentTypeError(
            "sweep must be name:start:stop:count or name:v1,v2,..."
        )
    try:
        if "," in rest:
            values = tuple(float(v) for v in rest.split(","))
        else:
            parts = rest.split(":")
            if len(parts) != 3:
                raise ValueError(
                    "ranged sweep needs exactly start:stop:count"
                )
            start, stop, count = float(parts[0]), float(parts[1]), int(parts[2])
            if count < 1:
                raise ValueError("count must be at least 1")
            values = tuple(float(v) for v in np.linspace(start, stop, count))
        return SweepSpec(name=name, values=values)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="INI configuration file")
    common.add_argument("--seed", type=int, default=0,
                        help="master seed for this run (default 0)")

    parser = argparse.ArgumentParser(
        prog="uowloc",
        description="Underwater optical network localization toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser(
        "channel-curve", parents=[common],
        help="tabulate received power over distance as CSV",
    )
    p.add_argument("--preset", choices=sorted(WATER_PRESETS) + ["custom"],
                   default=None, help="water preset (default: from config)")
    p.add_argument("--min-distance", type=float, default=1.0)
    p.add_argument("--max-distance", type=float, default=100.0)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=_cmd_channel_curve)

    p = sub.add_parser(
        "simulate", parents=[common],
        help="generate a random deployment and its range observations",
    )
    p.add_argument("--out", required=True, help="scenario JSON output")
    p.add_argument("--out-obs", required=True, help="observations JSON output")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser(
        "localize", parents=[common],
        help="estimate positions from observations and align to anchors",
    )
    p.add_argument("--scenario", required=True, help="scenario JSON input")
    p.add_argument("--obs", required=True, help="observations JSON input")
    p.add_argument("--out", required=True, help="result JSON output")
    p.set_defaults(func=_cmd_localize)

    p = sub.add_parser(
        "place-anchors", parents=[common],
        help="optimize buoy depths for a scenario",
    )
    p.add_argument("--scenario", required=True, help="scenario JSON input")
    p.add_argument("--out", required=True, help="anchors JSON output")
    p.add_argument("--trace", default=None, help="descent trace CSV output")
    p.set_defaults(func=_cmd_place_anchors)

    p = sub.add_parser(
        "montecarlo", parents=[common],
        help="sweep one parameter over many random deployments",
    )
    p.add_argument("--sweep", type=_sweep_argument, required=True,
                   help="name:start:stop:count or name:v1,v2,... "
                        "(names: sigma, outliers, lambda2)")
    p.add_argument("--runs", type=int, default=100)
    p.add_argument("--case", type=int, choices=(1, 2, 3, 4), default=4)
    p.add_argument("--out", default=None, help="output CSV (default stdout)")
    p.set_defaults(func=_cmd_montecarlo)

    p = sub.add_parser(
        "rmse", parents=[common],
        help="score a localization result against scenario ground truth",
    )
    p.add_argument("--scenario", required=True, help="scenario JSON input")
    p.add_argument("--result", required=True, help="localize result JSON")
    p.set_defaults(func=_cmd_rmse)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    stage = args.command
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error in {stage} configuration: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        name = exc.filename if exc.filename else exc
        print(f"error in {stage}: cannot open {name}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as exc:
        print(f"error in {stage}: invalid JSON input ({exc})", file=sys.stderr)
        return 1
    except (UowlocError, ValueError, RuntimeError, KeyError) as exc:
        print(f"error in {stage}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
