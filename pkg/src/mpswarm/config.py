"""Config file loading: library builds and simulation scenarios.

Configs are plain YAML mappings validated strictly (unknown keys are errors)
and turned into the dataclasses the rest of the package consumes. All file
paths inside a config resolve relative to the config file's directory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .paths import ArcSpec, LibraryConfig
from .replan import Bounds, PlannerConfig
from .sim import SimConfig
from .topp import ToppParams
from .world import MapSpec


class ConfigError(Exception):
    """Invalid or unreadable configuration."""


def load_yaml(path) -> dict:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return doc


def _check_keys(d: dict, allowed: set, ctx: str) -> None:
    extra = set(d) - allowed
    if extra:
        raise ConfigError(f"{ctx}: unknown keys {sorted(extra)}")


def _require(d: dict, key: str, ctx: str):
    if key not in d:
        raise ConfigError(f"{ctx}: missing required key '{key}'")
    return d[key]


def _radius(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in ("inf", "infinity", "straight"):
            return math.inf
        raise ConfigError(f"bad arc radius {value!r}")
    return float(value)


# -- library build configs --------------------------------------------------


@dataclass
class LibraryBuildSpec:
    library: LibraryConfig
    params: ToppParams
    occupancy: dict  # kwargs for build_relations_for_library


def parse_library_spec(doc: dict, ctx: str = "library config") -> LibraryBuildSpec:
    _check_keys(doc, {"library", "topp", "occupancy"}, ctx)

    lib = _require(doc, "library", ctx)
    _check_keys(lib, {"length_m", "rotation_step_deg", "arcs"}, f"{ctx}.library")
    arcs = []
    for i, arc in enumerate(_require(lib, "arcs", f"{ctx}.library")):
        _check_keys(arc, {"radius_m", "roll_deg"}, f"{ctx}.library.arcs[{i}]")
        arcs.append(
            ArcSpec(
                radius_m=_radius(_require(arc, "radius_m", "arc")),
                roll_deg=float(arc.get("roll_deg", 0.0)),
            )
        )
    try:
        library = LibraryConfig(
            arcs=arcs,
            length_m=float(_require(lib, "length_m", f"{ctx}.library")),
            rotation_step_deg=float(
                _require(lib, "rotation_step_deg", f"{ctx}.library")
            ),
        )
    except ValueError as exc:
        raise ConfigError(f"{ctx}.library: {exc}") from None

    topp = doc.get("topp", {})
    _check_keys(topp, {"v_max", "a_max", "speed_step", "stages"}, f"{ctx}.topp")
    try:
        params = ToppParams(
            v_max=float(topp.get("v_max", 1.0)),
            a_max=float(topp.get("a_max", 3.0)),
            speed_step=float(topp.get("speed_step", 0.1)),
            stages=int(topp.get("stages", 1000)),
        )
    except ValueError as exc:
        raise ConfigError(f"{ctx}.topp: {exc}") from None

    occ = doc.get("occupancy", {})
    _check_keys(
        occ,
        {"s_res", "t_res", "r_inflate", "r_robot", "temporal_pad"},
        f"{ctx}.occupancy",
    )
    occupancy = {
        "s_res": float(occ.get("s_res", 0.1)),
        "t_res": float(occ.get("t_res", 0.05)),
        "r_infl": float(occ.get("r_inflate", 0.3)),
        "r_robot": float(occ.get("r_robot", 0.15)),
    }
    if occ.get("temporal_pad") is not None:
        occupancy["temporal_pad"] = float(occ["temporal_pad"])
    return LibraryBuildSpec(library=library, params=params, occupancy=occupancy)


def load_library_spec(path) -> LibraryBuildSpec:
    return parse_library_spec(load_yaml(path), ctx=str(path))


# -- scenario configs --------------------------------------------------------


@dataclass
class ScenarioSpec:
    library_file: Path
    relations_file: Path
    planner: PlannerConfig
    map_spec: MapSpec | None
    map_seed: int
    starts: np.ndarray
    goals: np.ndarray
    sim: SimConfig
    csv_path: Path | None
    json_path: Path | None


def circle_layout(n: int, radius_m: float, z: float = 1.0):
    """Starts evenly spaced on a circle, goals at the antipodal points."""
    if n < 1:
        raise ConfigError("circle layout needs at least one agent")
    ang = 2.0 * np.pi * np.arange(n) / n
    starts = np.stack(
        [radius_m * np.cos(ang), radius_m * np.sin(ang), np.full(n, z)], axis=1
    )
    goals = starts.copy()
    goals[:, :2] *= -1.0
    return starts, goals


def _parse_planner(d: dict, ctx: str) -> PlannerConfig:
    _check_keys(
        d,
        {
            "lambda_goal",
            "lambda_bound",
            "bound_cost",
            "bounds",
            "r_goal",
            "v_goal",
            "eps_v",
            "t_replan_max",
            "t_replan_frac",
            "cloud_budget",
        },
        ctx,
    )
    bounds = None
    if d.get("bounds") is not None:
        b = d["bounds"]
        _check_keys(b, {"lo", "hi"}, f"{ctx}.bounds")
        bounds = Bounds(
            lo=np.asarray(_require(b, "lo", f"{ctx}.bounds"), dtype=float),
            hi=np.asarray(_require(b, "hi", f"{ctx}.bounds"), dtype=float),
        )
    return PlannerConfig(
        lambda_goal=float(d.get("lambda_goal", 1.0)),
        lambda_bound=float(d.get("lambda_bound", 1.0)),
        bound_cost=float(d.get("bound_cost", 1.0e4)),
        bounds=bounds,
        r_goal=float(d.get("r_goal", 0.3)),
        v_goal=float(d.get("v_goal", 0.1)),
        eps_v=float(d.get("eps_v", 0.05)),
        t_replan_max=float(d.get("t_replan_max", 1.0)),
        t_replan_frac=float(d.get("t_replan_frac", 0.8)),
        cloud_budget=int(d.get("cloud_budget", 2000)),
    )


def _parse_map(d: dict, ctx: str) -> MapSpec:
    _check_keys(
        d,
        {
            "n_obstacles",
            "region_lo",
            "region_hi",
            "radius_range",
            "cylinder_fraction",
            "box_size_range",
            "clearance_m",
            "min_spacing",
            "surface_spacing",
        },
        ctx,
    )
    kwargs = {"n_obstacles": int(_require(d, "n_obstacles", ctx))}
    for key in ("region_lo", "region_hi", "radius_range", "box_size_range"):
        if key in d:
            kwargs[key] = tuple(float(v) for v in d[key])
    for key in (
        "cylinder_fraction",
        "clearance_m",
        "min_spacing",
        "surface_spacing",
    ):
        if key in d:
            kwargs[key] = float(d[key])
    return MapSpec(**kwargs)


def _parse_agents(d: dict, ctx: str):
    _check_keys(d, {"circle", "starts", "goals"}, ctx)
    if "circle" in d:
        if "starts" in d or "goals" in d:
            raise ConfigError(f"{ctx}: give either circle or explicit lists")
        c = d["circle"]
        _check_keys(c, {"n", "radius_m", "z"}, f"{ctx}.circle")
        return circle_layout(
            n=int(_require(c, "n", f"{ctx}.circle")),
            radius_m=float(_require(c, "radius_m", f"{ctx}.circle")),
            z=float(c.get("z", 1.0)),
        )
    starts = np.asarray(_require(d, "starts", ctx), dtype=float)
    goals = np.asarray(_require(d, "goals", ctx), dtype=float)
    if starts.ndim != 2 or starts.shape[1] != 3 or starts.shape != goals.shape:
        raise ConfigError(f"{ctx}: starts/goals must be matching (n, 3) lists")
    return starts, goals


def _parse_sim(d: dict, ctx: str) -> SimConfig:
    _check_keys(
        d,
        {
            "dt",
            "sensor_period",
            "sensor_range",
            "sensor_noise_std",
            "timeout_s",
            "bus_latency_s",
            "seed",
            "scheduler",
        },
        ctx,
    )
    cfg = SimConfig(
        dt=float(d.get("dt", 0.01)),
        sensor_period=float(d.get("sensor_period", 0.1)),
        sensor_range=float(d.get("sensor_range", 5.0)),
        sensor_noise_std=float(d.get("sensor_noise_std", 0.0)),
        timeout_s=float(d.get("timeout_s", 120.0)),
        bus_latency_s=float(d.get("bus_latency_s", 0.0)),
        seed=int(d.get("seed", 0)),
        scheduler=str(d.get("scheduler", "deterministic")),
    )
    if cfg.scheduler not in ("deterministic", "threaded"):
        raise ConfigError(f"{ctx}: unknown scheduler {cfg.scheduler!r}")
    return cfg


def parse_scenario(doc: dict, base_dir: Path, ctx: str = "scenario") -> ScenarioSpec:
    _check_keys(
        doc,
        {
            "library_file",
            "relations_file",
            "planner",
            "map",
            "map_seed",
            "agents",
            "sim",
            "outputs",
        },
        ctx,
    )
    lib_file = base_dir / _require(doc, "library_file", ctx)
    rel_file = (
        base_dir / doc["relations_file"]
        if "relations_file" in doc
        else lib_file.with_suffix(".mprel")
    )
    starts, goals = _parse_agents(_require(doc, "agents", ctx), f"{ctx}.agents")
    outputs = doc.get("outputs", {})
    _check_keys(outputs, {"csv", "json"}, f"{ctx}.outputs")
    return ScenarioSpec(
        library_file=lib_file,
        relations_file=rel_file,
        planner=_parse_planner(doc.get("planner", {}), f"{ctx}.planner"),
        map_spec=_parse_map(doc["map"], f"{ctx}.map") if "map" in doc else None,
        map_seed=int(doc.get("map_seed", 0)),
        starts=starts,
        goals=goals,
        sim=_parse_sim(doc.get("sim", {}), f"{ctx}.sim"),
        csv_path=base_dir / outputs["csv"] if "csv" in outputs else None,
        json_path=base_dir / outputs["json"] if "json" in outputs else None,
    )


def load_scenario(path) -> ScenarioSpec:
    p = Path(path)
    return parse_scenario(load_yaml(p), base_dir=p.parent, ctx=str(path))
