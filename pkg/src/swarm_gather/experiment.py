"""Experiment configuration, initial constellations, file output and sweeps."""

from __future__ import annotations

import copy
import csv
import itertools
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import monitors as mon
from .core import (
    ConfigurationError,
    Constellation,
    SystemParams,
    build_visibility,
    diameter,
    is_connected,
)
from .dynamics import SystemKind
from .scheduler import Schedule, derived_rng
from .simulation import (
    STATUS_BUDGET,
    STATUS_COMPLETED,
    STATUS_GATHERED,
    System,
    TrajectoryRecord,
    richardson_error,
    run,
)

CONFIG_VERSION = 1
STATUS_VIOLATED = "invariant-violated"
EXIT_CODES = {
    STATUS_GATHERED: 0,
    STATUS_COMPLETED: 0,
    STATUS_BUDGET: 1,
    "validation-error": 2,
    STATUS_VIOLATED: 3,
}
SEED_ENV = "SWARM_GATHER_SEED"
STREAM_INITIAL = 2

TRAJECTORY_HEADER = ("step", "t", "agent", "x", "y", "active", "locked")


def fmt(x: float) -> str:
    """17 significant digits: parses back to the identical double."""
    return format(float(x), ".17g")


# --- presets ---------------------------------------------------------------


def _gordon_locked(n=None, spacing=None):
    return np.array(
        [(-0.1, 0.0), (0.0, 0.0), (0.1, 0.0), (-0.1, -1.0), (0.0, -1.0), (0.1, -1.0)]
    )


def _line(n=10, spacing=1.0):
    return np.column_stack((np.arange(n) * float(spacing), np.zeros(n)))


def _polygon(n=6, spacing=1.0):
    ang = 2 * math.pi * np.arange(n) / n
    return float(spacing) * np.column_stack((np.cos(ang), np.sin(ang)))


def _triangle(n=None, spacing=1.0):
    return _polygon(3, spacing)


def _pair(n=None, spacing=1.0):
    return np.array([(0.0, 0.0), (float(spacing), 0.0)])


PRESETS = {
    "gordon-locked": (
        _gordon_locked,
        "six agents in two rows of three, 1 apart; locks the deterministic "
        "bisector rule at V=1, sigma=0.2",
    ),
    "line-n-agents": (_line, "n agents on a horizontal line, `spacing` apart"),
    "regular-polygon": (_polygon, "n agents on a circle of radius `spacing`"),
    "equilateral-triangle": (_triangle, "three agents on a circle of radius `spacing`"),
    "two-agents": (_pair, "two agents `spacing` apart on the x axis"),
}


def preset_points(name: str, n: Optional[int] = None, spacing: Optional[float] = None) -> np.ndarray:
    if name not in PRESETS:
        raise ConfigurationError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    fn = PRESETS[name][0]
    kwargs = {}
    if n is not None:
        kwargs["n"] = int(n)
    if spacing is not None:
        kwargs["spacing"] = float(spacing)
    return fn(**kwargs)


# --- random starts ---------------------------------------------------------


def uniform_box(n: int, width: float, height: float, rng: np.random.Generator) -> np.ndarray:
    return rng.random((n, 2)) * np.array([width, height])


def random_connected(
    n: int, V: float, rng: np.random.Generator, low: float = 0.1, high: float = 0.95
) -> np.ndarray:
    """Grow a random tree: each new agent lands at distance in
    [low*V, high*V] from a uniformly chosen earlier agent, so the V-disk
    graph is connected by construction."""
    if not math.isfinite(V):
        raise ConfigurationError("random-connected starts need a finite V")
    P = np.zeros((n, 2))
    for i in range(1, n):
        parent = rng.integers(i)
        r = V * (low + (high - low) * rng.random())
        phi = 2 * math.pi * rng.random()
        P[i] = P[parent] + r * np.array([math.cos(phi), math.sin(phi)])
    return P


# --- configuration -----------------------------------------------------------


DEFAULTS: dict = {
    "spec_version": CONFIG_VERSION,
    "system": "S1",
    "sigma": 1.0,
    "V": None,
    "delta": None,
    "rho": 1.0,
    "dt": 1e-3,
    "epsilon_gather": 1e-6,
    "alpha": None,
    "laplacian": None,
    "laplacian_mode": "discrete",
    "graph": "complete",
    "variant": "randomized",
    "merge": True,
    "initial": "uniform-box",
    "points": None,
    "n": None,
    "box": [1.0, 1.0],
    "require_connected": False,
    "preset": None,
    "spacing": None,
    "schedule": "synchronous",
    "masks": None,
    "seed": None,
    "max_steps": 1000,
    "max_time": None,
    "stop": "gathered",
    "gather_mode": "point",
    "monitors": None,
    "fatal_invariants": False,
    "richardson": False,
    "trajectory_file": "trajectory.csv",
    "metrics_file": "metrics.csv",
    "summary_file": "summary.json",
}

INITIAL_KINDS = ("explicit", "uniform-box", "random-connected", "preset")


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated flat configuration. ``values`` holds every field."""

    values: dict

    def __getitem__(self, key):
        return self.values[key]

    def to_dict(self) -> dict:
        return copy.deepcopy(self.values)

    def with_updates(self, **updates) -> "ExperimentConfig":
        d = self.to_dict()
        d.update(updates)
        return parse_config(d)

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values

    __hash__ = None


def _err(field_name: str, message: str) -> ConfigurationError:
    return ConfigurationError(f"{field_name}: {message}")


def parse_config(raw: dict) -> ExperimentConfig:
    """Fill defaults and validate each field; errors name the field."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise _err(sorted(unknown)[0], "unknown field")
    version = raw.get("spec_version")
    if version != CONFIG_VERSION:
        raise _err("spec_version", f"expected {CONFIG_VERSION}, got {version!r}")
    v = copy.deepcopy(DEFAULTS)
    v.update(copy.deepcopy(raw))

    try:
        kind = SystemKind(v["system"])
    except ValueError:
        raise _err("system", f"unknown system {v['system']!r}") from None
    if kind.needs_visibility and v["V"] is None:
        raise _err("V", f"{kind.value} needs a visibility range")
    if kind in (SystemKind.S5, SystemKind.S5JE) and v["delta"] is None:
        raise _err("delta", f"{kind.value} needs a band width")
    try:
        _params(v)
    except ConfigurationError as e:
        msg = str(e)
        name = next((f for f in ("delta", "sigma", "V", "dt", "rho", "epsilon_gather") if f in msg), "params")
        raise _err(name, msg) from None
    if v["initial"] not in INITIAL_KINDS:
        raise _err("initial", f"choose from {INITIAL_KINDS}")
    if v["initial"] == "explicit" and not v["points"]:
        raise _err("points", "explicit starts need a list of points")
    if v["initial"] == "preset" and v["preset"] not in PRESETS:
        raise _err("preset", f"choose from {sorted(PRESETS)}")
    if v["initial"] in ("uniform-box", "random-connected") and v["n"] is None:
        raise _err("n", "random starts need an agent count")
    if v["n"] is not None and not (isinstance(v["n"], int) and v["n"] >= 1):
        raise _err("n", "must be a positive integer")
    if v["initial"] == "random-connected" and v["V"] is None:
        raise _err("V", "random-connected starts need a visibility range")
    if v["schedule"] not in ("synchronous", "bernoulli", "scripted"):
        raise _err("schedule", "choose synchronous, bernoulli or scripted")
    if v["schedule"] == "scripted" and not v["masks"]:
        raise _err("masks", "scripted schedules need masks")
    if v["stop"] not in ("gathered", "budget"):
        raise _err("stop", "choose gathered or budget")
    if v["gather_mode"] not in ("point", "disc"):
        raise _err("gather_mode", "choose point or disc")
    if not (isinstance(v["max_steps"], int) and v["max_steps"] >= 0):
        raise _err("max_steps", "must be a non-negative integer")
    if v["max_time"] is not None and not v["max_time"] > 0:
        raise _err("max_time", "must be positive")
    if v["monitors"] is not None:
        bad = [m for m in v["monitors"] if m not in mon.ALL_SERIES]
        if bad:
            raise _err("monitors", f"unknown monitors {bad}")
    if v["seed"] is not None and not isinstance(v["seed"], int):
        raise _err("seed", "must be an integer")
    if kind is SystemKind.LAPLACIAN and v["laplacian"] is None:
        raise _err("laplacian", "the Laplacian rule needs a matrix")
    if kind is SystemKind.POTENTIAL_ALPHA and v["alpha"] is None:
        raise _err("alpha", "the potential rule needs alpha")
    try:
        _system(v)
    except ConfigurationError as e:
        raise _err("system", str(e)) from None
    return ExperimentConfig(v)


def _params(v: dict) -> SystemParams:
    return SystemParams(
        sigma=float(v["sigma"]),
        V=math.inf if v["V"] is None else float(v["V"]),
        delta=None if v["delta"] is None else float(v["delta"]),
        rho=float(v["rho"]),
        dt=float(v["dt"]),
        epsilon_gather=float(v["epsilon_gather"]),
    )


def _system(v: dict) -> System:
    return System(
        kind=SystemKind(v["system"]),
        params=_params(v),
        laplacian=None if v["laplacian"] is None else np.asarray(v["laplacian"], dtype=float),
        laplacian_mode=v["laplacian_mode"],
        alpha=v["alpha"],
        graph=v["graph"],
        variant=v["variant"],
        merge=bool(v["merge"]),
    )


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(json.load(fh))


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.values, indent=2, sort_keys=True)


def resolve_seed(cfg: ExperimentConfig, override: Optional[int] = None) -> int:
    """Command line, then config, then the environment, then 0."""
    if override is not None:
        return int(override)
    if cfg["seed"] is not None:
        return int(cfg["seed"])
    env = os.environ.get(SEED_ENV)
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return 0


def initial_constellation(cfg: ExperimentConfig, seed: int) -> Constellation:
    v = cfg.values
    kind = v["initial"]
    if kind == "explicit":
        return Constellation(np.asarray(v["points"], dtype=float))
    if kind == "preset":
        return Constellation(preset_points(v["preset"], v["n"], v["spacing"]))
    rng = derived_rng(seed, 0, stream=STREAM_INITIAL)
    params = _params(v)
    if kind == "random-connected":
        return Constellation(random_connected(v["n"], params.V, rng))
    width, height = v["box"]
    for _ in range(10_000):
        c = Constellation(uniform_box(v["n"], width, height, rng))
        if not v["require_connected"] or is_connected(build_visibility(c, params, "v-disk")):
            return c
    raise ConfigurationError("could not draw a connected start in the box; enlarge V or shrink the box")


def schedule_for(cfg: ExperimentConfig, seed: int) -> Schedule:
    v = cfg.values
    if v["schedule"] == "synchronous":
        return Schedule.synchronous(seed)
    if v["schedule"] == "bernoulli":
        return Schedule.bernoulli(float(v["rho"]), seed)
    return Schedule.scripted(v["masks"], seed)


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    record: TrajectoryRecord
    status: str

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.status]

    @property
    def report(self) -> mon.MonitorReport:
        return self.record.report


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None) -> ExperimentResult:
    """Build the rule, start and schedule from ``cfg`` and run it."""
    seed = resolve_seed(cfg, seed)
    v = cfg.values
    system = _system(v)
    c0 = initial_constellation(cfg, seed)
    max_steps = v["max_steps"]
    if v["max_time"] is not None and system.continuous:
        max_steps = int(math.ceil(v["max_time"] / system.params.dt))
    rec = run(
        system,
        c0,
        schedule_for(cfg, seed),
        max_steps=max_steps,
        stop=v["stop"],
        gather_mode=v["gather_mode"],
        monitors=v["monitors"],
        seed=seed,
    )
    if v["richardson"] and system.continuous:
        rec.richardson_error = richardson_error(system, c0, max(rec.steps, 1))
    status = rec.status
    if v["fatal_invariants"] and rec.report.violations:
        status = STATUS_VIOLATED
    return ExperimentResult(cfg, rec, status)


# --- files -------------------------------------------------------------------


def write_trajectory(rec: TrajectoryRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for k in range(rec.positions.shape[0]):
            t = fmt(rec.times[k])
            for i in range(rec.n):
                x, y = rec.positions[k, i]
                w.writerow(
                    (k, t, i, fmt(x), fmt(y), int(rec.active[k, i]), int(rec.locked[k, i]))
                )


def read_trajectory(path) -> dict:
    """Inverse of :func:`write_trajectory`: arrays keyed like the header."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ConfigurationError(f"{path} holds no rows")
    K = max(int(r["step"]) for r in rows) + 1
    n = max(int(r["agent"]) for r in rows) + 1
    positions = np.empty((K, n, 2))
    times = np.empty(K)
    active = np.zeros((K, n), bool)
    locked = np.zeros((K, n), bool)
    for r in rows:
        k, i = int(r["step"]), int(r["agent"])
        positions[k, i] = float(r["x"]), float(r["y"])
        times[k] = float(r["t"])
        active[k, i] = r["active"] == "1"
        locked[k, i] = r["locked"] == "1"
    return {"positions": positions, "times": times, "active": active, "locked": locked}


def write_metrics(rec: TrajectoryRecord, path) -> None:
    names = list(rec.report.series)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "t", *names])
        for k in range(rec.positions.shape[0]):
            w.writerow([k, fmt(rec.times[k]), *(fmt(rec.report.series[s][k]) for s in names)])


def read_metrics(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        cols = list(zip(*reader))
    return {
        name: np.array([float(x) for x in col]) if name != "step" else np.array([int(x) for x in col])
        for name, col in zip(header, cols)
    }


def summary(result: ExperimentResult) -> dict:
    rec = result.record
    s = {
        "status": result.status,
        "exit_code": result.exit_code,
        "seed": rec.seed,
        "steps": rec.steps,
        "time": float(rec.times[-1]),
        "final_diameter": diameter(rec.final),
        "violations": len(rec.report.violations),
        "max_violation": rec.report.max_violation(),
        "chatter_events": int(rec.chatter.sum()) if rec.chatter is not None else 0,
    }
    if rec.richardson_error is not None:
        s["richardson_error"] = rec.richardson_error
    if rec.system.kind is SystemKind.S4:
        conf = mon.check_s4_confinement(rec.positions, rec.system.params.sigma)
        s["confinement_radius"] = conf.max_radius_after
    return s


def emit(result: ExperimentResult, out_dir) -> dict:
    """Write trajectory, metrics and summary files; return their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ConfigurationError(f"cannot create output directory {out}: {e}") from None
    v = result.config.values
    paths = {
        "trajectory": out / v["trajectory_file"],
        "metrics": out / v["metrics_file"],
        "summary": out / v["summary_file"],
    }
    write_trajectory(result.record, paths["trajectory"])
    write_metrics(result.record, paths["metrics"])
    with open(paths["summary"], "w", encoding="utf-8") as fh:
        json.dump(summary(result), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# --- sweeps ------------------------------------------------------------------

SWEEP_COLUMNS = ("seed", "status", "gathered", "steps", "final_diameter", "max_violation", "confinement_radius")


def sweep(template: ExperimentConfig, grid: Optional[dict] = None, seeds=(0,)) -> list:
    """Run every combination of ``grid`` values for every seed.

    Returns one dict per cell with the grid values plus summary columns.
    """
    grid = grid or {}
    for key in grid:
        if key not in DEFAULTS:
            raise _err(key, "unknown field in sweep grid")
        if not isinstance(grid[key], (list, tuple)) or not grid[key]:
            raise _err(key, "grid values must be a non-empty list")
    keys = list(grid)
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cfg = template.with_updates(**dict(zip(keys, combo)))
        for seed in seeds:
            res = run_experiment(cfg, seed)
            s = summary(res)
            row = dict(zip(keys, combo))
            row.update(
                seed=int(seed),
                status=res.status,
                gathered=res.status == STATUS_GATHERED,
                steps=s["steps"],
                final_diameter=s["final_diameter"],
                max_violation=s["max_violation"],
                confinement_radius=s.get("confinement_radius", float("nan")),
            )
            rows.append(row)
    return rows


def write_sweep(rows: list, path) -> None:
    if not rows:
        raise ConfigurationError("no sweep rows to write")
    header = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r[h]) if isinstance(r[h], float) else r[h] for h in header])
