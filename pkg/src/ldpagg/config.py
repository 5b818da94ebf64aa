"""JSON run-configuration loading, validation, and object construction.

Unknown keys are rejected with a path-to-key diagnostic (typo safety).
Structural problems (bad weight matrix, malformed schema) are fatal;
assumption violations (stepsize chain, noise-rate conditions) are
downgraded to warnings so ablation runs remain possible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import problems, schedules as sched, topology as topo
from .privacy import SensitivityParams
from .schedules import ConvexityCase, ScheduleSet, StepsizeSchedule, broadcast_noise


class ConfigError(ValueError):
    pass


_TOP_KEYS = {"topology", "schedules", "problem", "T", "seeds", "master_seed",
             "init_radius", "case", "sensitivity", "calibration", "out"}
_TOPOLOGY_KEYS = {"type", "m", "w", "weights"}
_SCHED_KEYS = {"preset", "delta", "lambda0", "sigma", "stepsize", "noise"}
_STEP_KEYS = {"lambda0", "v"}
_NOISE_KEYS = {"sigma", "varsigma"}
_QUAD_KEYS = {"family", "ni", "r", "gamma", "alpha", "noise_std_g",
              "noise_std_f", "box", "seed", "coeff_scale"}
_PERS_KEYS = {"family", "classes", "features", "lam", "dataset_size", "box",
              "seed", "spread", "primary_frac"}
_SENS_KEYS = {"L_l", "L_h", "Lbar_l", "Lbar_h", "d_l", "d_z"}
_CAL_KEYS = {"epsilon"}

_PRESETS = {
    "corollary1-sc": ConvexityCase.STRONGLY_CONVEX,
    "corollary1-cvx": ConvexityCase.CONVEX,
    "corollary1-ncvx": ConvexityCase.NONCONVEX,
}


def _check_keys(block, allowed, path):
    if not isinstance(block, dict):
        raise ConfigError(f"{path}: expected an object")
    for k in block:
        if k not in allowed:
            raise ConfigError(f"{path}.{k}: unknown key")


@dataclass
class RunConfig:
    raw: dict
    topology: topo.NetworkTopology
    schedules: ScheduleSet
    case: ConvexityCase
    problem: problems.ProblemInstance
    T: int
    seeds: int
    master_seed: int
    init_radius: float
    sensitivity: SensitivityParams | None
    calibration_eps: float | None
    out: str
    warnings: list = field(default_factory=list)


def _build_topology(block):
    _check_keys(block, _TOPOLOGY_KEYS, "topology")
    kind = block.get("type")
    if kind == "ring":
        return topo.ring_topology(int(block["m"]), float(block["w"]))
    if kind == "trivial":
        return topo.trivial_topology()
    if kind == "matrix":
        try:
            return topo.from_matrix(np.asarray(block["weights"], dtype=float))
        except ValueError as e:
            raise ConfigError(f"topology.weights: {e}") from None
    raise ConfigError(f"topology.type: expected ring|trivial|matrix, got {kind!r}")


def _triple(block, key, default):
    v = block.get(key, default)
    if np.isscalar(v):
        v = [v, v, v]
    if len(v) != 3:
        raise ConfigError(f"schedules.{key}: expected a scalar or a 3-list")
    return v


def _build_schedules(block, m):
    _check_keys(block, _SCHED_KEYS, "schedules")
    if "preset" in block:
        if "stepsize" in block or "noise" in block:
            raise ConfigError("schedules: preset excludes explicit stepsize/noise blocks")
        name = block["preset"]
        if name not in _PRESETS:
            raise ConfigError(f"schedules.preset: unknown preset {name!r}")
        case = _PRESETS[name]
        delta = float(block.get("delta", 0.01))
        lambda0 = [float(x) for x in _triple(block, "lambda0", 1.0)]
        sigma = _triple(block, "sigma", 1.0)
        try:
            return sched.corollary1_preset(case, delta, m=m, lambda0=lambda0,
                                           sigma=sigma), case
        except ValueError as e:
            raise ConfigError(f"schedules.preset: {e}") from None
    for part in ("stepsize", "noise"):
        if part not in block:
            raise ConfigError(f"schedules.{part}: required without a preset")
    steps = {}
    for ax in ("x", "y", "z"):
        b = block["stepsize"].get(ax)
        if b is None:
            raise ConfigError(f"schedules.stepsize.{ax}: required")
        _check_keys(b, _STEP_KEYS, f"schedules.stepsize.{ax}")
        steps[ax] = StepsizeSchedule(float(b["lambda0"]), float(b["v"]))
    noises = {}
    for ax in ("x", "y", "z"):
        b = block["noise"].get(ax)
        if b is None:
            raise ConfigError(f"schedules.noise.{ax}: required")
        _check_keys(b, _NOISE_KEYS, f"schedules.noise.{ax}")
        noises[ax] = broadcast_noise(b["sigma"], b["varsigma"], m)
    return ScheduleSet(lambda_x=steps["x"], lambda_y=steps["y"],
                       lambda_z=steps["z"], noise_x=noises["x"],
                       noise_y=noises["y"], noise_z=noises["z"]), None


def _build_problem(block, m):
    if not isinstance(block, dict) or "family" not in block:
        raise ConfigError("problem.family: required")
    fam = block["family"]
    if fam == "quadratic":
        _check_keys(block, _QUAD_KEYS, "problem")
        box = block.get("box", [-1e6, 1e6])
        if box[0] > box[1]:
            raise ConfigError("problem.box: inverted bounds")
        return problems.make_quadratic_problem(
            m=m, ni=int(block.get("ni", 2)), r=int(block.get("r", 2)),
            gamma=float(block.get("gamma", 1.0)),
            alpha=float(block.get("alpha", 1.0)),
            noise_std_g=float(block.get("noise_std_g", 0.1)),
            noise_std_f=float(block.get("noise_std_f", 0.1)),
            box=(box[0], box[1]), seed=int(block.get("seed", 0)),
            coeff_scale=float(block.get("coeff_scale", 0.3)))
    if fam == "personalized":
        _check_keys(block, _PERS_KEYS, "problem")
        box = block.get("box", [-1e6, 1e6])
        if box[0] > box[1]:
            raise ConfigError("problem.box: inverted bounds")
        return problems.make_personalized_problem(
            m=m, classes=int(block.get("classes", 5)),
            features=int(block.get("features", 2)),
            lam=float(block.get("lam", 1.0)),
            dataset_size=int(block.get("dataset_size", 32)),
            box=(box[0], box[1]), seed=int(block.get("seed", 0)),
            spread=float(block.get("spread", 1.5)),
            primary_frac=float(block.get("primary_frac", 0.6)))
    raise ConfigError(f"problem.family: expected quadratic|personalized, got {fam!r}")


def load_config(path) -> RunConfig:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from None
    return parse_config(raw)


def parse_config(raw: dict) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "config")
    for req in ("topology", "schedules", "problem"):
        if req not in raw:
            raise ConfigError(f"config.{req}: required")
    warnings_list = []
    topology = _build_topology(raw["topology"])
    schedule_set, preset_case = _build_schedules(raw["schedules"], topology.m)
    case_name = raw.get("case")
    if case_name is not None:
        try:
            case = ConvexityCase(case_name)
        except ValueError:
            raise ConfigError(f"config.case: expected sc|cvx|ncvx, got {case_name!r}") from None
    else:
        case = preset_case or ConvexityCase.STRONGLY_CONVEX
    problem = _build_problem(raw["problem"], topology.m)

    report = sched.check_conditions(schedule_set, case)
    if not report.ok:
        warnings_list.append(
            "schedule conditions violated (run proceeds as an ablation): "
            + "; ".join(report.failures()))

    sens = None
    if "sensitivity" in raw:
        _check_keys(raw["sensitivity"], _SENS_KEYS, "sensitivity")
        b = raw["sensitivity"]
        try:
            sens = SensitivityParams(
                L_l=float(b["L_l"]), L_h=float(b["L_h"]),
                Lbar_l=float(b["Lbar_l"]), Lbar_h=float(b["Lbar_h"]),
                d_l=float(b["d_l"]), d_z=float(b["d_z"]),
                w_bar=topology.w_bar if topology.m > 1 else 0.5,
                n_i=problem.ni, r=problem.r,
                lambda_x=schedule_set.lambda_x,
                lambda_y=schedule_set.lambda_y,
                lambda_z=schedule_set.lambda_z)
        except (KeyError, ValueError) as e:
            raise ConfigError(f"sensitivity: {e}") from None
        if topology.m == 1:
            warnings_list.append("sensitivity accounting with m=1 uses w_bar=0.5 "
                                 "(no consensus damping exists)")

    cal = None
    if "calibration" in raw:
        _check_keys(raw["calibration"], _CAL_KEYS, "calibration")
        cal = float(raw["calibration"]["epsilon"])
        if cal <= 0:
            raise ConfigError("calibration.epsilon: must be positive")

    T = int(raw.get("T", 1000))
    if T < 0:
        raise ConfigError("config.T: must be nonnegative")
    seeds = int(raw.get("seeds", 1))
    if seeds < 1:
        raise ConfigError("config.seeds: must be positive")
    return RunConfig(
        raw=raw, topology=topology, schedules=schedule_set, case=case,
        problem=problem, T=T, seeds=seeds,
        master_seed=int(raw.get("master_seed", 0)),
        init_radius=float(raw.get("init_radius", 10.0)),
        sensitivity=sens, calibration_eps=cal,
        out=str(raw.get("out", "runs")), warnings=warnings_list)
