"""Scenario files: horizon, penalty, delay model and solver settings.

Schema (JSON, unknown keys rejected)::

    {
      "horizon": {"t0": 0.0, "tf": 3.0, "n_bins": 60},
      "penalty": {"kind": "quadratic", "curvature": 1.0},
      "delay_model": "instantaneous",
      "solver": {"step_size": 0.5, "step_rule": "halving-on-gap-increase",
                 "max_iterations": 400, "gap_tolerance": 0.02,
                 "support_threshold": 1e-8},
      "output_dir": "out",
      "seed": 0,
      "network": "net.json"
    }

``penalty`` takes ``{"kind": "piecewise-linear", "early": ..., "late": ...}``
or ``{"kind": "quadratic", "curvature": ...}``.  ``solver``, ``delay_model``,
``output_dir``, ``seed`` and ``network`` are optional; a relative ``network``
path resolves against the scenario file's directory.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from typing import Optional

from .delay import ArrivalPenalty, INSTANTANEOUS, WHOLE_LINK
from .equilibrium import SolverConfig
from .errors import InputError
from .function_space import TimeGrid

_TOP_KEYS = {"horizon", "penalty", "delay_model", "solver", "output_dir",
             "seed", "network"}
_HORIZON_KEYS = {"t0", "tf", "n_bins"}
_SOLVER_KEYS = {"step_size", "step_rule", "max_iterations", "gap_tolerance",
                "support_threshold"}
_PENALTY_KEYS = {"kind", "early", "late", "curvature"}


@dataclass
class ScenarioConfig:
    grid: TimeGrid
    penalty: ArrivalPenalty
    delay_model: str = WHOLE_LINK
    solver: SolverConfig = None
    output_dir: Optional[str] = None
    seed: int = 0
    network: Optional[str] = None

    def __post_init__(self):
        if self.solver is None:
            self.solver = SolverConfig()


def _number(obj, key, where, required=True, default=None):
    if key not in obj:
        if required:
            raise InputError("missing required field", location=f"{where}.{key}")
        return default
    value = obj[key]
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise InputError("expected a number", location=f"{where}.{key}")
    return value


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise InputError("expected an object", location=where)
    unknown = set(obj) - allowed
    if unknown:
        raise InputError(f"unknown key {sorted(unknown)[0]!r}", location=where)


def _parse_penalty(obj) -> ArrivalPenalty:
    _check_keys(obj, _PENALTY_KEYS, "penalty")
    kind = obj.get("kind")
    if kind == "quadratic":
        return ArrivalPenalty.quadratic(_number(obj, "curvature", "penalty"))
    if kind == "piecewise-linear":
        return ArrivalPenalty.piecewise_linear(
            _number(obj, "early", "penalty"), _number(obj, "late", "penalty"))
    raise InputError(f"unknown penalty kind {kind!r}", location="penalty.kind")


def _parse_solver(obj) -> SolverConfig:
    _check_keys(obj, _SOLVER_KEYS, "solver")
    kwargs = {}
    if "step_size" in obj:
        kwargs["step_size"] = float(_number(obj, "step_size", "solver"))
    if "step_rule" in obj:
        rule = obj["step_rule"]
        if rule not in ("fixed", "halving-on-gap-increase"):
            raise InputError(f"unknown step rule {rule!r}",
                             location="solver.step_rule")
        kwargs["step_rule"] = rule
    if "max_iterations" in obj:
        kwargs["max_iterations"] = int(_number(obj, "max_iterations", "solver"))
    if "gap_tolerance" in obj:
        kwargs["gap_tolerance"] = float(_number(obj, "gap_tolerance", "solver"))
    if "support_threshold" in obj:
        kwargs["support_threshold"] = float(
            _number(obj, "support_threshold", "solver"))
    try:
        return SolverConfig(**kwargs)
    except ValueError as exc:
        raise InputError(str(exc), location="solver") from None


def parse_scenario(obj, base_dir=".") -> ScenarioConfig:
    _check_keys(obj, _TOP_KEYS, "scenario")
    if "horizon" not in obj:
        raise InputError("missing required field", location="scenario.horizon")
    horizon = obj["horizon"]
    _check_keys(horizon, _HORIZON_KEYS, "horizon")
    try:
        grid = TimeGrid(t0=float(_number(horizon, "t0", "horizon")),
                        tf=float(_number(horizon, "tf", "horizon")),
                        n_bins=int(_number(horizon, "n_bins", "horizon")))
    except ValueError as exc:
        raise InputError(str(exc), location="horizon") from None

    if "penalty" not in obj:
        raise InputError("missing required field", location="scenario.penalty")
    penalty = _parse_penalty(obj["penalty"])

    model = obj.get("delay_model", WHOLE_LINK)
    if model not in (WHOLE_LINK, INSTANTANEOUS):
        raise InputError(f"unknown delay model {model!r}",
                         location="delay_model")

    solver = _parse_solver(obj["solver"]) if "solver" in obj else SolverConfig()

    network = obj.get("network")
    if network is not None:
        if not isinstance(network, str):
            raise InputError("expected a string", location="network")
        if not os.path.isabs(network):
            network = os.path.join(base_dir, network)
        if not os.path.exists(network):
            raise InputError(f"referenced network file not found: {network}",
                             location="network")

    seed = obj.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise InputError("expected an integer", location="seed")

    output_dir = obj.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise InputError("expected a string", location="output_dir")

    return ScenarioConfig(grid=grid, penalty=penalty, delay_model=model,
                          solver=solver, output_dir=output_dir, seed=seed,
                          network=network)


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            obj = json.load(handle)
    except FileNotFoundError:
        raise InputError(f"scenario file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"invalid JSON in {path}: {exc}") from None
    return parse_scenario(obj, base_dir=os.path.dirname(os.path.abspath(path)))
