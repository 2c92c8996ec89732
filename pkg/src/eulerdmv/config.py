"""Experiment configuration: presets, validation and hashing."""
from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import numpy as np

from .domain import Grid
from .exact_riemann import PrimitiveState, RiemannData
from .solver import SchemeConfig
from .thermo import GasModel


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "gas": {"gamma": 1.4},
    "grid": {"n": [256], "extent": [1.0], "origin": [-0.5], "topology": "strip"},
    "initial": {"type": "sod"},
    "scheme": {"flux": "rusanov", "cfl": 0.4, "checkpoint_dt": 0.05},
    "t_end": 0.2,
}

PRESETS = {
    "sod": {},
    "uniform": {
        "grid": {"n": [64], "extent": [1.0], "origin": [0.0], "topology": "periodic"},
        "initial": {"type": "uniform", "rho": 1.0, "p": 1.0},
    },
    "smooth-advection": {
        "grid": {"n": [256], "extent": [1.0], "origin": [0.0], "topology": "periodic"},
        "initial": {"type": "smooth_advection", "amplitude": 0.2},
        "scheme": {"flux": "rusanov", "cfl": 0.4, "checkpoint_dt": 0.0625},
        "t_end": 0.5,
    },
    "equal-states": {
        "initial": {"type": "riemann", "left": {"rho": 1.0, "u": 0.0, "p": 1.0},
                    "right": {"rho": 1.0, "u": 0.0, "p": 1.0}},
    },
    "sod-temperature": {
        "initial": {"type": "riemann", "left": {"rho": 1.0, "u": 0.0, "theta": 1.0},
                    "right": {"rho": 0.125, "u": 0.0, "theta": 0.8}},
    },
    "sod-ensemble": {
        "grid": {"n": [128], "extent": [1.0], "origin": [-0.5], "topology": "strip"},
        "scheme": {"flux": "rusanov", "cfl": 0.4, "checkpoint_dt": 0.015625},
        "t_end": 0.25,
        "ensemble": [{"flux": "rusanov", "n": 128, "seed": 1},
                     {"flux": "hll", "n": 256, "seed": 2}],
        "selection": {"procedure": "two_step"},
    },
    "lift-demo": {
        "grid": {"n": [128], "extent": [1.0], "origin": [-0.5], "topology": "strip"},
        "scheme": {"flux": "rusanov", "cfl": 0.4, "checkpoint_dt": 0.015625},
        "t_end": 0.25,
        "ensemble": [{"flux": "rusanov", "n": 128, "seed": 0}],
        "energy_budget_factor": 1.05,
        "lift": {"tau": 0.0625, "lambdas": [0.5, 1.0, 2.0, 4.0, 8.0, 16.0]},
        "selection": {"procedure": "single"},
    },
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k not in ("initial", "grid"):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, preset: str | None = None) -> dict:
    """Expanded configuration from defaults, an optional preset and an optional file."""
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = _merge(cfg, PRESETS[preset])
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        cfg = _merge(cfg, user)
    validate(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def gas_of(cfg: dict) -> GasModel:
    try:
        return GasModel.from_dict(cfg["gas"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad gas model: {exc}") from exc


def grid_of(cfg: dict, n=None) -> Grid:
    g = dict(cfg["grid"])
    if n is not None:
        n = [n] if np.isscalar(n) else list(n)
        g["n"] = n + list(g["n"][len(n):])
    try:
        return Grid(tuple(g["n"]), tuple(g["extent"]), tuple(g.get("origin") or [0.0] * len(g["n"])),
                    g.get("topology", "periodic"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid: {exc}") from exc


def scheme_of(cfg: dict, **over) -> SchemeConfig:
    s = dict(cfg["scheme"])
    s.update({k: v for k, v in over.items() if v is not None})
    s.pop("n", None)
    s.pop("seed", None)
    try:
        return SchemeConfig(**s)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad scheme: {exc}") from exc


def _primitive(d: dict) -> PrimitiveState:
    if "theta" in d and "p" in d:
        raise ConfigError("give either pressure or temperature, not both")
    rho = float(d["rho"])
    p = rho * float(d["theta"]) if "theta" in d else float(d["p"])
    return PrimitiveState(rho, float(d.get("u", 0.0)), p, float(d.get("v", 0.0)))


def riemann_data_of(cfg: dict) -> RiemannData:
    init = cfg["initial"]
    gamma = gas_of(cfg).gamma
    if init["type"] == "sod":
        return RiemannData(PrimitiveState(1.0, 0.0, 1.0), PrimitiveState(0.125, 0.0, 0.1), gamma)
    if init["type"] == "riemann":
        try:
            return RiemannData(_primitive(init["left"]), _primitive(init["right"]), gamma)
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"bad Riemann data: {exc}") from exc
    raise ConfigError(f"initial data of type {init['type']!r} is not a Riemann problem")


def validate(cfg: dict) -> None:
    """Resolve every sub-section once so errors surface before any compute."""
    gas_of(cfg)
    grid = grid_of(cfg)
    scheme_of(cfg)
    kind = cfg["initial"].get("type")
    if kind not in ("uniform", "smooth_advection", "sod", "riemann", "perturbed"):
        raise ConfigError(f"unknown initial data type {kind!r}")
    if kind in ("sod", "riemann"):
        if grid.topology != "strip":
            raise ConfigError("Riemann data need a strip grid")
        try:
            riemann_data_of(cfg)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if not float(cfg.get("t_end", 0)) > 0:
        raise ConfigError("t_end must be positive")
    for i, m in enumerate(cfg.get("ensemble", [])):
        if not isinstance(m, dict):
            raise ConfigError(f"ensemble member {i} must be an object")
        scheme_of(cfg, **{k: v for k, v in m.items() if k not in ("n", "seed")})
        grid_of(cfg, m.get("n"))
    sel = cfg.get("selection", {})
    if sel.get("procedure", "two_step") not in ("two_step", "single", "krylov_chain"):
        raise ConfigError(f"unknown selection procedure {sel.get('procedure')!r}")
    if float(cfg.get("energy_budget_factor", 1.0)) < 1.0:
        raise ConfigError("energy_budget_factor must be at least 1")
