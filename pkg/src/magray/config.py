"""Experiment configuration: schema validation and construction of surfaces / fields.

A config is a JSON object::

    {"version": 1, "experiment": "orbits", "seed": 7,
     "surface": {"Lx": 6.283, "Ly": 6.283, "Nx": 32, "Ny": 32, "phi_modes": [...]},
     "force": {"kind": "magnetic", "b_modes": [...]},
     "params": {"pmax": 2}}

Mode lists hold ``{kx, ky, re, im}`` entries (plus ``j`` for thermostat modes).
Unknown keys anywhere are rejected with their key path.
"""
from __future__ import annotations

import copy
import json
from pathlib import Path

import numpy as np

from .geometry import ConfigError, ConformalSurface, ForceField, ModeField

SCHEMA_VERSION = 1
TWO_PI = 2 * np.pi

EXPERIMENTS = {
    "simulate": {"x0": 0.0, "y0": 0.0, "theta0": 0.0, "T": 10.0, "step": 1e-2},
    "orbits": {"pmax": 2, "n_nodes": 64, "tol": 1e-8, "step": 1e-2, "method": "auto"},
    "xray": {"orbits": None, "pair": None},
    "decompose": {"pair": None, "m": 1, "tol": 1e-10, "kmax": 4},
    "normal": {"pair": None, "m": 1, "eps": 2.0, "n_t": 129, "n_theta": 64,
               "include_mean": True, "kmax": 3},
    "probe-symbol": {"m": 0, "kx": 8, "ky": 0, "eps": 2.0, "n_t": 129, "n_theta": 256,
                     "n_points": 8},
    "spectrum": {"N": 12, "m": 1, "eps": 2.0, "n_t": 129, "n_theta": 64},
    "rigidity": {"orbits": None, "n_fields": 50, "modes": 8},
    "stability": {"pmax": 1, "m": 1, "n_samples": 30, "eps_min": 1e-3, "eps_max": 1.0,
                  "kmax": 3, "tol": 1e-10},
}

_TOP = {"version", "experiment", "seed", "surface", "force", "params"}
_SURFACE = {"Lx": TWO_PI, "Ly": TWO_PI, "Nx": 32, "Ny": 32, "phi_modes": []}
_FORCE = {"kind": "magnetic", "b_modes": [], "lambda_modes": [], "alpha_modes": None}
_MODE_KEYS = {"kx", "ky", "re", "im", "j"}


def _reject_unknown(obj, allowed, path):
    if not isinstance(obj, dict):
        raise ConfigError(f"{path or '<root>'}: expected an object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        where = f"{path}." if path else ""
        raise ConfigError("unknown key(s): " + ", ".join(where + k for k in extra))


def _check_modes(modes, path, allow_j=False):
    if modes is None:
        return []
    if not isinstance(modes, list):
        raise ConfigError(f"{path}: expected a list of modes")
    for i, m in enumerate(modes):
        _reject_unknown(m, _MODE_KEYS if allow_j else _MODE_KEYS - {"j"}, f"{path}[{i}]")
        for k, v in m.items():
            if not isinstance(v, (int, float)) or isinstance(v, bool):
                raise ConfigError(f"{path}[{i}].{k}: expected a number")
            if k in ("kx", "ky", "j") and int(v) != v:
                raise ConfigError(f"{path}[{i}].{k}: expected an integer")
    return modes


def resolve(cfg: dict, experiment=None, overrides=None) -> dict:
    """Validate ``cfg`` and fill defaults; returns a new, fully resolved dict."""
    cfg = copy.deepcopy(cfg or {})
    _reject_unknown(cfg, _TOP, "")
    version = cfg.get("version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"version: unsupported schema version {version}")
    exp = experiment or cfg.get("experiment")
    if exp is None:
        raise ConfigError("experiment: missing")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment: unknown experiment '{exp}'")
    if cfg.get("experiment") not in (None, exp):
        raise ConfigError(f"experiment: config names '{cfg['experiment']}' but '{exp}' was requested")
    surf = {**_SURFACE, **cfg.get("surface", {})}
    _reject_unknown(cfg.get("surface", {}), _SURFACE, "surface")
    for key in ("Lx", "Ly"):
        if not isinstance(surf[key], (int, float)) or surf[key] <= 0:
            raise ConfigError(f"surface.{key}: must be a positive number")
    for key in ("Nx", "Ny"):
        if not isinstance(surf[key], int) or surf[key] < 8 or surf[key] % 2:
            raise ConfigError(f"surface.{key}: must be an even integer >= 8")
    _check_modes(surf["phi_modes"], "surface.phi_modes")
    force = {**_FORCE, **cfg.get("force", {})}
    _reject_unknown(cfg.get("force", {}), _FORCE, "force")
    if force["kind"] not in ("magnetic", "thermostat"):
        raise ConfigError("force.kind: must be 'magnetic' or 'thermostat'")
    _check_modes(force["b_modes"], "force.b_modes")
    _check_modes(force["lambda_modes"], "force.lambda_modes", allow_j=True)
    if force["alpha_modes"] is not None:
        _reject_unknown(force["alpha_modes"], {"alpha1", "alpha2"}, "force.alpha_modes")
        for k in ("alpha1", "alpha2"):
            _check_modes(force["alpha_modes"].get(k, []), f"force.alpha_modes.{k}")
        if force["b_modes"]:
            raise ConfigError("force: give either b_modes or alpha_modes, not both")
    if force["kind"] == "thermostat" and (force["b_modes"] or force["alpha_modes"]):
        raise ConfigError("force: thermostats take lambda_modes only")
    if force["kind"] == "magnetic" and force["lambda_modes"]:
        raise ConfigError("force.lambda_modes: only valid for thermostats")
    params = {**EXPERIMENTS[exp], **cfg.get("params", {})}
    _reject_unknown(cfg.get("params", {}), EXPERIMENTS[exp], "params")
    for k, v in (overrides or {}).items():
        if k not in EXPERIMENTS[exp]:
            raise ConfigError(f"params.{k}: not a parameter of '{exp}'")
        if v is not None:
            params[k] = v
    seed = cfg.get("seed", 0)
    if not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        raise ConfigError("seed: must be a 64-bit non-negative integer")
    return {"version": SCHEMA_VERSION, "experiment": exp, "seed": seed, "surface": surf,
            "force": force, "params": params}


def load(path):
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def build_surface(resolved) -> ConformalSurface:
    s = resolved["surface"]
    phi = ModeField.from_list(s["phi_modes"], s["Lx"], s["Ly"])
    return ConformalSurface(float(s["Lx"]), float(s["Ly"]), s["Nx"], s["Ny"], phi)


def build_field(resolved, surface) -> ForceField:
    f = resolved["force"]
    Lx, Ly = surface.Lx, surface.Ly
    if f["kind"] == "thermostat":
        return ForceField.thermostat(surface, ModeField.from_list(f["lambda_modes"], Lx, Ly))
    if f["alpha_modes"] is not None:
        a = f["alpha_modes"]
        return ForceField.exact(surface, ModeField.from_list(a.get("alpha1", []), Lx, Ly),
                                ModeField.from_list(a.get("alpha2", []), Lx, Ly))
    return ForceField.magnetic(surface, ModeField.from_list(f["b_modes"], Lx, Ly))
