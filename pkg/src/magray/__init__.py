"""Numerical laboratory for magnetic and thermostat flows on conformal tori: flows and
closed orbits, ray transforms, the potential/solenoidal decomposition of symmetric
tensor pairs, a truncated normal operator with symbol probes, and rigidity quantities.
"""
__version__ = "0.1.0"

from .geometry import ConfigError, ConformalSurface, DomainError, ForceField, ModeField
from .dynamics import PhasePoint, Trajectory, integrate, linearized_flow
from .tensors import SymTensorField, TensorPair, dmu, dmu_star, ps_decompose
from .lifting import FiberFunction, apply_generator, pullback, pushforward
from .xray import ClosedOrbit, HomotopyClass, find_closed_orbit, ray_transform, ray_transform_pair
from .normal_op import CutoffProfile, NormalOpConfig, normal_apply, symbol_probe
from .rigidity import NormalFieldAlongOrbit, index_form, kmu, modified_index_form

__all__ = [
    "ConfigError", "ConformalSurface", "DomainError", "ForceField", "ModeField",
    "PhasePoint", "Trajectory", "integrate", "linearized_flow",
    "SymTensorField", "TensorPair", "dmu", "dmu_star", "ps_decompose",
    "FiberFunction", "apply_generator", "pullback", "pushforward",
    "ClosedOrbit", "HomotopyClass", "find_closed_orbit", "ray_transform", "ray_transform_pair",
    "CutoffProfile", "NormalOpConfig", "normal_apply", "symbol_probe",
    "NormalFieldAlongOrbit", "index_form", "kmu", "modified_index_form",
]
