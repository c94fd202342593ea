"""File formats: raw little-endian float64 grids with JSON sidecars, CSV tables,
and JSON orbit lists.

A field stored at ``name.bin`` has its metadata at ``name.bin.json``.
"""
from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from .dynamics import integrate
from .geometry import ConfigError
from .lifting import FiberFunction
from .tensors import SymTensorField, TensorPair
from .xray import ClosedOrbit, HomotopyClass

LE_F64 = np.dtype("<f8")


def sidecar(path):
    return Path(str(path) + ".json")


def component_labels(m, prefix=""):
    """``dx^(m-k) dy^k`` labels in storage order."""
    out = []
    for k in range(m + 1):
        parts = [f"dx^{m - k}" if m - k > 1 else ("dx" if m - k == 1 else ""),
                 f"dy^{k}" if k > 1 else ("dy" if k == 1 else "")]
        label = " ".join(p for p in parts if p) or "1"
        out.append(prefix + label)
    return out


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def save_tensor(path, obj, surface):
    """Write a :class:`SymTensorField` or :class:`TensorPair` (real parts only)."""
    if isinstance(obj, TensorPair):
        parts, kind = obj.parts(), "pair"
        order = component_labels(obj.rank, "p:") + (component_labels(obj.rank - 1, "q:")
                                                    if obj.q is not None else [])
    else:
        parts, kind = [obj], "tensor"
        order = component_labels(obj.rank)
    data = np.concatenate([np.real(t.comps).astype(LE_F64).ravel() for t in parts])
    Path(path).write_bytes(data.tobytes())
    _write_json(sidecar(path), {"kind": kind, "rank": parts[0].rank, "Nx": surface.Nx,
                                "Ny": surface.Ny, "Lx": surface.Lx, "Ly": surface.Ly,
                                "component_order": order})


def load_tensor(path):
    """Read a tensor or pair; returns ``(object, metadata)``."""
    meta = json.loads(sidecar(path).read_text())
    for key in ("rank", "Nx", "Ny", "Lx", "Ly", "component_order"):
        if key not in meta:
            raise ConfigError(f"{sidecar(path)}: missing key '{key}'")
    data = np.frombuffer(Path(path).read_bytes(), dtype=LE_F64).astype(float)
    m, shape = int(meta["rank"]), (int(meta["Nx"]), int(meta["Ny"]))
    n = shape[0] * shape[1]
    if meta.get("kind", "pair") == "tensor":
        if data.size != (m + 1) * n:
            raise ConfigError(f"{path}: expected {(m + 1) * n} values, found {data.size}")
        return SymTensorField(m, data.reshape((m + 1,) + shape)), meta
    expected = (2 * m + 1 if m > 0 else 1) * n
    if data.size != expected:
        raise ConfigError(f"{path}: expected {expected} values, found {data.size}")
    return TensorPair.from_vector(data, m, shape), meta


def save_fiber(path, u: FiberFunction):
    """Stacked complex mode grids as interleaved (re, im) float64."""
    modes = np.ascontiguousarray(u.modes, dtype=complex)
    Path(path).write_bytes(modes.view(float).astype(LE_F64).tobytes())
    _write_json(sidecar(path), {"J": u.J, "Nx": modes.shape[1], "Ny": modes.shape[2],
                                "layout": "modes[j + J, ix, iy], interleaved re/im"})


def load_fiber(path):
    meta = json.loads(sidecar(path).read_text())
    J, nx, ny = int(meta["J"]), int(meta["Nx"]), int(meta["Ny"])
    data = np.frombuffer(Path(path).read_bytes(), dtype=LE_F64).astype(float)
    if data.size != 2 * (2 * J + 1) * nx * ny:
        raise ConfigError(f"{path}: size does not match sidecar")
    return FiberFunction(data.view(complex).reshape(2 * J + 1, nx, ny).copy()), meta


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_trajectory_csv(path, traj, surface):
    st = traj.states
    rows = zip(traj.t, st[:, 0], st[:, 1], st[:, 2], traj.lift[:, 0], traj.lift[:, 1])
    write_csv(path, ["t", "x", "y", "theta", "lift_x", "lift_y"], rows)


def orbits_to_json(orbits):
    return [{"class_p": o.homotopy.p, "class_q": o.homotopy.q, "period": o.period,
             "action": o.action, "closure_defect": o.closure_defect,
             "shooting_residual": o.shooting_residual, "start": [float(v) for v in o.start],
             "n_steps": len(o.trajectory) - 1} for o in orbits]


def save_orbits(path, orbits, context=None):
    """Orbit list plus, optionally, the surface / force blocks they were computed on."""
    data = {"orbits": orbits_to_json(orbits)}
    if context is not None:
        data["context"] = context
    _write_json(path, data)


def load_orbits(path, surface, field):
    """Rebuild orbits by re-integrating from the stored start points."""
    data = json.loads(Path(path).read_text())
    out = []
    for rec in data["orbits"]:
        T, n = float(rec["period"]), int(rec["n_steps"])
        traj = integrate(surface, field, rec["start"], T, T / n)
        out.append(ClosedOrbit(traj, T, HomotopyClass(int(rec["class_p"]), int(rec["class_q"])),
                               float(rec["closure_defect"]), float(rec["shooting_residual"]),
                               rec.get("action")))
    return out


def checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
