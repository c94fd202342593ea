import json

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings, strategies as st

from magray import config as cfgmod
from magray import storage
from magray.cli import main
from magray.geometry import ConfigError, ConformalSurface, ForceField
from magray.lifting import FiberFunction
from magray.tensors import random_pair, random_symtensor
from magray.xray import orbit_set

SMALL = {"surface": {"Nx": 16, "Ny": 16}}


@settings(max_examples=10, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(m=st.integers(0, 3), seed=st.integers(0, 2 ** 32 - 1))
def test_tensor_roundtrip(tmp_path, m, seed):
    s = ConformalSurface.flat(N=8)
    rng = np.random.default_rng(seed)
    path = tmp_path / f"pair{m}.bin"
    f = random_pair(s, m, rng, kmax=2)
    storage.save_tensor(path, f, s)
    g, meta = storage.load_tensor(path)
    assert meta["component_order"][0] == ("p:dx" if m == 1 else meta["component_order"][0])
    assert all(np.array_equal(a.comps, b.comps) for a, b in zip(f.parts(), g.parts()))
    T = random_symtensor(s, m, rng, kmax=2)
    storage.save_tensor(path, T, s)
    assert np.array_equal(storage.load_tensor(path)[0].comps, T.comps)


def test_fiber_roundtrip_and_size_check(tmp_path, rng):
    u = FiberFunction(rng.standard_normal((5, 8, 8)) + 1j * rng.standard_normal((5, 8, 8)))
    path = tmp_path / "u.bin"
    storage.save_fiber(path, u)
    assert np.array_equal(storage.load_fiber(path)[0].modes, u.modes)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(ConfigError):
        storage.load_fiber(path)


def test_tensor_size_mismatch(tmp_path, flat16, rng):
    path = tmp_path / "t.bin"
    storage.save_tensor(path, random_pair(flat16, 1, rng), flat16)
    meta = json.loads(storage.sidecar(path).read_text())
    meta["rank"] = 2
    storage.sidecar(path).write_text(json.dumps(meta))
    with pytest.raises(ConfigError):
        storage.load_tensor(path)


def test_component_labels():
    assert storage.component_labels(2) == ["dx^2", "dx dy", "dy^2"]
    assert storage.component_labels(0) == ["1"]


def test_orbit_roundtrip(tmp_path):
    s = ConformalSurface.flat(N=16)
    F = ForceField.magnetic(s)
    orbits = orbit_set(s, F, pmax=1, classes=[(1, 0), (1, 1)])
    path = tmp_path / "orbits.json"
    storage.save_orbits(path, orbits)
    back = storage.load_orbits(path, s, F)
    for a, b in zip(orbits, back):
        assert a.homotopy == b.homotopy
        assert np.allclose(a.trajectory.points, b.trajectory.points, atol=1e-12)


@pytest.mark.parametrize("cfg, fragment", [
    ({"bogus": 1}, "bogus"),
    ({"surface": {"Nx": 7}}, "surface.Nx"),
    ({"surface": {"phi_modes": [{"kx": 1, "amp": 0.1}]}}, "surface.phi_modes[0].amp"),
    ({"force": {"kind": "electric"}}, "force.kind"),
    ({"force": {"kind": "thermostat", "b_modes": [{"re": 1.0}]}}, "thermostats"),
    ({"params": {"pmax": 1, "speed": 2}}, "params.speed"),
    ({"seed": -1}, "seed"),
    ({"version": 2}, "version"),
])
def test_config_validation(cfg, fragment):
    with pytest.raises(ConfigError, match=fragment.replace("[", r"\[").replace("]", r"\]")):
        cfgmod.resolve(cfg, "orbits")


def test_config_defaults_and_builders():
    r = cfgmod.resolve({"force": {"alpha_modes": {"alpha1": [{"ky": 1, "re": 0.1}]}}}, "orbits",
                       {"pmax": 1, "tol": None})
    assert r["params"]["pmax"] == 1 and r["params"]["tol"] == 1e-8
    s = cfgmod.build_surface(r)
    F = cfgmod.build_field(r, s)
    assert F.is_exact()
    assert F.check_primitive() < 1e-12


def _write(tmp_path, name, obj):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    bad = _write(tmp_path, "bad.json", {"experiment": "simulate", "surfce": {}})
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "x.csv")]) == 2
    assert "surfce" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == 2
    assert main(["spectrum", "--config", _write(tmp_path, "s.json", SMALL), "--N", "64",
                 "--out", str(tmp_path / "s.csv")]) == 3
    thermo = {"force": {"kind": "thermostat", "lambda_modes": [{"re": 0.2}]}, **SMALL}
    assert main(["decompose", "--config", _write(tmp_path, "t.json", thermo),
                 "--out", str(tmp_path / "d.bin")]) == 2


def test_cli_simulate_writes_trajectory_and_manifest(tmp_path, capsys):
    out = tmp_path / "traj.csv"
    assert main(["simulate", "--config", _write(tmp_path, "c.json", SMALL), "--T", "1.0",
                 "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "t,x,y,theta,lift_x,lift_y"
    manifest = json.loads((tmp_path / "traj.csv.manifest.json").read_text())
    assert manifest["checksums"][str(out)] == storage.checksum(out)
    assert manifest["config"]["params"]["T"] == 1.0
    assert set(manifest["versions"]) >= {"magray", "numpy", "scipy"}


def test_cli_orbits_are_deterministic(tmp_path):
    cfg = _write(tmp_path, "o.json", {**SMALL, "force": {"b_modes": []}})
    sums = []
    for i, workers in enumerate(["1", "1", "2", "2"]):
        out = tmp_path / f"orbits{i}.json"
        assert main(["orbits", "--config", cfg, "--pmax", "1", "--workers", workers, "--out", str(out)]) == 0
        sums.append(storage.checksum(out))
    assert sums[0] == sums[1]
    assert sums[2] == sums[3]


def test_cli_decompose_and_xray_chain(tmp_path, capsys):
    # potential parts integrate to zero on closed orbits, so f and H have equal transforms
    s = ConformalSurface.flat(N=16)
    pair = tmp_path / "f.bin"
    storage.save_tensor(pair, random_pair(s, 1, np.random.default_rng(4), kmax=2), s)
    cfg = _write(tmp_path, "c.json", SMALL)
    assert main(["decompose", "--config", cfg, "--pair", str(pair), "--out", str(tmp_path / "h.bin")]) == 0
    assert json.loads(capsys.readouterr().out)["dmu_star_H_rel"] < 1e-8
    assert (tmp_path / "h_potential.bin").exists()
    orbits = tmp_path / "orbits.json"
    assert main(["orbits", "--config", cfg, "--pmax", "1", "--out", str(orbits)]) == 0
    tables = []
    for name in ("f.bin", "h.bin"):
        out = tmp_path / f"I_{name}.csv"
        assert main(["xray", "--orbits", str(orbits), "--pair", str(tmp_path / name), "--out", str(out)]) == 0
        tables.append(np.loadtxt(out, delimiter=",", skiprows=1, usecols=(0, 1, 2, 4)))
    assert len(tables[0]) == 8
    assert np.allclose(tables[0], tables[1], atol=1e-8)
