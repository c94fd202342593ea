"""Command-line experiment runner.

Every run validates its configuration, derives all randomness from the seed, writes
its artifacts, and records a manifest ``<out>.manifest.json`` holding the resolved
config, library versions, wall time, result numbers and SHA-256 checksums.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 nonconvergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import config as cfgmod
from . import storage
from .dynamics import IntegrationError, integrate
from .geometry import ConfigError, DomainError, UnsupportedOperation
from .lifting import BandLimitError
from .normal_op import CutoffProfile, NormalOpConfig, injectivity_spectrum, normal_apply, symbol_probe
from .rigidity import index_form, modified_index_form, orbit_kbar, random_normal_fields
from .tensors import RankError, SolverError, dmu, dmu_star, norm, ps_decompose, random_pair
from .xray import OrbitSearchError, orbit_set, ray_transform_pair, stability_experiment

log = logging.getLogger("magray")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NONCONVERGENCE = 0, 2, 3, 4

DEFAULT_OUT = {"simulate": "traj.csv", "orbits": "orbits.json", "xray": "transforms.csv",
               "decompose": "decomposition.bin", "normal": "normal.bin",
               "probe-symbol": "symbol.csv", "spectrum": "sv.csv", "rigidity": "rigidity.csv",
               "stability": "stability.csv"}


def _rng(resolved):
    return np.random.default_rng(resolved["seed"])


def _context(resolved):
    surface = cfgmod.build_surface(resolved)
    return surface, cfgmod.build_field(resolved, surface)


def _input_pair(resolved, surface, rng):
    p = resolved["params"]
    if p.get("pair"):
        pair, meta = storage.load_tensor(p["pair"])
        if (meta["Nx"], meta["Ny"]) != surface.shape:
            raise ConfigError(f"params.pair: grid {meta['Nx']}x{meta['Ny']} does not match the surface")
        return pair
    return random_pair(surface, int(p["m"]), rng, kmax=int(p.get("kmax", 3)))


def _gnuplot(path, title, using, logscale=""):
    script = (f"# plot {Path(path).name}\nset datafile separator ','\nset key autotitle columnhead\n"
              f"{logscale}set title '{title}'\nplot '{Path(path).name}' using {using} with linespoints\n")
    gp = Path(str(path) + ".gp")
    gp.write_text(script)
    return gp


# -- experiments -------------------------------------------------------------

def run_simulate(resolved, out, workers):
    surface, field = _context(resolved)
    p = resolved["params"]
    traj = integrate(surface, field, (p["x0"], p["y0"], p["theta0"]), float(p["T"]), float(p["step"]))
    storage.write_trajectory_csv(out, traj, surface)
    return [out], {"n_samples": len(traj), "end": [float(v) for v in traj.points[-1]]}


def _orbit_chunk(args):
    resolved, classes = args
    surface, field = _context(resolved)
    p = resolved["params"]
    return orbit_set(surface, field, n_nodes=int(p.get("n_nodes", 64)), tol=float(p.get("tol", 1e-8)),
                     step=float(p.get("step", 1e-2)), method=p.get("method", "auto"), classes=classes)


def _find_orbits(resolved, workers):
    pmax = int(resolved["params"]["pmax"])
    classes = [(a, b) for a in range(-pmax, pmax + 1) for b in range(-pmax, pmax + 1) if (a, b) != (0, 0)]
    if workers <= 1:
        orbits = _orbit_chunk((resolved, classes))
    else:
        chunks = [classes[i::workers] for i in range(workers)]
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_orbit_chunk, [(resolved, c) for c in chunks if c]))
        orbits = [o for part in parts for o in part]
    orbits.sort(key=lambda o: (o.homotopy.p, o.homotopy.q))
    if not orbits:
        raise OrbitSearchError("no closed orbit found in any class")
    return orbits


def run_orbits(resolved, out, workers):
    orbits = _find_orbits(resolved, workers)
    storage.save_orbits(out, orbits, {"surface": resolved["surface"], "force": resolved["force"]})
    return [out], {"n_orbits": len(orbits),
                   "max_closure_defect": max(o.closure_defect for o in orbits)}


def _orbits_and_context(resolved, path):
    if not path:
        raise ConfigError("params.orbits: an orbits file is required")
    surface, field = _context(resolved)
    return surface, field, storage.load_orbits(path, surface, field)


def run_xray(resolved, out, workers):
    surface, field, orbits = _orbits_and_context(resolved, resolved["params"]["orbits"])
    if not resolved["params"]["pair"]:
        raise ConfigError("params.pair: a pair file is required")
    pair = _input_pair(resolved, surface, _rng(resolved))
    rows = [(o.homotopy.p, o.homotopy.q, o.period, "" if o.action is None else o.action,
             ray_transform_pair(surface, field, o, pair)) for o in orbits]
    storage.write_csv(out, ["class_p", "class_q", "period", "action", "I_m"], rows)
    return [out], {"max_abs_I_m": max(abs(r[-1]) for r in rows)}


def run_decompose(resolved, out, workers):
    surface, field = _context(resolved)
    f = _input_pair(resolved, surface, _rng(resolved))
    dec = ps_decompose(surface, field, f, tol=float(resolved["params"]["tol"]))
    pot = Path(str(out).replace(".bin", "") + "_potential.bin")
    storage.save_tensor(out, dec.H, surface)
    storage.save_tensor(pot, dec.P, surface)
    fn = norm(surface, f)
    rel = norm(surface, dmu_star(surface, field, dec.H)) / fn if fn else 0.0
    return [out, storage.sidecar(out), pot, storage.sidecar(pot)], {
        "dmu_star_H_rel": rel, "cg_iterations": dec.iterations, "cg_residual": dec.residual,
        "reconstruction_rel": norm(surface, dmu(surface, field, dec.P) + dec.H - f) / fn if fn else 0.0}


def _normal_cfg(p, **extra):
    return NormalOpConfig(CutoffProfile(float(p["eps"]), int(p["n_t"])), n_theta=int(p["n_theta"]),
                          **extra)


def run_normal(resolved, out, workers):
    surface, field = _context(resolved)
    p = resolved["params"]
    f = _input_pair(resolved, surface, _rng(resolved))
    res = normal_apply(surface, field, f, _normal_cfg(p, include_mean=bool(p["include_mean"])))
    storage.save_tensor(out, res, surface)
    return [out, storage.sidecar(out)], {"input_norm": norm(surface, f), "output_norm": norm(surface, res)}


def run_probe_symbol(resolved, out, workers):
    surface, field = _context(resolved)
    p = resolved["params"]
    res = symbol_probe(surface, field, int(p["m"]), (int(p["kx"]), int(p["ky"])), _normal_cfg(p),
                       n_points=int(p["n_points"]))
    labels = {}
    rows = []
    for r in res["rows"]:
        rank = int(r["block"].split("<-")[0])
        lab = labels.setdefault(rank, storage.component_labels(rank))[r["component"]]
        rows.append((f"{r['block']}[{lab}]", r["measured"].real, r["measured"].imag, r["predicted"],
                     r["rel_err"]))
    storage.write_csv(out, ["component", "re_measured", "im_measured", "predicted", "rel_err"], rows)
    return [out], {"max_rel_err": res["max_rel_err"], "off_diagonal": res["off_diagonal"],
                   "truncated_scalar_reference": res["scalar_reference"]}


def run_spectrum(resolved, out, workers):
    surface, field = _context(resolved)
    p = resolved["params"]
    res = injectivity_spectrum(surface, field, int(p["m"]), int(p["N"]), _normal_cfg(p))
    storage.write_csv(out, ["index", "singular_value"], enumerate(res["singular_values"]))
    gp = _gnuplot(out, "solenoidal singular values", "1:2", "set logscale y\n")
    return [out, gp], {k: res[k] for k in ("smallest_solenoidal", "coercivity", "solenoidal_dim")}


def run_rigidity(resolved, out, workers):
    surface, field, orbits = _orbits_and_context(resolved, resolved["params"]["orbits"])
    p = resolved["params"]
    rng = _rng(resolved)
    rows, mod_min = [], np.inf
    for o in orbits:
        Zs = random_normal_fields(o.trajectory.t, rng, int(p["n_fields"]), int(p["modes"]))
        idx = min(index_form(surface, field, o, Z) for Z in Zs)
        mod_min = min(mod_min, min(modified_index_form(surface, field, o, Z) for Z in Zs))
        rows.append((f"({o.homotopy.p},{o.homotopy.q})", o.period, orbit_kbar(surface, field, o), idx))
    storage.write_csv(out, ["class", "period", "kbar_contrib", "index_min"], rows)
    return [out], {"kbar_lower": max(r[2] for r in rows), "index_min": min(r[3] for r in rows),
                   "modified_index_min": float(mod_min)}


def stability_scatter(surface, field, orbits, m, n_samples, eps_min, eps_max, rng, kmax=3, tol=1e-10):
    """Random ``f = D_mu a + eps * h`` (``h`` solenoidal) with log-spaced ``eps``.

    Returns rows ``(eps, sup_transform, sol_norm)`` and the Spearman rank correlation
    of the last two columns.
    """
    from scipy.stats import spearmanr

    rows = []
    for eps in np.geomspace(eps_min, eps_max, n_samples):
        a = random_pair(surface, m - 1, rng, kmax=kmax)
        h = ps_decompose(surface, field, random_pair(surface, m, rng, kmax=kmax), tol=tol).H
        h = h * (1.0 / norm(surface, h))
        f = dmu(surface, field, a) + h * eps
        rep = stability_experiment(surface, field, orbits, f, tol)
        rows.append((float(eps), rep["sup_transform"], rep["sol_norm"]))
    rho = spearmanr([r[1] for r in rows], [r[2] for r in rows]).statistic
    return rows, float(rho)


def run_stability(resolved, out, workers):
    surface, field = _context(resolved)
    p = resolved["params"]
    orbits = _find_orbits(resolved, workers)
    rows, rho = stability_scatter(surface, field, orbits, int(p["m"]), int(p["n_samples"]),
                                  float(p["eps_min"]), float(p["eps_max"]), _rng(resolved),
                                  int(p["kmax"]), float(p["tol"]))
    storage.write_csv(out, ["eps", "sup_transform", "sol_norm"], rows)
    gp = _gnuplot(out, "sup transform vs solenoidal norm", "3:2", "set logscale xy\n")
    return [out, gp], {"spearman": rho, "n_orbits": len(orbits)}


RUNNERS = {"simulate": run_simulate, "orbits": run_orbits, "xray": run_xray,
           "decompose": run_decompose, "normal": run_normal, "probe-symbol": run_probe_symbol,
           "spectrum": run_spectrum, "rigidity": run_rigidity, "stability": run_stability}


def run(resolved, out, workers=1):
    """Execute a resolved configuration and write the manifest; returns the manifest."""
    start = time.perf_counter()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    files, results = RUNNERS[resolved["experiment"]](resolved, out, workers)
    manifest = {
        "config": resolved,
        "versions": {"magray": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "wall_time": time.perf_counter() - start,
        "workers": workers,
        "results": results,
        "checksums": {str(f): storage.checksum(f) for f in files},
    }
    mpath = Path(str(out) + ".manifest.json")
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable) + "\n")
    return manifest


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not serializable: {type(obj).__name__}")


# -- argument parsing --------------------------------------------------------

_FLAGS = {
    "simulate": [("--x0", float), ("--y0", float), ("--theta0", float), ("--T", float), ("--step", float)],
    "orbits": [("--pmax", int), ("--n-nodes", int), ("--tol", float), ("--step", float),
               ("--method", str)],
    "xray": [("--orbits", str), ("--pair", str)],
    "decompose": [("--pair", str), ("--m", int), ("--tol", float)],
    "normal": [("--pair", str), ("--m", int), ("--eps", float), ("--n-t", int), ("--n-theta", int)],
    "probe-symbol": [("--m", int), ("--kx", int), ("--ky", int), ("--eps", float), ("--n-t", int),
                     ("--n-theta", int)],
    "spectrum": [("--N", int), ("--m", int), ("--eps", float), ("--n-t", int), ("--n-theta", int)],
    "rigidity": [("--orbits", str), ("--n-fields", int)],
    "stability": [("--pmax", int), ("--m", int), ("--n-samples", int)],
}


def build_parser():
    parser = argparse.ArgumentParser(prog="magray", description="Magnetic ray transform experiments.")
    parser.add_argument("--version", action="version", version=f"magray {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _FLAGS.items():
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON configuration file")
        sp.add_argument("--out", help=f"output file (default {DEFAULT_OUT[name]})")
        sp.add_argument("--workers", type=int, default=1)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--verbose", action="store_true")
        for flag, typ in flags:
            sp.add_argument(flag, type=typ, dest=flag[2:].replace("-", "_"))
    return parser


def _orbit_file_config(path):
    """Surface / force blocks stored alongside an orbit list, if any."""
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"params.orbits: cannot read {path} ({exc})") from None
    return data.get("context", {})


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = cfgmod.load(args.config) if args.config else {}
        overrides = {k[0][2:].replace("-", "_"): getattr(args, k[0][2:].replace("-", "_"))
                     for k in _FLAGS[args.command]}
        orbits_path = overrides.get("orbits") or raw.get("params", {}).get("orbits")
        if orbits_path and not args.config:
            raw = {**_orbit_file_config(orbits_path)}
        if args.seed is not None:
            raw["seed"] = args.seed
        resolved = cfgmod.resolve(raw, args.command, overrides)
        if args.workers < 1:
            raise ConfigError("--workers: must be at least 1")
        out = args.out or DEFAULT_OUT[args.command]
        log.info("running %s -> %s", args.command, out)
        manifest = run(resolved, out, args.workers)
        log.info("results: %s", manifest["results"])
        print(json.dumps(manifest["results"], sort_keys=True, default=_jsonable))
        return EXIT_OK
    except (ConfigError, RankError, UnsupportedOperation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, OrbitSearchError) as exc:
        print(f"nonconvergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (IntegrationError, DomainError, BandLimitError, FloatingPointError,
            np.linalg.LinAlgError, MemoryError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
