"""Curvature-type quantities along magnetic orbits.

For a constant field b on the flat torus every orbit is a circle of radius 1/b and
k_mu = 6 b^2.  The modified index form is positive on arcs shorter than
pi / sqrt(6 b^2) and becomes indefinite beyond that, in particular on a full circle.

Run with ``python3 demos/rigidity_quantities.py``.
"""
import numpy as np

from magray.dynamics import integrate
from magray.geometry import ConformalSurface, ForceField
from magray.rigidity import (NormalFieldAlongOrbit, kmu, modified_index_form, orbit_kbar,
                             random_normal_fields)

b = 0.5
surface = ConformalSurface.flat(N=16)
field = ForceField.magnetic(surface, b)
print("k_mu =", kmu(surface, field, (0.0, 0.0, 0.0)), " (6 b^2 =", 6 * b * b, ")")

circle = integrate(surface, field, (0.0, 0.0, 0.0), 2 * np.pi / b, 1e-3)
print("T * int k_mu^+ on the circle:", orbit_kbar(surface, field, circle), "=", 24 * np.pi ** 2)

threshold = np.pi / np.sqrt(6 * b * b)
rng = np.random.default_rng(1)
for length in (0.5 * threshold, 0.95 * threshold, 1.05 * threshold, 2 * np.pi / b):
    arc = integrate(surface, field, (0.0, 0.0, 0.0), length, 1e-3)
    vals = [modified_index_form(surface, field, arc, Z) for Z in random_normal_fields(arc.t, rng, 50)]
    lowest = modified_index_form(surface, field, arc, NormalFieldAlongOrbit.sine_series(arc.t, [1.0]))
    print(f"arc length {length:7.3f}  lowest sine mode {lowest:+.4f}  "
          f"min over 50 random fields {min(vals):+.4f}")
